// Example-selection state: the user's picked onset times for one track.

import { TranscribeResponse } from "./types.js";

/** Two clicks within this distance (seconds) address the same marker. */
export const MARKER_MERGE_SECONDS = 0.01;

export interface SelectionSnapshot {
  trackId: string;
  targetLabel: string;
  positiveTimes: number[];
}

export class SelectionState {
  trackId: string | null = null;
  targetLabel = "";
  positiveTimes: number[] = [];
  lastResponse: TranscribeResponse | null = null;

  /** Switching tracks discards markers and results. */
  setTrack(trackId: string): void {
    if (trackId !== this.trackId) {
      this.trackId = trackId;
      this.positiveTimes = [];
      this.lastResponse = null;
    }
  }

  /**
   * Add a marker at `time`, or remove the existing one within 10 ms.
   * Returns "added" or "removed".
   */
  toggleExample(time: number): "added" | "removed" {
    const hit = this.positiveTimes.findIndex(
      (t) => Math.abs(t - time) <= MARKER_MERGE_SECONDS,
    );
    if (hit >= 0) {
      this.positiveTimes.splice(hit, 1);
      return "removed";
    }
    this.positiveTimes.push(time);
    this.positiveTimes.sort((a, b) => a - b);
    return "added";
  }

  get markerCount(): number {
    return this.positiveTimes.length;
  }

  get canTranscribe(): boolean {
    return this.trackId !== null && this.positiveTimes.length >= 1;
  }

  exportJson(): string {
    const snapshot: SelectionSnapshot = {
      trackId: this.trackId ?? "",
      targetLabel: this.targetLabel,
      positiveTimes: [...this.positiveTimes],
    };
    return JSON.stringify(snapshot, null, 2);
  }

  importJson(text: string): void {
    const parsed = JSON.parse(text) as SelectionSnapshot;
    if (typeof parsed.trackId !== "string" || !Array.isArray(parsed.positiveTimes)) {
      throw new Error("not a selection export");
    }
    for (const t of parsed.positiveTimes) {
      if (typeof t !== "number" || !isFinite(t) || t < 0) {
        throw new Error(`bad positive time ${t}`);
      }
    }
    this.trackId = parsed.trackId;
    this.targetLabel = parsed.targetLabel ?? "";
    this.positiveTimes = [...parsed.positiveTimes].sort((a, b) => a - b);
    this.lastResponse = null;
  }
}
