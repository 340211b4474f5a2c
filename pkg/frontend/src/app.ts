// Headless controller for the selection/transcribe/review loop. All DOM
// concerns live behind ViewHooks so the loop is testable against a mock
// service.

import { ApiClient, ApiError } from "./api.js";
import { SelectionState } from "./state.js";
import { SpectrogramPayload, TrackInfo, TranscribeResponse } from "./types.js";

export interface ViewHooks {
  setTracks(tracks: TrackInfo[]): void;
  setBanner(message: string | null): void;
  setMarkers(times: number[], canTranscribe: boolean): void;
  setResult(response: TranscribeResponse | null): void;
  setBusy(busy: boolean): void;
  setAudioSource(url: string): void;
  setSpectrogram(payload: SpectrogramPayload | null): void;
}

export class UiController {
  readonly state = new SelectionState();
  tracks: TrackInfo[] = [];
  spectrogram: SpectrogramPayload | null = null;
  duration = 0;

  constructor(
    private api: ApiClient,
    private view: ViewHooks,
  ) {}

  async init(): Promise<void> {
    try {
      this.tracks = await this.api.listTracks();
      this.view.setTracks(this.tracks);
      this.view.setBanner(null);
    } catch (err) {
      this.view.setBanner(describe(err));
    }
  }

  async selectTrack(trackId: string): Promise<void> {
    const info = this.tracks.find((t) => t.id === trackId);
    this.state.setTrack(trackId);
    this.duration = info?.duration ?? 0;
    this.view.setResult(null);
    this.view.setMarkers([], false);
    this.view.setAudioSource(this.api.audioUrl(trackId));
    try {
      this.spectrogram = await this.api.spectrogram(trackId);
      this.view.setSpectrogram(this.spectrogram);
      this.view.setBanner(null);
    } catch (err) {
      this.spectrogram = null;
      this.view.setSpectrogram(null);
      this.view.setBanner(describe(err));
    }
  }

  /** A click on the spectrogram at `time` seconds toggles a marker there. */
  clickAt(time: number): void {
    if (this.state.trackId === null) {
      return;
    }
    const snapped = this.snapToFrame(time);
    this.state.toggleExample(snapped);
    this.view.setMarkers([...this.state.positiveTimes], this.state.canTranscribe);
  }

  snapToFrame(time: number): number {
    const hop = this.spectrogram?.source_hop_seconds ?? 0.01;
    return Math.round(time / hop) * hop;
  }

  setTargetLabel(label: string): void {
    this.state.targetLabel = label;
  }

  async runTranscription(): Promise<TranscribeResponse | null> {
    if (!this.state.canTranscribe || this.state.trackId === null) {
      return null;
    }
    this.view.setBusy(true);
    try {
      const response = await this.api.transcribe({
        track_id: this.state.trackId,
        positive_times: [...this.state.positiveTimes],
        target_label: this.state.targetLabel || undefined,
      });
      this.state.lastResponse = response;
      this.view.setResult(response);
      this.view.setBanner(null);
      return response;
    } catch (err) {
      if (isAbort(err)) {
        return null; // superseded by a newer request
      }
      this.view.setBanner(describe(err));
      return null;
    } finally {
      this.view.setBusy(false);
    }
  }

  cancel(): void {
    this.api.cancel();
  }

  exportSelection(): string {
    return this.state.exportJson();
  }

  importSelection(text: string): void {
    try {
      this.state.importJson(text);
      this.view.setMarkers([...this.state.positiveTimes], this.state.canTranscribe);
      this.view.setResult(null);
      this.view.setBanner(null);
    } catch (err) {
      this.view.setBanner(`import failed: ${describe(err)}`);
    }
  }
}

function isAbort(err: unknown): boolean {
  return err instanceof DOMException && err.name === "AbortError";
}

function describe(err: unknown): string {
  if (err instanceof ApiError) {
    return `${err.code}: ${err.message}`;
  }
  return err instanceof Error ? err.message : String(err);
}
