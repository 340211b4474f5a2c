import { describe, expect, it } from "vitest";

import { SelectionState } from "../src/state.js";

describe("SelectionState", () => {
  it("adds markers and keeps them sorted", () => {
    const s = new SelectionState();
    s.setTrack("t1");
    s.toggleExample(2.0);
    s.toggleExample(0.5);
    s.toggleExample(1.25);
    expect(s.positiveTimes).toEqual([0.5, 1.25, 2.0]);
    expect(s.markerCount).toBe(3);
  });

  it("click within 10 ms removes instead of duplicating", () => {
    const s = new SelectionState();
    s.setTrack("t1");
    expect(s.toggleExample(1.0)).toBe("added");
    expect(s.toggleExample(1.004)).toBe("removed");
    expect(s.positiveTimes).toEqual([]);
    expect(s.toggleExample(1.0)).toBe("added");
    expect(s.toggleExample(1.02)).toBe("added"); // outside the merge window
    expect(s.markerCount).toBe(2);
  });

  it("transcribe is enabled iff at least one marker on a track", () => {
    const s = new SelectionState();
    expect(s.canTranscribe).toBe(false);
    s.setTrack("t1");
    expect(s.canTranscribe).toBe(false);
    s.toggleExample(0.4);
    expect(s.canTranscribe).toBe(true);
  });

  it("switching tracks clears markers and results", () => {
    const s = new SelectionState();
    s.setTrack("t1");
    s.toggleExample(1.0);
    s.lastResponse = {
      track_id: "t1",
      target_label: "",
      probabilities: [0.5],
      hop_seconds: 0.01,
      onsets: [],
      positive_times: [1.0],
    };
    s.setTrack("t2");
    expect(s.positiveTimes).toEqual([]);
    expect(s.lastResponse).toBeNull();
    s.setTrack("t2"); // same track: no-op
    s.toggleExample(0.2);
    s.setTrack("t2");
    expect(s.positiveTimes).toEqual([0.2]);
  });

  it("export/import round-trips markers exactly", () => {
    const s = new SelectionState();
    s.setTrack("kit06_track01");
    s.targetLabel = "snare";
    for (const t of [0.51, 1.33, 2.25, 3.875, 7.02]) {
      s.toggleExample(t);
    }
    const text = s.exportJson();
    const restored = new SelectionState();
    restored.importJson(text);
    expect(restored.trackId).toBe("kit06_track01");
    expect(restored.targetLabel).toBe("snare");
    expect(restored.positiveTimes).toEqual(s.positiveTimes);
    expect(restored.exportJson()).toBe(text);
  });

  it("rejects malformed imports", () => {
    const s = new SelectionState();
    expect(() => s.importJson("{}")).toThrow();
    expect(() => s.importJson('{"trackId":"t","positiveTimes":[-1]}')).toThrow();
    expect(() => s.importJson("not json")).toThrow();
  });
});
