// The full selection loop against the mock service fixture: pick examples,
// transcribe, review, refine, re-run.

import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { UiController, ViewHooks } from "../src/app.js";
import { SpectrogramPayload, TrackInfo, TranscribeResponse } from "../src/types.js";
import { mockService } from "./mock_service.js";

function recordingView() {
  const seen = {
    tracks: [] as TrackInfo[],
    banner: null as string | null,
    markers: [] as number[],
    canTranscribe: false,
    result: null as TranscribeResponse | null,
    spectrogram: null as SpectrogramPayload | null,
    audioUrl: "",
    busyStates: [] as boolean[],
  };
  const view: ViewHooks = {
    setTracks: (tracks) => void (seen.tracks = tracks),
    setBanner: (message) => void (seen.banner = message),
    setMarkers: (times, can) => {
      seen.markers = times;
      seen.canTranscribe = can;
    },
    setResult: (response) => void (seen.result = response),
    setBusy: (busy) => void seen.busyStates.push(busy),
    setAudioSource: (url) => void (seen.audioUrl = url),
    setSpectrogram: (payload) => void (seen.spectrogram = payload),
  };
  return { seen, view };
}

async function readyController(options = {}) {
  const { fetchImpl, requests } = mockService(options);
  const { seen, view } = recordingView();
  const controller = new UiController(new ApiClient("", fetchImpl), view);
  await controller.init();
  await controller.selectTrack("trk_a");
  return { controller, seen, requests };
}

describe("selection loop", () => {
  it("selecting a track fetches its spectrogram and audio url", async () => {
    const { seen } = await readyController();
    expect(seen.tracks.length).toBe(2);
    expect(seen.spectrogram?.n_frames).toBe(400);
    expect(seen.audioUrl).toContain("/api/tracks/trk_a/audio");
    expect(seen.banner).toBeNull();
  });

  it("five marker clicks enable transcription and the request body carries exactly those times", async () => {
    const { controller, seen, requests } = await readyController();
    const times = [0.5, 1.0, 1.5, 2.0, 2.5];
    for (const t of times) {
      controller.clickAt(t);
    }
    expect(seen.markers.length).toBe(5);
    expect(seen.canTranscribe).toBe(true);

    const response = await controller.runTranscription();
    expect(response).not.toBeNull();
    const posted = requests.filter((r) => r.path === "/api/transcribe");
    expect(posted.length).toBe(1);
    expect((posted[0].body as { positive_times: number[] }).positive_times).toEqual(times);
  });

  it("returned probabilities and onsets reach the view for rendering", async () => {
    const { controller, seen } = await readyController();
    controller.clickAt(0.5);
    controller.clickAt(1.5);
    await controller.runTranscription();
    expect(seen.result?.probabilities.length).toBe(400);
    expect(seen.result?.onsets).toEqual([0.5, 1.5]);
    expect(seen.busyStates).toEqual([true, false]);
  });

  it("toggle removes a marker and a re-run posts the updated set", async () => {
    const { controller, requests } = await readyController();
    controller.clickAt(0.5);
    controller.clickAt(1.0);
    await controller.runTranscription();
    controller.clickAt(1.004); // within 10 ms of an existing marker: removal
    controller.clickAt(2.0);
    await controller.runTranscription();
    const posted = requests.filter((r) => r.path === "/api/transcribe");
    expect(posted.length).toBe(2);
    expect((posted[1].body as { positive_times: number[] }).positive_times).toEqual([0.5, 2.0]);
  });

  it("clicks snap to the 10 ms frame grid", async () => {
    const { controller, seen } = await readyController();
    controller.clickAt(0.5031);
    expect(seen.markers).toEqual([0.5]);
  });

  it("service errors surface as a banner, not a crash", async () => {
    const { controller, seen } = await readyController({
      failTranscribe: { status: 409, code: "model_loading", message: "retry shortly" },
    });
    controller.clickAt(0.5);
    const response = await controller.runTranscription();
    expect(response).toBeNull();
    expect(seen.banner).toContain("model_loading");
  });

  it("selection export/import round-trips through the controller", async () => {
    const { controller } = await readyController();
    controller.setTargetLabel("snare");
    for (const t of [0.5, 1.0, 1.5]) {
      controller.clickAt(t);
    }
    const text = controller.exportSelection();

    const { controller: fresh, seen: freshSeen } = await readyController();
    fresh.importSelection(text);
    expect(fresh.state.trackId).toBe("trk_a");
    expect(fresh.state.targetLabel).toBe("snare");
    expect(fresh.state.positiveTimes).toEqual([0.5, 1.0, 1.5]);
    expect(freshSeen.canTranscribe).toBe(true);
    expect(fresh.exportSelection()).toBe(text);
  });

  it("switching tracks clears the selection", async () => {
    const { controller, seen } = await readyController();
    controller.clickAt(0.5);
    await controller.selectTrack("trk_b");
    expect(controller.state.positiveTimes).toEqual([]);
    expect(seen.canTranscribe).toBe(false);
  });
});
