// DOM bootstrap: binds the controller to the page.

import { ApiClient } from "./api.js";
import { UiController, ViewHooks } from "./app.js";
import {
  drawOnsetTicks,
  drawProbabilityCurve,
  drawSpectrogram,
  drawTimeAxis,
} from "./render.js";
import { SpectrogramPayload, TranscribeResponse } from "./types.js";

const AXIS_STRIP_PX = 16; // clicks here seek playback instead of toggling

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing #${id}`);
  }
  return node as T;
}

function main(): void {
  const trackSelect = el<HTMLSelectElement>("track-select");
  const targetInput = el<HTMLInputElement>("target-label");
  const banner = el<HTMLDivElement>("banner");
  const markerCount = el<HTMLSpanElement>("marker-count");
  const transcribeBtn = el<HTMLButtonElement>("transcribe-btn");
  const cancelBtn = el<HTMLButtonElement>("cancel-btn");
  const exportBtn = el<HTMLButtonElement>("export-btn");
  const importInput = el<HTMLInputElement>("import-input");
  const audio = el<HTMLAudioElement>("audio");
  const specCanvas = el<HTMLCanvasElement>("spectrogram");
  const overlayCanvas = el<HTMLCanvasElement>("overlay");
  const curveCanvas = el<HTMLCanvasElement>("curve");

  let spectrogram: SpectrogramPayload | null = null;
  let result: TranscribeResponse | null = null;
  let markers: number[] = [];

  const controller = new UiController(new ApiClient(""), {
    setTracks(tracks) {
      trackSelect.innerHTML = "";
      for (const t of tracks) {
        const option = document.createElement("option");
        option.value = t.id;
        option.textContent = `${t.id} (${t.duration.toFixed(1)}s, ${t.classes.length} classes)`;
        trackSelect.appendChild(option);
      }
      if (tracks.length > 0) {
        void controller.selectTrack(tracks[0].id);
      }
    },
    setBanner(message) {
      banner.textContent = message ?? "";
      banner.style.display = message ? "block" : "none";
    },
    setMarkers(times, canTranscribe) {
      markers = times;
      markerCount.textContent = String(times.length);
      transcribeBtn.disabled = !canTranscribe;
      redrawOverlay();
    },
    setResult(response) {
      result = response;
      redrawCurve();
      redrawOverlay();
    },
    setBusy(busy) {
      transcribeBtn.textContent = busy ? "transcribing…" : "transcribe";
      cancelBtn.disabled = !busy;
    },
    setAudioSource(url) {
      audio.src = url;
    },
    setSpectrogram(payload) {
      spectrogram = payload;
      redrawSpectrogram();
      redrawCurve();
      redrawOverlay();
    },
  } satisfies ViewHooks);

  function redrawSpectrogram(): void {
    const ctx = specCanvas.getContext("2d");
    if (!ctx) return;
    ctx.clearRect(0, 0, specCanvas.width, specCanvas.height);
    if (spectrogram) {
      drawSpectrogram(ctx, spectrogram);
      drawTimeAxis(ctx, controller.duration);
    }
  }

  function redrawOverlay(): void {
    const ctx = overlayCanvas.getContext("2d");
    if (!ctx) return;
    ctx.clearRect(0, 0, overlayCanvas.width, overlayCanvas.height);
    if (result) {
      drawOnsetTicks(ctx, result.onsets, controller.duration, "prediction");
    }
    drawOnsetTicks(ctx, markers, controller.duration, "support");
  }

  function redrawCurve(): void {
    const ctx = curveCanvas.getContext("2d");
    if (!ctx) return;
    ctx.clearRect(0, 0, curveCanvas.width, curveCanvas.height);
    if (result) {
      drawProbabilityCurve(ctx, result, controller.duration);
      drawOnsetTicks(ctx, result.onsets, controller.duration, "prediction");
    }
  }

  overlayCanvas.addEventListener("click", (event) => {
    const rect = overlayCanvas.getBoundingClientRect();
    const frac = (event.clientX - rect.left) / rect.width;
    const time = frac * controller.duration;
    if (event.clientY - rect.top > rect.height - AXIS_STRIP_PX) {
      audio.currentTime = time;
      void audio.play();
      return;
    }
    controller.clickAt(time);
  });

  trackSelect.addEventListener("change", () => {
    void controller.selectTrack(trackSelect.value);
  });
  targetInput.addEventListener("input", () => {
    controller.setTargetLabel(targetInput.value);
  });
  transcribeBtn.addEventListener("click", () => {
    void controller.runTranscription();
  });
  cancelBtn.addEventListener("click", () => controller.cancel());
  exportBtn.addEventListener("click", () => {
    const blob = new Blob([controller.exportSelection()], { type: "application/json" });
    const link = document.createElement("a");
    link.href = URL.createObjectURL(blob);
    link.download = `${controller.state.trackId ?? "selection"}.json`;
    link.click();
    URL.revokeObjectURL(link.href);
  });
  importInput.addEventListener("change", async () => {
    const file = importInput.files?.[0];
    if (file) {
      controller.importSelection(await file.text());
      if (controller.state.trackId) {
        trackSelect.value = controller.state.trackId;
      }
    }
    importInput.value = "";
  });

  void controller.init();
}

main();
