// Canvas drawing for the spectrogram, probability curve, and onset marks.
// Everything draws through the Canvas2D subset below so tests can pass a
// recording fake instead of a real context.

import { SpectrogramPayload, TranscribeResponse } from "./types.js";

export interface Canvas2D {
  canvas: { width: number; height: number };
  fillStyle: string | CanvasGradient;
  strokeStyle: string;
  lineWidth: number;
  globalAlpha: number;
  fillRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  stroke(): void;
  fillText(text: string, x: number, y: number): void;
}

/** Viridis-ish three-stop ramp; input 0..1. */
export function heatColor(v: number): string {
  const x = Math.max(0, Math.min(1, v));
  const stops: Array<[number, number, number]> = [
    [68, 1, 84],
    [33, 145, 140],
    [253, 231, 37],
  ];
  const pos = x * (stops.length - 1);
  const i = Math.min(Math.floor(pos), stops.length - 2);
  const frac = pos - i;
  const mix = stops[i].map((c, k) => Math.round(c + frac * (stops[i + 1][k] - c)));
  return `rgb(${mix[0]},${mix[1]},${mix[2]})`;
}

export function timeToX(time: number, durationSeconds: number, width: number): number {
  return durationSeconds > 0 ? (time / durationSeconds) * width : 0;
}

export function drawSpectrogram(ctx: Canvas2D, spec: SpectrogramPayload): void {
  const { width, height } = ctx.canvas;
  const frames = spec.values.length;
  if (frames === 0) {
    return;
  }
  let lo = Infinity;
  let hi = -Infinity;
  for (const row of spec.values) {
    for (const v of row) {
      if (v < lo) lo = v;
      if (v > hi) hi = v;
    }
  }
  const span = hi - lo || 1;
  const colWidth = width / frames;
  const cellHeight = height / spec.n_mels;
  for (let f = 0; f < frames; f++) {
    const row = spec.values[f];
    for (let m = 0; m < spec.n_mels; m++) {
      ctx.fillStyle = heatColor((row[m] - lo) / span);
      // mel 0 at the bottom
      ctx.fillRect(f * colWidth, height - (m + 1) * cellHeight, colWidth + 0.5, cellHeight + 0.5);
    }
  }
}

export function drawTimeAxis(
  ctx: Canvas2D,
  durationSeconds: number,
  tickEvery = 1.0,
): void {
  const { width, height } = ctx.canvas;
  ctx.strokeStyle = "rgba(255,255,255,0.6)";
  ctx.fillStyle = "rgba(255,255,255,0.9)";
  ctx.lineWidth = 1;
  for (let t = 0; t <= durationSeconds; t += tickEvery) {
    const x = timeToX(t, durationSeconds, width);
    ctx.beginPath();
    ctx.moveTo(x, height - 8);
    ctx.lineTo(x, height);
    ctx.stroke();
    ctx.fillText(`${t.toFixed(0)}s`, x + 2, height - 2);
  }
}

/** Probability curve in [0, 1], clipped, drawn over the full canvas width. */
export function drawProbabilityCurve(
  ctx: Canvas2D,
  response: TranscribeResponse,
  durationSeconds: number,
): void {
  const { width, height } = ctx.canvas;
  ctx.strokeStyle = "#4ea3ff";
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  response.probabilities.forEach((p, i) => {
    const clipped = Math.max(0, Math.min(1, p));
    const x = timeToX(i * response.hop_seconds, durationSeconds, width);
    const y = height - clipped * height;
    if (i === 0) {
      ctx.moveTo(x, y);
    } else {
      ctx.lineTo(x, y);
    }
  });
  ctx.stroke();
}

/** Vertical ticks; predictions and support markers use distinct styles. */
export function drawOnsetTicks(
  ctx: Canvas2D,
  times: number[],
  durationSeconds: number,
  kind: "prediction" | "support",
): number {
  const { width, height } = ctx.canvas;
  ctx.strokeStyle = kind === "prediction" ? "#ff5252" : "#41d98d";
  ctx.lineWidth = kind === "prediction" ? 1 : 2;
  let drawn = 0;
  for (const t of times) {
    const x = timeToX(t, durationSeconds, width);
    ctx.beginPath();
    ctx.moveTo(x, 0);
    ctx.lineTo(x, height);
    ctx.stroke();
    drawn++;
  }
  return drawn;
}
