"""Local HTTP service exposing tracks and few-shot transcription to the UI.

All responses are JSON except raw WAV audio. Errors use a uniform body
{"code": ..., "message": ...}. The service never writes to the checkpoint
or the corpus; per-track embeddings are cached in memory and shared
across requests (embedding is deterministic, so recomputation races are
harmless).
"""

from __future__ import annotations

import json
import threading
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .corpus import load_manifest
from .features import HOP_SECONDS
from .peakpick import PeakPickParams, peak_pick
from .transcriber import SupportSpec, TrackEmbeddings, embed_track, transcribe_once


class ServiceError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


class TranscribeRequest(BaseModel):
    track_id: str
    positive_times: list[float]
    target_label: str = ""
    peak_params: dict | None = None


class ModelContext:
    """Checkpoint, corpus, and the shared embedding cache."""

    def __init__(self, checkpoint_path: str | Path, manifest_path: str | Path):
        self.checkpoint_path = Path(checkpoint_path)
        self.manifest_path = Path(manifest_path)
        self.weights = None
        self.tracks = {}
        self._embeddings: dict[str, TrackEmbeddings] = {}
        self._lock = threading.Lock()
        self.ready = False

    def load(self) -> None:
        from .neuralnet import load_weights

        tracks = load_manifest(self.manifest_path)
        self.tracks = {t.track_id: t for t in tracks}
        self.weights = load_weights(self.checkpoint_path)
        self.ready = True

    def require_ready(self) -> None:
        if not self.ready:
            raise ServiceError(409, "model_loading", "model is still loading; retry shortly")

    def track(self, track_id: str):
        if track_id not in self.tracks:
            raise ServiceError(404, "unknown_track", f"unknown track {track_id!r}")
        return self.tracks[track_id]

    def embeddings_for(self, track_id: str) -> TrackEmbeddings:
        track = self.track(track_id)
        with self._lock:
            if track_id not in self._embeddings:
                self._embeddings[track_id] = embed_track(self.weights, track.mel)
            return self._embeddings[track_id]


DEFAULT_PEAK_PARAMS = PeakPickParams(delta=0.1, w1=3, w2=3, w3=5, w4=5, w5=3)


def create_app(
    checkpoint_path: str | Path,
    manifest_path: str | Path,
    static_dir: str | Path | None = None,
    defer_load: bool = False,
) -> FastAPI:
    app = FastAPI(title="protodrum service")
    ctx = ModelContext(checkpoint_path, manifest_path)
    app.state.ctx = ctx

    if defer_load:
        pass  # caller triggers ctx.load() when it chooses (tests, warmers)
    else:
        ctx.load()

    @app.exception_handler(ServiceError)
    async def service_error_handler(_request: Request, exc: ServiceError):
        return JSONResponse(status_code=exc.status, content={"code": exc.code, "message": exc.message})

    @app.get("/api/tracks")
    def list_tracks():
        ctx.require_ready()
        out = []
        for track_id in sorted(ctx.tracks):
            track = ctx.tracks[track_id]
            out.append(
                {
                    "id": track_id,
                    "duration": track.clip.duration,
                    "classes": sorted(track.annotation.labels),
                }
            )
        return out

    @app.get("/api/tracks/{track_id}/audio")
    def track_audio(track_id: str):
        ctx.require_ready()
        track = ctx.track(track_id)
        return FileResponse(track.audio_path, media_type="audio/wav")

    @app.get("/api/tracks/{track_id}/spectrogram")
    def track_spectrogram(track_id: str, max_frames: int = 2000):
        ctx.require_ready()
        if max_frames < 1:
            raise ServiceError(400, "bad_request", "max_frames must be >= 1")
        track = ctx.track(track_id)
        spec = track.mel
        values = spec.values
        pool = max(1, int(np.ceil(spec.n_frames / max_frames)))
        if pool > 1:
            pad = (-spec.n_frames) % pool
            padded = np.pad(values, ((0, pad), (0, 0)), constant_values=values.min())
            values = padded.reshape(-1, pool, spec.n_mels).max(axis=1)
        return {
            "n_frames": int(values.shape[0]),
            "n_mels": int(values.shape[1]),
            "hop_seconds": spec.hop_seconds * pool,
            "source_n_frames": spec.n_frames,
            "source_hop_seconds": spec.hop_seconds,
            "values": [[round(float(v), 3) for v in row] for row in values],
        }

    @app.post("/api/transcribe")
    def transcribe_endpoint(body: TranscribeRequest):
        ctx.require_ready()
        if not body.positive_times:
            raise ServiceError(400, "empty_positive_times", "positive_times must be non-empty")
        track = ctx.track(body.track_id)
        try:
            params = (
                PeakPickParams.from_json(json.dumps(body.peak_params))
                if body.peak_params
                else DEFAULT_PEAK_PARAMS
            )
        except (KeyError, ValueError) as exc:
            raise ServiceError(400, "bad_peak_params", f"invalid peak_params: {exc}") from exc
        track_emb = ctx.embeddings_for(body.track_id)
        support = SupportSpec(
            track_id=body.track_id,
            target_label=body.target_label or "target",
            positive_times=tuple(body.positive_times),
        )
        try:
            curve = transcribe_once(ctx.weights, track.mel, support, track_emb=track_emb)
        except ValueError as exc:
            raise ServiceError(400, "bad_request", str(exc)) from exc
        onsets = peak_pick(curve.values, params, hop_seconds=curve.hop_seconds)
        return {
            "track_id": body.track_id,
            "target_label": body.target_label,
            "probabilities": [round(float(p), 6) for p in curve.values],
            "hop_seconds": HOP_SECONDS,
            "onsets": onsets,
            "positive_times": list(body.positive_times),
        }

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app
