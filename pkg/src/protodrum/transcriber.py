"""Few-shot transcription of one target sound class within a track.

The trained embedding turns transcription into binary nearest-prototype
classification: the positive prototype is the mean embedding of the
user-picked (or sampled) example onsets, the negative prototype is the
mean embedding of every query frame in the track. The target class is
sparse relative to the whole track, so the global mean is a usable
non-target model even though it contains the target.

Per-track frame embeddings are computed once and shared across sampling
iterations, target classes, and peak-parameter choices; only the
prototypes change.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import OnsetAnnotation
from .features import HOP_SECONDS, MelSpectrogram, extract_context, frame_index, window_stack
from .neuralnet import BackboneWeights, forward
from .peakpick import PeakPickParams, peak_pick
from .protonet import posterior_from_distances, squared_distances


class TranscribeError(ValueError):
    pass


@dataclass(frozen=True)
class SupportSpec:
    """Positive example times for one target class in one track."""

    track_id: str
    target_label: str
    positive_times: tuple[float, ...]
    seed: int | None = None

    def __post_init__(self):
        if not self.positive_times:
            raise TranscribeError("need at least one positive example time")


@dataclass(frozen=True)
class ProbabilityCurve:
    """Per-frame probability that the target class is sounding."""

    values: np.ndarray
    hop_seconds: float = HOP_SECONDS

    def __post_init__(self):
        v = self.values
        if v.ndim != 1 or v.size == 0:
            raise TranscribeError("curve must be non-empty and 1-d")
        if v.min() < -1e-9 or v.max() > 1 + 1e-9:
            raise TranscribeError("curve values must lie in [0, 1]")


@dataclass
class TrackEmbeddings:
    """Cached per-frame embeddings for one track plus their mean."""

    frame_embeddings: np.ndarray
    mean_embedding: np.ndarray
    hop_seconds: float = HOP_SECONDS

    @property
    def n_frames(self) -> int:
        return self.frame_embeddings.shape[0]


@dataclass(frozen=True)
class IterationResult:
    positive_times: tuple[float, ...]
    curve: ProbabilityCurve
    onsets: tuple[float, ...]


def embed_track(weights: BackboneWeights, spec: MelSpectrogram, batch_size: int = 64) -> TrackEmbeddings:
    """Embed every 10 ms query window of a track (one forward pass each)."""
    stack = window_stack(spec)
    emb = forward(weights, np.ascontiguousarray(stack), mode="eval", batch_size=batch_size)
    return TrackEmbeddings(
        frame_embeddings=emb,
        mean_embedding=emb.mean(axis=0, dtype=np.float64),
        hop_seconds=spec.hop_seconds,
    )


def _positive_embeddings(
    weights: BackboneWeights,
    spec: MelSpectrogram,
    times: tuple[float, ...],
    cache: dict[int, np.ndarray] | None,
) -> np.ndarray:
    """Embeddings of the context windows at the positive times.

    `cache` (keyed by center frame) persists across iterations so each
    distinct positive window costs exactly one forward pass.
    """
    rows = []
    for t in times:
        key = frame_index(spec, t)
        if cache is not None and key in cache:
            rows.append(cache[key])
            continue
        window = extract_context(spec, t)
        emb = forward(weights, window.values[None], mode="eval")[0]
        if cache is not None:
            cache[key] = emb
        rows.append(emb)
    return np.stack(rows)


def transcribe_once(
    weights: BackboneWeights,
    spec: MelSpectrogram,
    support: SupportSpec,
    track_emb: TrackEmbeddings | None = None,
    positive_cache: dict[int, np.ndarray] | None = None,
) -> ProbabilityCurve:
    """Probability curve for one support set (deterministic)."""
    if track_emb is None:
        track_emb = embed_track(weights, spec)
    duration = (spec.n_frames - 1) * spec.hop_seconds + spec.hop_seconds
    for t in support.positive_times:
        if not 0.0 <= t <= duration:
            raise TranscribeError(f"positive time {t:.3f}s outside track")
    pos = _positive_embeddings(weights, spec, support.positive_times, positive_cache)
    centers = np.stack([pos.mean(axis=0), track_emb.mean_embedding])
    d = squared_distances(track_emb.frame_embeddings, centers)
    probs = posterior_from_distances(d)[:, 0]
    return ProbabilityCurve(values=probs, hop_seconds=track_emb.hop_seconds)


def sample_positive_times(
    annotation: OnsetAnnotation, target_label: str, n_positives: int, rng: np.random.Generator
) -> tuple[float, ...]:
    """n distinct annotated onsets of the target class, uniformly without
    replacement."""
    times = annotation.times_of(target_label)
    if len(times) < n_positives:
        raise TranscribeError(
            f"class {target_label!r} has {len(times)} annotated onsets, need {n_positives}"
        )
    picked = rng.choice(len(times), size=n_positives, replace=False)
    return tuple(sorted(times[i] for i in picked))


def transcribe(
    weights: BackboneWeights,
    spec: MelSpectrogram,
    annotation: OnsetAnnotation,
    target_label: str,
    params: PeakPickParams,
    n_iterations: int = 10,
    n_positives: int = 5,
    rng: np.random.Generator | None = None,
    track_id: str = "",
    track_emb: TrackEmbeddings | None = None,
    positive_times: tuple[float, ...] | None = None,
) -> list[IterationResult]:
    """Repeated transcription with freshly sampled positives per iteration.

    Passing explicit `positive_times` (interactive use) skips sampling and
    forces a single iteration. Track embeddings are computed once and
    shared by all iterations.
    """
    if track_emb is None:
        track_emb = embed_track(weights, spec)
    positive_cache: dict[int, np.ndarray] = {}
    results = []
    if positive_times is not None:
        supports = [tuple(positive_times)]
    else:
        if rng is None:
            raise TranscribeError("rng required when sampling positives")
        supports = [
            sample_positive_times(annotation, target_label, n_positives, rng)
            for _ in range(n_iterations)
        ]
    for times in supports:
        support = SupportSpec(track_id=track_id, target_label=target_label, positive_times=times)
        curve = transcribe_once(
            weights, spec, support, track_emb=track_emb, positive_cache=positive_cache
        )
        onsets = tuple(peak_pick(curve.values, params, hop_seconds=curve.hop_seconds))
        results.append(IterationResult(positive_times=times, curve=curve, onsets=onsets))
    return results


# --- Output files -------------------------------------------------------------

def save_transcription(
    results: list[IterationResult], target_label: str, path: str | Path, dump_curves: bool = False
) -> None:
    """JSON output per (track, class); optionally raw float32 curve dumps."""
    path = Path(path)
    doc = {
        "target_class": target_label,
        "hop_seconds": HOP_SECONDS,
        "iterations": [
            {"positive_times": list(r.positive_times), "onsets": list(r.onsets)}
            for r in results
        ],
    }
    path.write_text(json.dumps(doc, indent=2) + "\n")
    if dump_curves:
        for i, r in enumerate(results):
            curve_path = path.with_suffix(f".curve{i}.f32")
            curve_path.write_bytes(r.curve.values.astype("<f4").tobytes())
            sidecar = {"n_frames": int(r.curve.values.size), "hop_seconds": r.curve.hop_seconds}
            Path(str(curve_path) + ".json").write_text(json.dumps(sidecar))
