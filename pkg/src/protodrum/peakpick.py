"""Onset extraction from per-frame probability curves.

Frame n becomes an onset when all three hold:

1. p(n) equals the maximum over frames [n - w1, n + w2] (ties pass),
2. p(n) >= mean over frames [n - w3, n + w4] plus delta,
3. n - n_last_onset > w5.

All windows are inclusive on both ends and clipped at the curve
boundaries; the last-onset index starts at -inf so the first frame can
fire. Criteria 1-2 are evaluated vectorized (C-speed sliding max and
clipped cumulative-sum means), criterion 3 as a short scan over the
surviving candidates; peak parameter searches re-run this thousands of
times per curve set.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import maximum_filter1d

HOP_SECONDS = 0.010

DELTA_RANGE = (0.01, 0.5)
W_OFFSET_MAX = 20
W_GAP_RANGE = (1, 30)


@dataclass(frozen=True)
class PeakPickParams:
    """Threshold offset plus the five window parameters, in frames."""

    delta: float
    w1: int
    w2: int
    w3: int
    w4: int
    w5: int

    def __post_init__(self):
        if min(self.w1, self.w2, self.w3, self.w4) < 0:
            raise ValueError("window offsets w1..w4 must be >= 0")
        if self.w5 < 1:
            raise ValueError("minimum onset gap w5 must be >= 1")

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "PeakPickParams":
        d = json.loads(text)
        return cls(
            delta=float(d["delta"]),
            w1=int(d["w1"]),
            w2=int(d["w2"]),
            w3=int(d["w3"]),
            w4=int(d["w4"]),
            w5=int(d["w5"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "PeakPickParams":
        return cls.from_json(Path(path).read_text())


def _sliding_max(p: np.ndarray, before: int, after: int) -> np.ndarray:
    """max over [n - before, n + after], clipped: edge replication makes the
    filter equivalent to clipping because the replicated values are copies of
    in-range samples."""
    size = before + after + 1
    if size == 1:
        return p
    return maximum_filter1d(p, size=size, mode="nearest", origin=before - size // 2)


def _sliding_mean(p: np.ndarray, before: int, after: int) -> np.ndarray:
    """mean over [n - before, n + after] with true boundary clipping."""
    n = p.size
    csum = np.concatenate(([0.0], np.cumsum(p, dtype=np.float64)))
    idx = np.arange(n)
    lo = np.maximum(idx - before, 0)
    hi = np.minimum(idx + after, n - 1)
    return (csum[hi + 1] - csum[lo]) / (hi - lo + 1)


def peak_pick_frames(curve: np.ndarray, params: PeakPickParams) -> np.ndarray:
    """Onset frame indices for one probability curve."""
    p = np.asarray(curve, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("curve must be a non-empty 1-d array")
    local_max = p >= _sliding_max(p, params.w1, params.w2)
    above_mean = p >= _sliding_mean(p, params.w3, params.w4) + params.delta
    candidates = np.flatnonzero(local_max & above_mean)
    onsets: list[int] = []
    last = -np.inf
    for n in candidates:
        if n - last > params.w5:
            onsets.append(int(n))
            last = n
    return np.asarray(onsets, dtype=np.int64)


def peak_pick(
    curve: np.ndarray, params: PeakPickParams, hop_seconds: float = HOP_SECONDS
) -> list[float]:
    """Onset times (seconds) for one probability curve."""
    return [float(n * hop_seconds) for n in peak_pick_frames(curve, params)]


def random_params(rng: np.random.Generator) -> PeakPickParams:
    """One uniform draw from the search space used by the randomized tuner."""
    return PeakPickParams(
        delta=float(rng.uniform(*DELTA_RANGE)),
        w1=int(rng.integers(0, W_OFFSET_MAX + 1)),
        w2=int(rng.integers(0, W_OFFSET_MAX + 1)),
        w3=int(rng.integers(0, W_OFFSET_MAX + 1)),
        w4=int(rng.integers(0, W_OFFSET_MAX + 1)),
        w5=int(rng.integers(W_GAP_RANGE[0], W_GAP_RANGE[1] + 1)),
    )
