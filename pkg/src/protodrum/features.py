"""Log-mel spectrograms and fixed-size context windows.

Conventions, fixed once for both training and inference:

* STFT: 2048-sample periodic Hann window, 441-sample hop (10 ms at
  44.1 kHz), reflect padding so frame i is centered on sample i * 441.
* Mel: 128 triangular filters on the Slaney mel scale, 0-22050 Hz,
  area-normalized, applied to the power spectrum.
* Log compression log(max(x, 1e-10)); silence sits exactly at the floor.
* Context windows are 25 frames (250 ms) sliced from the full-track
  spectrogram, floor-padded at the track edges.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import SAMPLE_RATE, AudioClip

N_FFT = 2048
HOP = 441
N_MELS = 128
HOP_SECONDS = HOP / SAMPLE_RATE
WIN_SECONDS = N_FFT / SAMPLE_RATE
CONTEXT_FRAMES = 25
CONTEXT_HALF = CONTEXT_FRAMES // 2
LOG_FLOOR = 1e-10
LOG_FLOOR_VALUE = float(np.log(LOG_FLOOR))


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class MelSpectrogram:
    """[n_frames x n_mels] log-mel energies; frame i is centered at i * hop."""

    values: np.ndarray
    hop_seconds: float = HOP_SECONDS
    win_seconds: float = WIN_SECONDS

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_mels(self) -> int:
        return self.values.shape[1]

    @property
    def frame_times(self) -> np.ndarray:
        return np.arange(self.n_frames) * self.hop_seconds


@dataclass(frozen=True)
class ContextWindow:
    """25 frames x 128 mels centered on `center_time`."""

    values: np.ndarray
    center_time: float

    def __post_init__(self):
        if self.values.shape != (CONTEXT_FRAMES, N_MELS):
            raise FeatureError(f"bad context window shape {self.values.shape}")


def hz_to_mel(freq):
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    freq = np.asarray(freq, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    mel = freq / f_sp
    above = freq >= min_log_hz
    mel = np.where(above, min_log_mel + np.log(np.maximum(freq, min_log_hz) / min_log_hz) / logstep, mel)
    return mel


def mel_to_hz(mel):
    mel = np.asarray(mel, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    freq = mel * f_sp
    above = mel >= min_log_mel
    freq = np.where(above, min_log_hz * np.exp(logstep * (mel - min_log_mel)), freq)
    return freq


def mel_filter_edges(n_mels: int = N_MELS, fmin: float = 0.0, fmax: float = SAMPLE_RATE / 2) -> np.ndarray:
    """n_mels + 2 band-edge frequencies, equally spaced on the mel scale."""
    mels = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    return mel_to_hz(mels)


def mel_filterbank(
    n_mels: int = N_MELS,
    n_fft: int = N_FFT,
    sample_rate: int = SAMPLE_RATE,
    fmin: float = 0.0,
    fmax: float = SAMPLE_RATE / 2,
) -> np.ndarray:
    """[n_mels x n_fft//2+1] triangular filters, area-normalized (2 / bandwidth)."""
    edges = mel_filter_edges(n_mels, fmin, fmax)
    fft_freqs = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    lower = edges[:-2][:, None]
    center = edges[1:-1][:, None]
    upper = edges[2:][:, None]
    up = (fft_freqs[None, :] - lower) / np.maximum(center - lower, 1e-30)
    down = (upper - fft_freqs[None, :]) / np.maximum(upper - center, 1e-30)
    weights = np.maximum(0.0, np.minimum(up, down))
    weights *= 2.0 / (upper - lower)
    return weights


_FILTERBANK_CACHE: dict[tuple, np.ndarray] = {}


def _filterbank() -> np.ndarray:
    key = (N_MELS, N_FFT, SAMPLE_RATE)
    if key not in _FILTERBANK_CACHE:
        _FILTERBANK_CACHE[key] = mel_filterbank()
    return _FILTERBANK_CACHE[key]


def stft_power(samples: np.ndarray, n_fft: int = N_FFT, hop: int = HOP) -> np.ndarray:
    """[n_frames x n_fft//2+1] power spectrogram with centered frames.

    n_frames == n_samples // hop + 1. Signals too short for reflect
    padding (<= n_fft // 2 samples) are rejected.
    """
    x = np.asarray(samples, dtype=np.float64)
    pad = n_fft // 2
    if x.size < hop:
        raise FeatureError(f"signal too short ({x.size} samples < one hop)")
    if x.size <= pad:
        raise FeatureError(f"signal too short ({x.size} samples <= {pad}) for centered framing")
    padded = np.pad(x, pad, mode="reflect")
    n_frames = x.size // hop + 1
    idx = np.arange(n_fft)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = padded[idx]
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n_fft) / n_fft)
    spec = np.fft.rfft(frames * window, axis=1)
    return np.abs(spec) ** 2


def mel_spectrogram(clip: AudioClip) -> MelSpectrogram:
    """Log-mel spectrogram of a clip with the module's fixed parameters."""
    power = stft_power(clip.samples)
    mel = power @ _filterbank().T
    values = np.log(np.maximum(mel, LOG_FLOOR))
    return MelSpectrogram(values=values.astype(np.float32))


def frame_index(spec: MelSpectrogram, time: float) -> int:
    """Nearest frame to `time` (half-up rounding)."""
    return int(np.floor(time / spec.hop_seconds + 0.5))


def extract_context(spec: MelSpectrogram, time: float) -> ContextWindow:
    """25 frames centered on the frame nearest `time`; edges are floor-padded."""
    duration = (spec.n_frames - 1) * spec.hop_seconds
    if not 0.0 <= time <= duration + spec.hop_seconds:
        raise FeatureError(f"time {time:.3f}s outside track [0, {duration:.3f}]s")
    center = min(frame_index(spec, time), spec.n_frames - 1)
    values = np.full((CONTEXT_FRAMES, spec.n_mels), LOG_FLOOR_VALUE, dtype=np.float32)
    lo = center - CONTEXT_HALF
    hi = center + CONTEXT_HALF + 1
    src_lo, src_hi = max(lo, 0), min(hi, spec.n_frames)
    values[src_lo - lo : src_hi - lo] = spec.values[src_lo:src_hi]
    return ContextWindow(values=values, center_time=center * spec.hop_seconds)


def window_stack(spec: MelSpectrogram) -> np.ndarray:
    """[n_frames x 25 x n_mels] array of every per-frame context window.

    Row i equals extract_context(spec, i * hop) and costs no copies until
    the caller materializes it (sliding-window view over a padded buffer).
    """
    padded = np.concatenate(
        [
            np.full((CONTEXT_HALF, spec.n_mels), LOG_FLOOR_VALUE, dtype=np.float32),
            spec.values,
            np.full((CONTEXT_HALF, spec.n_mels), LOG_FLOOR_VALUE, dtype=np.float32),
        ]
    )
    view = np.lib.stride_tricks.sliding_window_view(padded, CONTEXT_FRAMES, axis=0)
    return view.transpose(0, 2, 1)


def slice_track(spec: MelSpectrogram) -> list[ContextWindow]:
    """One context window per spectrogram frame (10 ms query hop)."""
    stack = window_stack(spec)
    return [
        ContextWindow(values=np.ascontiguousarray(stack[i]), center_time=i * spec.hop_seconds)
        for i in range(spec.n_frames)
    ]


# --- Spectrogram cache files -------------------------------------------------

def save_mel_cache(spec: MelSpectrogram, path: str | Path) -> None:
    """Write raw little-endian float32 values plus a JSON sidecar header."""
    path = Path(path)
    path.write_bytes(spec.values.astype("<f4").tobytes())
    sidecar = {
        "n_frames": spec.n_frames,
        "n_mels": spec.n_mels,
        "hop_seconds": spec.hop_seconds,
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar))


def load_mel_cache(path: str | Path) -> MelSpectrogram:
    path = Path(path)
    sidecar = json.loads(Path(str(path) + ".json").read_text())
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    n_frames, n_mels = sidecar["n_frames"], sidecar["n_mels"]
    if raw.size != n_frames * n_mels:
        raise FeatureError(f"{path}: payload size does not match sidecar header")
    values = raw.reshape(n_frames, n_mels).copy()
    return MelSpectrogram(values=values, hop_seconds=sidecar["hop_seconds"])
