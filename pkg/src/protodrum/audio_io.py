"""Track audio and onset-annotation I/O.

WAV support is deliberately narrow: RIFF PCM at 44.1 kHz, 16/24-bit integer
or 32-bit float, mono or stereo. Anything else is rejected rather than
converted, so the DSP downstream always sees the exact samples on disk.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SAMPLE_RATE = 44100


class AudioFormatError(ValueError):
    """Raised for WAV files outside the supported encoding envelope."""


class AnnotationError(ValueError):
    """Raised for malformed annotation or vocabulary files."""


@dataclass(frozen=True)
class AudioClip:
    """Mono audio at 44.1 kHz, samples roughly in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.sample_rate != SAMPLE_RATE:
            raise AudioFormatError(f"unsupported sample rate {self.sample_rate}")
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise AudioFormatError("clip must be a non-empty mono signal")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class OnsetAnnotation:
    """(time, label) onset events for one track, sorted by time."""

    events: tuple[tuple[float, str], ...]

    def __post_init__(self):
        times = [t for t, _ in self.events]
        if any(t < 0 for t in times):
            raise AnnotationError("onset times must be non-negative")
        if any(not label for _, label in self.events):
            raise AnnotationError("onset labels must be non-empty")
        if times != sorted(times):
            raise AnnotationError("events must be sorted by time")

    @property
    def labels(self) -> set[str]:
        return {label for _, label in self.events}

    def times_of(self, label: str) -> list[float]:
        return [t for t, lab in self.events if lab == label]

    def __len__(self) -> int:
        return len(self.events)


@dataclass(frozen=True)
class VocabularyMap:
    """Raw dataset label -> target class label. Unmapped labels are dropped."""

    entries: dict[str, str]
    name: str = "vocabulary"

    def __post_init__(self):
        for raw, target in self.entries.items():
            if not raw or not target:
                raise AnnotationError("vocabulary entries must be non-empty")


# --- WAV ------------------------------------------------------------------

_PCM = 1
_IEEE_FLOAT = 3


def load_wav(path: str | Path) -> AudioClip:
    """Read a RIFF PCM WAV file as a mono 44.1 kHz clip.

    Stereo input is downmixed by per-sample channel average. Integer
    samples are normalized to [-1, 1] by 2^(bits-1); float samples pass
    through unchanged.
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise AudioFormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id = raw[pos : pos + 4]
        (chunk_size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8 : pos + 8 + chunk_size]
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise AudioFormatError(f"{path}: truncated fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif chunk_id == b"data":
            if len(body) < chunk_size:
                raise AudioFormatError(f"{path}: truncated data chunk")
            data = body
        pos += 8 + chunk_size + (chunk_size & 1)

    if fmt is None or data is None:
        raise AudioFormatError(f"{path}: missing fmt or data chunk")
    audio_format, n_channels, sample_rate, _, block_align, bits = fmt

    if sample_rate != SAMPLE_RATE:
        raise AudioFormatError(f"unsupported sample rate {sample_rate}")
    if n_channels not in (1, 2):
        raise AudioFormatError(f"{path}: unsupported channel count {n_channels}")

    if audio_format == _PCM and bits == 16:
        x = np.frombuffer(data, dtype="<i2").astype(np.float64) / 2**15
    elif audio_format == _PCM and bits == 24:
        if len(data) % 3:
            raise AudioFormatError(f"{path}: truncated 24-bit payload")
        b = np.frombuffer(data, dtype=np.uint8).reshape(-1, 3)
        x = (
            b[:, 0].astype(np.int32)
            | (b[:, 1].astype(np.int32) << 8)
            | (b[:, 2].astype(np.int8).astype(np.int32) << 16)
        ).astype(np.float64) / 2**23
    elif audio_format == _IEEE_FLOAT and bits == 32:
        x = np.frombuffer(data, dtype="<f4").astype(np.float64)
    else:
        raise AudioFormatError(
            f"{path}: unsupported encoding (format={audio_format}, bits={bits})"
        )

    if block_align and len(data) % block_align:
        raise AudioFormatError(f"{path}: data size not a multiple of frame size")
    if x.size == 0:
        raise AudioFormatError(f"{path}: empty data chunk")
    if n_channels == 2:
        x = x.reshape(-1, 2).mean(axis=1)
    return AudioClip(samples=x.astype(np.float32))


def save_wav(clip: AudioClip, path: str | Path, bits: int = 16) -> None:
    """Write a mono 16-bit PCM WAV file."""
    if bits != 16:
        raise AudioFormatError("only 16-bit PCM output is supported")
    x = np.clip(clip.samples, -1.0, 1.0)
    pcm = np.clip(np.round(x * 2**15), -(2**15), 2**15 - 1).astype("<i2").tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(pcm),
        b"WAVE",
        b"fmt ",
        16,
        _PCM,
        1,
        clip.sample_rate,
        clip.sample_rate * 2,
        2,
        16,
        b"data",
        len(pcm),
    )
    Path(path).write_bytes(header + pcm)


# --- Annotations ------------------------------------------------------------

def load_annotations(path: str | Path) -> OnsetAnnotation:
    """Parse a `<time> <label>` per-line onset file. `#` lines are comments."""
    path = Path(path)
    events = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split(None, 1)
        if len(parts) != 2:
            raise AnnotationError(f"{path}:{lineno}: expected '<time> <label>'")
        try:
            time = float(parts[0])
        except ValueError:
            raise AnnotationError(f"{path}:{lineno}: bad time {parts[0]!r}") from None
        if time < 0:
            raise AnnotationError(f"{path}:{lineno}: negative time {time}")
        events.append((time, parts[1].strip()))
    events.sort(key=lambda e: e[0])
    return OnsetAnnotation(events=tuple(events))


def save_annotations(ann: OnsetAnnotation, path: str | Path) -> None:
    lines = [f"{t:.6f}\t{label}" for t, label in ann.events]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def load_vocabulary(path: str | Path, name: str | None = None) -> VocabularyMap:
    """Parse a `<raw_label> <target_label>` per-line mapping file."""
    path = Path(path)
    entries: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split(None, 1)
        if len(parts) != 2:
            raise AnnotationError(f"{path}:{lineno}: expected '<raw> <target>'")
        raw, target = parts[0], parts[1].strip()
        if raw in entries and entries[raw] != target:
            raise AnnotationError(f"{path}:{lineno}: {raw!r} mapped twice")
        entries[raw] = target
    return VocabularyMap(entries=entries, name=name or path.stem)


def apply_vocabulary(ann: OnsetAnnotation, vocab: VocabularyMap) -> OnsetAnnotation:
    """Relabel events per the map; events with unmapped labels are dropped."""
    events = tuple(
        (t, vocab.entries[label]) for t, label in ann.events if label in vocab.entries
    )
    return OnsetAnnotation(events=events)
