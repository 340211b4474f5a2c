"""Corpus manifest files and lazily-loaded track data.

A manifest is a JSON file listing tracks: audio path, annotation path,
kit id, and split name. Paths are stored relative to the manifest's
directory so a corpus directory can be moved wholesale.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

from .audio_io import AudioClip, OnsetAnnotation, load_annotations, load_wav
from .features import MelSpectrogram, mel_spectrogram

SPLITS = ("train", "val", "test")


class ManifestError(ValueError):
    pass


@dataclass
class TrackData:
    """One corpus track; audio and features load on first use and stay cached."""

    track_id: str
    audio_path: Path
    annotation_path: Path
    kit_id: str
    split: str

    @cached_property
    def clip(self) -> AudioClip:
        return load_wav(self.audio_path)

    @cached_property
    def annotation(self) -> OnsetAnnotation:
        ann = load_annotations(self.annotation_path)
        duration = self.clip.duration
        bad = [t for t, _ in ann.events if t > duration + 1e-9]
        if bad:
            raise ManifestError(
                f"{self.track_id}: {len(bad)} onsets beyond track end ({bad[0]:.3f}s > {duration:.3f}s)"
            )
        return ann

    @cached_property
    def mel(self) -> MelSpectrogram:
        return mel_spectrogram(self.clip)

    def drop_caches(self) -> None:
        for name in ("clip", "annotation", "mel"):
            self.__dict__.pop(name, None)


def load_manifest(path: str | Path) -> list[TrackData]:
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from exc
    root = path.parent
    tracks = []
    seen = set()
    for entry in doc.get("tracks", []):
        for key in ("track_id", "audio_path", "annotation_path", "kit_id", "split"):
            if key not in entry:
                raise ManifestError(f"{path}: track entry missing {key!r}")
        if entry["split"] not in SPLITS:
            raise ManifestError(f"{path}: unknown split {entry['split']!r}")
        if entry["track_id"] in seen:
            raise ManifestError(f"{path}: duplicate track id {entry['track_id']!r}")
        seen.add(entry["track_id"])
        tracks.append(
            TrackData(
                track_id=entry["track_id"],
                audio_path=root / entry["audio_path"],
                annotation_path=root / entry["annotation_path"],
                kit_id=entry["kit_id"],
                split=entry["split"],
            )
        )
    if not tracks:
        raise ManifestError(f"{path}: no tracks listed")
    return tracks


def save_manifest(tracks: list[TrackData], path: str | Path) -> None:
    path = Path(path)
    root = path.parent
    doc = {
        "tracks": [
            {
                "track_id": t.track_id,
                "audio_path": str(t.audio_path.relative_to(root)),
                "annotation_path": str(t.annotation_path.relative_to(root)),
                "kit_id": t.kit_id,
                "split": t.split,
            }
            for t in tracks
        ]
    }
    path.write_text(json.dumps(doc, indent=2) + "\n")


def split_tracks(tracks: list[TrackData], split: str) -> list[TrackData]:
    if split not in SPLITS:
        raise ManifestError(f"unknown split {split!r}")
    return [t for t in tracks if t.split == split]


def with_vocabulary(tracks: list[TrackData], vocab) -> list[TrackData]:
    """Copies of the tracks with annotations remapped through a vocabulary."""
    from .audio_io import apply_vocabulary

    remapped = []
    for t in tracks:
        clone = TrackData(
            track_id=t.track_id,
            audio_path=t.audio_path,
            annotation_path=t.annotation_path,
            kit_id=t.kit_id,
            split=t.split,
        )
        clone.__dict__["annotation"] = apply_vocabulary(t.annotation, vocab)
        if "clip" in t.__dict__:
            clone.__dict__["clip"] = t.clip
        if "mel" in t.__dict__:
            clone.__dict__["mel"] = t.mel
        remapped.append(clone)
    return remapped


def check_kit_disjoint(tracks: list[TrackData]) -> None:
    """Train/val/test must not share kits."""
    kit_splits: dict[str, set[str]] = {}
    for t in tracks:
        kit_splits.setdefault(t.kit_id, set()).add(t.split)
    overlapping = {k: s for k, s in kit_splits.items() if len(s) > 1}
    if overlapping:
        raise ManifestError(f"kits appear in multiple splits: {sorted(overlapping)}")
