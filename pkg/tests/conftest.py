import numpy as np
import pytest

from protodrum.audio_io import OnsetAnnotation
from protodrum.corpus import TrackData, load_manifest
from protodrum.features import MelSpectrogram
from protodrum.synthkit import generate_corpus


@pytest.fixture(scope="session")
def mini_corpus(tmp_path_factory):
    """Small but fully-formed corpus: 3 kits (1/1/1), 2 tracks per kit."""
    out = tmp_path_factory.mktemp("mini_corpus")
    manifest = generate_corpus(
        out,
        n_kits=3,
        tracks_per_kit=2,
        split_plan=(1, 1, 1),
        seed=42,
        duration=12.0,
        base_rate=1.2,
    )
    return manifest


@pytest.fixture(scope="session")
def mini_tracks(mini_corpus):
    return load_manifest(mini_corpus)


def fake_track(track_id, kit_id, split, events, n_frames=800, seed=0):
    """TrackData with fabricated annotation and spectrogram (no files)."""
    t = TrackData(
        track_id=track_id,
        audio_path=None,
        annotation_path=None,
        kit_id=kit_id,
        split=split,
    )
    t.__dict__["annotation"] = OnsetAnnotation(events=tuple(sorted(events)))
    rng = np.random.default_rng(seed)
    t.__dict__["mel"] = MelSpectrogram(
        values=rng.normal(-10, 3, size=(n_frames, 128)).astype(np.float32)
    )
    return t
