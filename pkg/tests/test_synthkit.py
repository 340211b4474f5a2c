import json

import numpy as np
import pytest

from protodrum.audio_io import load_annotations, load_wav
from protodrum.corpus import check_kit_disjoint, load_manifest, split_tracks
from protodrum.features import mel_filter_edges, mel_spectrogram
from protodrum.synthkit import (
    BASE_PATCHES,
    InstrumentPatch,
    KitSpec,
    SynthError,
    TrackRecipe,
    generate_corpus,
    make_kit,
    render_hit,
    render_track,
)


def patch(**kw):
    base = dict(
        label="test",
        freq_hz=440.0,
        bandwidth_hz=200.0,
        tone_mix=1.0,
        attack_ms=1.0,
        decay_ms=100.0,
    )
    base.update(kw)
    return InstrumentPatch(**base)


class TestRenderHit:
    def test_zero_gain_silent(self):
        hit = render_hit(patch(gain=0.0), np.random.default_rng(0))
        assert np.all(hit.samples == 0.0)

    def test_peak_bounded_by_gain(self):
        for seed in range(5):
            hit = render_hit(patch(tone_mix=0.3, gain=0.8), np.random.default_rng(seed))
            assert np.max(np.abs(hit.samples)) <= 0.8 + 1e-6

    def test_pure_sine_energy_in_band_containing_100hz(self):
        hit = render_hit(
            patch(freq_hz=100.0, tone_mix=1.0, decay_ms=200.0), np.random.default_rng(1)
        )
        spec = mel_spectrogram(hit)
        energy = np.exp(spec.values.astype(np.float64)).sum(axis=0)
        edges = mel_filter_edges()
        containing = {k for k in range(128) if edges[k] < 100.0 < edges[k + 2]}
        assert int(np.argmax(energy)) in containing

    def test_same_seed_bit_identical(self):
        a = render_hit(patch(tone_mix=0.2), np.random.default_rng(42))
        b = render_hit(patch(tone_mix=0.2), np.random.default_rng(42))
        assert np.array_equal(a.samples, b.samples)

    def test_bad_patch_rejected(self):
        with pytest.raises(SynthError):
            patch(freq_hz=10.0)
        with pytest.raises(SynthError):
            patch(decay_ms=0.0)


class TestKits:
    def test_base_palette_has_12_distinct_classes(self):
        labels = [p.label for p in BASE_PATCHES]
        assert len(labels) == 12
        assert len(set(labels)) == 12

    def test_make_kit_detunes_per_seed(self):
        a = make_kit("kitA", seed=1)
        b = make_kit("kitB", seed=2)
        assert a.labels() == b.labels()
        freqs_a = [p.freq_hz for p in a.patches]
        freqs_b = [p.freq_hz for p in b.patches]
        assert freqs_a != freqs_b

    def test_kit_conditional_timbre(self):
        # The same class from two kits has a visibly different mel footprint.
        a = make_kit("kitA", seed=1)
        b = make_kit("kitB", seed=2)
        pa = next(p for p in a.patches if p.label == "snare")
        pb = next(p for p in b.patches if p.label == "snare")
        sa = mel_spectrogram(render_hit(pa, np.random.default_rng(0))).values
        sb = mel_spectrogram(render_hit(pb, np.random.default_rng(0))).values
        n = min(sa.shape[0], sb.shape[0])
        diff = np.abs(sa[:n] - sb[:n]).mean()
        assert diff > 0.1

    def test_kit_size_bounds(self):
        with pytest.raises(SynthError):
            KitSpec(kit_id="tiny", patches=BASE_PATCHES[:3])


class TestRenderTrack:
    def test_exact_onset_count_and_energy(self):
        kit = KitSpec(kit_id="k", patches=BASE_PATCHES[:5])
        recipe = TrackRecipe(duration=10.0, class_rates={"kick": 4.0})
        clip, ann = render_track(kit, recipe, np.random.default_rng(3))
        assert len(ann) == 40
        assert all(label == "kick" for _, label in ann.events)
        sr = clip.sample_rate
        for t, _ in ann.events:
            k = int(t * sr)
            window = clip.samples[k : k + int(0.02 * sr)]
            assert np.sqrt(np.mean(window**2)) > 1e-4

    def test_empty_recipe_silent(self):
        kit = KitSpec(kit_id="k", patches=BASE_PATCHES[:5])
        recipe = TrackRecipe(duration=5.0, class_rates={})
        clip, ann = render_track(kit, recipe, np.random.default_rng(0))
        assert len(ann) == 0
        assert np.all(clip.samples == 0.0)

    def test_annotations_sorted_within_duration(self):
        kit = make_kit("k", seed=5)
        recipe = TrackRecipe(duration=8.0, class_rates={l: 1.0 for l in kit.labels()})
        clip, ann = render_track(kit, recipe, np.random.default_rng(1))
        times = [t for t, _ in ann.events]
        assert times == sorted(times)
        assert max(times) <= clip.duration

    @pytest.mark.parametrize(
        "n_classes,rate,weights",
        [
            (6, 0.6, {1: 0.7, 2: 0.3}),
            (12, 1.3, {1: 0.4, 2: 0.3, 3: 0.3}),
        ],
    )
    def test_energy_rise_oracle_recovers_annotations(self, n_classes, rate, weights):
        # Independent detector: rectified spectral rise (scipy STFT) within
        # the struck class's own frequency band must spike within 10 ms of
        # every annotated onset, relative to the local pre-onset baseline.
        import scipy.signal

        kit = make_kit("k", seed=7, n_classes=n_classes)
        recipe = TrackRecipe(
            duration=12.0,
            class_rates={l: rate for l in kit.labels()},
            polyphony_weights=weights,
        )
        clip, ann = render_track(kit, recipe, np.random.default_rng(2))
        hop = 128
        freqs, t, Z = scipy.signal.stft(
            clip.samples.astype(np.float64),
            fs=clip.sample_rate,
            nperseg=1024,
            noverlap=1024 - hop,
            boundary="zeros",
            padded=True,
        )
        mag = np.abs(Z)
        flux_t = t[1:]
        patches = {p.label: p for p in kit.patches}
        hits = 0
        for tt, lab in ann.events:
            p = patches[lab]
            lo = max(p.freq_hz - p.bandwidth_hz / 2 - 60, 0.0)
            hi = p.freq_hz + p.bandwidth_hz / 2 + 60
            band = (freqs >= lo) & (freqs <= hi)
            flux = np.maximum(mag[band][:, 1:] - mag[band][:, :-1], 0).sum(axis=0)
            spike = flux[(flux_t >= tt - 0.005) & (flux_t <= tt + 0.010)].max()
            basewin = flux[(flux_t >= tt - 0.045) & (flux_t <= tt - 0.012)]
            base = float(np.median(basewin)) if basewin.size else 0.0
            if spike > 1.3 * base + 1e-4:
                hits += 1
        assert hits / len(ann) >= 0.99

    def test_polyphony_groups_share_exact_times(self):
        kit = make_kit("k", seed=9)
        recipe = TrackRecipe(
            duration=10.0,
            class_rates={l: 1.2 for l in kit.labels()},
            polyphony_weights={2: 0.5, 3: 0.5},
        )
        _, ann = render_track(kit, recipe, np.random.default_rng(3))
        by_time: dict[float, int] = {}
        for t, _ in ann.events:
            by_time[t] = by_time.get(t, 0) + 1
        # with group sizes of 2 and 3 only, nearly all times repeat
        assert sum(1 for c in by_time.values() if c >= 2) / len(by_time) > 0.9

    def test_overdense_recipe_rejected(self):
        kit = KitSpec(kit_id="k", patches=BASE_PATCHES[:5])
        recipe = TrackRecipe(duration=5.0, class_rates={"kick": 40.0})
        with pytest.raises(SynthError, match="dense"):
            render_track(kit, recipe, np.random.default_rng(0))


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    return generate_corpus(
        out, n_kits=4, tracks_per_kit=2, split_plan=(2, 1, 1), seed=11, duration=6.0
    )


class TestGenerateCorpus:

    def test_split_plan_respected(self, small_corpus):
        tracks = load_manifest(small_corpus)
        assert len(tracks) == 8
        check_kit_disjoint(tracks)
        assert len({t.kit_id for t in split_tracks(tracks, "train")}) == 2
        assert len({t.kit_id for t in split_tracks(tracks, "val")}) == 1
        assert len({t.kit_id for t in split_tracks(tracks, "test")}) == 1

    def test_files_exist_and_load(self, small_corpus):
        tracks = load_manifest(small_corpus)
        t = tracks[0]
        clip = load_wav(t.audio_path)
        ann = load_annotations(t.annotation_path)
        assert clip.duration == pytest.approx(6.0, abs=0.01)
        assert len(ann) > 0

    def test_same_seed_byte_identical(self, tmp_path):
        args = dict(n_kits=2, tracks_per_kit=1, split_plan=(1, 1, 0), seed=3, duration=5.0)
        m1 = generate_corpus(tmp_path / "a", **args)
        m2 = generate_corpus(tmp_path / "b", **args)
        t1 = load_manifest(m1)
        t2 = load_manifest(m2)
        for a, b in zip(t1, t2):
            assert a.audio_path.read_bytes() == b.audio_path.read_bytes()
            assert a.annotation_path.read_bytes() == b.annotation_path.read_bytes()
        assert json.loads(m1.read_text())["tracks"] == json.loads(m2.read_text())["tracks"]

    def test_train_classes_have_enough_instances(self, tmp_path):
        manifest = generate_corpus(
            tmp_path / "big",
            n_kits=2,
            tracks_per_kit=10,
            split_plan=(2, 0, 0),
            seed=5,
            duration=8.0,
        )
        tracks = load_manifest(manifest)
        counts: dict[tuple[str, str], int] = {}
        for t in tracks:
            ann = load_annotations(t.annotation_path)
            for _, label in ann.events:
                counts[(t.kit_id, label)] = counts.get((t.kit_id, label), 0) + 1
        assert counts
        assert min(counts.values()) >= 21

    def test_bad_split_plan_rejected(self, tmp_path):
        with pytest.raises(SynthError):
            generate_corpus(tmp_path, n_kits=4, split_plan=(1, 1, 1))
