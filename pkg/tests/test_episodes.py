import numpy as np
import pytest

from conftest import fake_track
from protodrum.episodes import (
    EpisodeError,
    TrainConfig,
    build_catalog,
    evaluate_episodes,
    materialize_episode,
    read_training_log,
    sample_episode,
    sample_episode_spec,
    train,
    write_training_log,
)
from protodrum.neuralnet import load_weights


def grid_events(labels, per_class, spacing=0.08, start=0.2):
    """per_class onsets for each label, interleaved, inside a 26 s track."""
    events = []
    t = start
    for i in range(per_class):
        for label in labels:
            events.append((round(t, 3), label))
            t += spacing
    return events


def fabricated_tracks(n_classes=11, per_class=25, splits=("train", "val", "test")):
    labels = [f"c{i:02d}" for i in range(n_classes)]
    tracks = []
    for s, split in enumerate(splits):
        for k in range(2 if split == "train" else 1):
            kit = f"{split}_kit{k}"
            tracks.append(
                fake_track(
                    f"{kit}_t0", kit, split, grid_events(labels, per_class),
                    n_frames=2600, seed=s * 10 + k,
                )
            )
    return tracks


class TestBuildCatalog:
    def test_counts_all_classes(self):
        corpus = build_catalog(fabricated_tracks(n_classes=12, per_class=25))
        kits = corpus.catalog["train"]
        assert all(len(classes) == 12 for classes in kits.values())

    def test_drops_underpopulated_class(self):
        tracks = fabricated_tracks(n_classes=11, per_class=25)
        poor = [(0.2 + 0.4 * i, "poor") for i in range(10)]  # 10 < 5 + 16
        rich_events = grid_events([f"c{i:02d}" for i in range(11)], 25)
        tracks[0] = fake_track(
            tracks[0].track_id, tracks[0].kit_id, "train", rich_events + poor, n_frames=2600
        )
        corpus = build_catalog(tracks)
        assert "poor" not in corpus.catalog["train"][tracks[0].kit_id]

    def test_excluded_classes_removed_everywhere(self):
        corpus = build_catalog(fabricated_tracks(n_classes=12), excluded_classes=("c03",))
        for split_kits in corpus.catalog.values():
            for classes in split_kits.values():
                assert "c03" not in classes

    def test_error_when_no_kit_has_enough_classes(self):
        with pytest.raises(EpisodeError, match="no kit has 10"):
            build_catalog(fabricated_tracks(n_classes=6))

    def test_split_kits_stay_disjoint(self):
        tracks = fabricated_tracks()
        tracks.append(
            fake_track("dup", tracks[0].kit_id, "val", grid_events(["c00"] * 1, 25), n_frames=2600)
        )
        from protodrum.corpus import ManifestError

        with pytest.raises(ManifestError):
            build_catalog(tracks)


class TestSampleEpisode:
    @pytest.fixture(scope="class")
    def corpus(self):
        return build_catalog(fabricated_tracks(n_classes=12, per_class=25))

    def test_shapes_and_labels(self, corpus):
        ep = sample_episode(corpus, "train", np.random.default_rng(0))
        assert ep.support_windows.shape == (50, 25, 128)
        assert ep.query_windows.shape == (160, 25, 128)
        assert len(ep.spec.class_labels) == 10
        assert len(set(ep.spec.class_labels)) == 10
        assert list(np.unique(ep.support_labels)) == list(range(10))
        assert np.bincount(ep.query_labels).tolist() == [16] * 10

    def test_fixed_seed_replays_identically(self, corpus):
        a = sample_episode(corpus, "train", np.random.default_rng(123))
        b = sample_episode(corpus, "train", np.random.default_rng(123))
        assert a.spec == b.spec
        assert np.array_equal(a.support_windows, b.support_windows)
        assert np.array_equal(a.query_windows, b.query_windows)

    def test_single_kit_per_episode(self, corpus):
        for seed in range(20):
            spec = sample_episode_spec(corpus, "train", np.random.default_rng(seed))
            kit_tracks = {
                tid
                for label in spec.class_labels
                for tid, _ in corpus.catalog["train"][spec.kit_id][label]
            }
            for tid, _ in spec.support + spec.query:
                assert tid in kit_tracks

    def test_support_query_disjoint_over_1000_episodes(self, corpus):
        rng = np.random.default_rng(7)
        k, q = corpus.n_shot, corpus.n_query
        for _ in range(1000):
            spec = sample_episode_spec(corpus, "train", rng)
            for c in range(10):
                support = set(spec.support[c * k : (c + 1) * k])
                query = set(spec.query[c * q : (c + 1) * q])
                assert len(support) == k
                assert len(query) == q
                assert not (support & query)

    def test_unknown_split_rejected(self, corpus):
        with pytest.raises(EpisodeError):
            sample_episode_spec(corpus, "nope", np.random.default_rng(0))


class TestTraining:
    def test_smoke_and_best_checkpoint_invariant(self, mini_tracks, tmp_path):
        config = TrainConfig(
            max_episodes=8, eval_every=4, patience=5, seed=3, val_episodes=3
        )
        log_path = tmp_path / "log.jsonl"
        ckpt = tmp_path / "model.ckpt"
        result = train(mini_tracks, config, log_path=log_path, checkpoint_path=ckpt)
        assert result.episode_losses.shape == (8,)
        assert np.isfinite(result.episode_losses).all()
        assert len(result.log) == 2
        assert result.best_val_loss == pytest.approx(min(p.val_loss for p in result.log))
        assert result.best_episode in {p.episode for p in result.log}

        back = read_training_log(log_path)
        assert [p.episode for p in back] == [p.episode for p in result.log]
        loaded = load_weights(ckpt)
        val_specs_corpus = build_catalog(mini_tracks)
        rng = np.random.default_rng(0)
        specs = [sample_episode_spec(val_specs_corpus, "val", rng) for _ in range(2)]
        loss_a, acc_a = evaluate_episodes(result.weights, val_specs_corpus, specs)
        loss_b, acc_b = evaluate_episodes(loaded, val_specs_corpus, specs)
        assert loss_a == pytest.approx(loss_b, abs=1e-5)
        assert acc_a == acc_b

    def test_seeded_rerun_bit_identical_losses(self, mini_tracks):
        config = TrainConfig(max_episodes=4, eval_every=4, patience=2, seed=11, val_episodes=2)
        a = train(mini_tracks, config)
        b = train(mini_tracks, config)
        assert np.array_equal(a.episode_losses, b.episode_losses)
        assert a.log[0].val_loss == b.log[0].val_loss

    def test_excluded_class_never_sampled(self, mini_tracks):
        corpus = build_catalog(mini_tracks, n_way=10, excluded_classes=("clap",))
        rng = np.random.default_rng(5)
        for _ in range(200):
            spec = sample_episode_spec(corpus, "train", rng)
            assert "clap" not in spec.class_labels

    def test_config_validation(self):
        with pytest.raises(EpisodeError):
            TrainConfig(max_episodes=0)

    def test_log_roundtrip(self, tmp_path):
        from protodrum.episodes import EvalPoint

        log = [EvalPoint(episode=10, train_loss=1.5, val_loss=1.2, val_acc=0.7)]
        p = tmp_path / "log.jsonl"
        write_training_log(log, p)
        assert read_training_log(p) == log
