"""Episodic training: kit-conditioned class catalog, the C-way K-shot
sampler, and the optimization loop with early stopping.

A training class is one percussion sound on one kit; every episode draws
all of its classes from a single kit, mirroring how a transcription query
is always confronted with sounds from one recording. Episode sampling,
weight initialization, and validation-episode sampling each use an
independent seeded stream, so e.g. changing the architecture does not
perturb the data order.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .corpus import TrackData, check_kit_disjoint, split_tracks
from .features import extract_context
from .neuralnet import (
    BackboneWeights,
    adam_init,
    adam_step,
    forward,
    forward_torch,
    new_backbone,
    save_weights,
)
from .protonet import episode_loss, episode_objective, posterior_matrix

logger = logging.getLogger(__name__)

N_WAY = 10
N_SHOT = 5
N_QUERY = 16


class EpisodeError(ValueError):
    pass


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainingCorpus:
    """Tracks plus the per-split, per-kit class catalog."""

    tracks: dict[str, TrackData]
    catalog: dict[str, dict[str, dict[str, list[tuple[str, float]]]]]
    n_shot: int = N_SHOT
    n_query: int = N_QUERY

    def eligible_kits(self, split: str, n_way: int) -> list[str]:
        kits = self.catalog.get(split, {})
        return sorted(k for k, classes in kits.items() if len(classes) >= n_way)

    def mel(self, track_id: str):
        return self.tracks[track_id].mel


def build_catalog(
    tracks: list[TrackData],
    n_way: int = N_WAY,
    n_shot: int = N_SHOT,
    n_query: int = N_QUERY,
    excluded_classes: tuple[str, ...] = (),
) -> TrainingCorpus:
    """Index (kit, class) -> instance list; drop classes that cannot fill an
    episode and any explicitly excluded class."""
    check_kit_disjoint(tracks)
    catalog: dict[str, dict[str, dict[str, list[tuple[str, float]]]]] = {}
    for track in tracks:
        kit_classes = catalog.setdefault(track.split, {}).setdefault(track.kit_id, {})
        for t, label in track.annotation.events:
            kit_classes.setdefault(label, []).append((track.track_id, t))

    min_instances = n_shot + n_query
    for split, kits in catalog.items():
        for kit_id, classes in kits.items():
            for label in list(classes):
                if label in excluded_classes:
                    del classes[label]
                    continue
                if len(classes[label]) < min_instances:
                    logger.warning(
                        "dropping class %s/%s in %s: %d instances < %d",
                        kit_id, label, split, len(classes[label]), min_instances,
                    )
                    del classes[label]

    corpus = TrainingCorpus(
        tracks={t.track_id: t for t in tracks},
        catalog=catalog,
        n_shot=n_shot,
        n_query=n_query,
    )
    for split in catalog:
        if not corpus.eligible_kits(split, n_way):
            raise EpisodeError(
                f"split {split!r}: no kit has {n_way} classes with >= {min_instances} instances"
            )
    return corpus


@dataclass(frozen=True)
class EpisodeSpec:
    """The identities behind one episode; windows materialize on demand."""

    kit_id: str
    class_labels: tuple[str, ...]
    support: tuple[tuple[str, float], ...]  # class-major (track_id, time)
    query: tuple[tuple[str, float], ...]


@dataclass
class Episode:
    spec: EpisodeSpec
    support_windows: np.ndarray  # [C*K x 25 x n_mels], class-major
    query_windows: np.ndarray  # [C*q x 25 x n_mels], class-major
    support_labels: np.ndarray
    query_labels: np.ndarray


def sample_episode_spec(
    corpus: TrainingCorpus,
    split: str,
    rng: np.random.Generator,
    n_way: int = N_WAY,
) -> EpisodeSpec:
    """Uniform kit, then classes, then instances, all without replacement;
    the first K instances of each class form the support set."""
    kits = corpus.eligible_kits(split, n_way)
    if not kits:
        raise EpisodeError(f"split {split!r} has no kit with {n_way} eligible classes")
    kit_id = kits[int(rng.integers(len(kits)))]
    classes = corpus.catalog[split][kit_id]
    labels = sorted(classes)
    picked = [labels[i] for i in rng.choice(len(labels), size=n_way, replace=False)]
    support: list[tuple[str, float]] = []
    query: list[tuple[str, float]] = []
    k, q = corpus.n_shot, corpus.n_query
    for label in picked:
        instances = classes[label]
        idx = rng.choice(len(instances), size=k + q, replace=False)
        support.extend(instances[i] for i in idx[:k])
        query.extend(instances[i] for i in idx[k:])
    return EpisodeSpec(
        kit_id=kit_id,
        class_labels=tuple(picked),
        support=tuple(support),
        query=tuple(query),
    )


def materialize_episode(corpus: TrainingCorpus, spec: EpisodeSpec) -> Episode:
    k, q = corpus.n_shot, corpus.n_query
    n_way = len(spec.class_labels)

    def windows(instances):
        return np.stack(
            [extract_context(corpus.mel(tid), t).values for tid, t in instances]
        )

    return Episode(
        spec=spec,
        support_windows=windows(spec.support),
        query_windows=windows(spec.query),
        support_labels=np.repeat(np.arange(n_way), k),
        query_labels=np.repeat(np.arange(n_way), q),
    )


def sample_episode(
    corpus: TrainingCorpus, split: str, rng: np.random.Generator, n_way: int = N_WAY
) -> Episode:
    return materialize_episode(corpus, sample_episode_spec(corpus, split, rng, n_way))


# --- Training ------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    max_episodes: int = 100_000
    eval_every: int = 500
    patience: int = 10
    seed: int = 0
    excluded_classes: tuple[str, ...] = ()
    lr: float = 0.001
    val_episodes: int = 200
    n_way: int = N_WAY
    n_shot: int = N_SHOT
    n_query: int = N_QUERY

    def __post_init__(self):
        for name in ("max_episodes", "eval_every", "patience", "val_episodes"):
            if getattr(self, name) <= 0:
                raise EpisodeError(f"{name} must be positive")


@dataclass
class EvalPoint:
    episode: int
    train_loss: float
    val_loss: float
    val_acc: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "episode": self.episode,
                "train_loss": self.train_loss,
                "val_loss": self.val_loss,
                "val_acc": self.val_acc,
            }
        )


@dataclass
class TrainResult:
    weights: BackboneWeights
    log: list[EvalPoint]
    episode_losses: np.ndarray
    best_episode: int
    best_val_loss: float
    wall_seconds: float = 0.0


def _episode_step(weights, state, episode, n_way, n_shot):
    x = np.concatenate([episode.support_windows, episode.query_windows])
    emb = forward_torch(weights, x, mode="train")
    n_support = n_way * n_shot
    loss, _ = episode_objective(
        emb[:n_support],
        emb[n_support:],
        n_way,
        n_shot,
        torch.from_numpy(episode.query_labels),
    )
    if not torch.isfinite(loss):
        raise TrainingDiverged(f"non-finite episode loss {loss.item()!r}")
    params = dict(weights.net.named_parameters())
    grads = torch.autograd.grad(loss, list(params.values()))
    adam_step(weights, dict(zip(params, grads)), state)
    return float(loss.item())


def evaluate_episodes(
    weights: BackboneWeights,
    corpus: TrainingCorpus,
    specs: list[EpisodeSpec],
    batch_size: int = 70,
) -> tuple[float, float]:
    """Mean episode loss and query accuracy over fixed validation episodes."""
    losses = []
    correct = 0
    total = 0
    for spec in specs:
        ep = materialize_episode(corpus, spec)
        n_way = len(spec.class_labels)
        support = forward(weights, ep.support_windows, mode="eval", batch_size=batch_size)
        query = forward(weights, ep.query_windows, mode="eval", batch_size=batch_size)
        protos = support.reshape(n_way, corpus.n_shot, -1).mean(axis=1)
        posts = posterior_matrix(query, protos)
        losses.append(episode_loss(posts, ep.query_labels))
        correct += int((posts.argmax(axis=1) == ep.query_labels).sum())
        total += ep.query_labels.size
    return float(np.mean(losses)), correct / total


def train(
    tracks: list[TrackData],
    config: TrainConfig,
    log_path: str | Path | None = None,
    checkpoint_path: str | Path | None = None,
) -> TrainResult:
    """Episodic optimization with early stopping on fixed validation episodes.

    Keeps the weights from the evaluation with the lowest validation loss;
    stops after `patience` evaluations without improvement.
    """
    seed_root = np.random.SeedSequence(config.seed)
    init_seq, episode_seq, val_seq = seed_root.spawn(3)
    corpus = build_catalog(
        tracks,
        n_way=config.n_way,
        n_shot=config.n_shot,
        n_query=config.n_query,
        excluded_classes=tuple(config.excluded_classes),
    )
    weights = new_backbone(seed=int(init_seq.generate_state(1)[0] % (2**31)))
    state = adam_init(weights, lr=config.lr)

    val_rng = np.random.default_rng(val_seq)
    val_specs = [
        sample_episode_spec(corpus, "val", val_rng, config.n_way)
        for _ in range(config.val_episodes)
    ]
    episode_rng = np.random.default_rng(episode_seq)

    t0 = time.monotonic()
    losses: list[float] = []
    log: list[EvalPoint] = []
    best_state = None
    best_val = np.inf
    best_episode = 0
    evals_since_best = 0

    for ep_index in range(1, config.max_episodes + 1):
        episode = sample_episode(corpus, "train", episode_rng, config.n_way)
        losses.append(_episode_step(weights, state, episode, config.n_way, config.n_shot))

        if ep_index % config.eval_every == 0 or ep_index == config.max_episodes:
            val_loss, val_acc = evaluate_episodes(weights, corpus, val_specs)
            window = losses[-config.eval_every :]
            point = EvalPoint(
                episode=ep_index,
                train_loss=float(np.mean(window)),
                val_loss=val_loss,
                val_acc=val_acc,
            )
            log.append(point)
            logger.info(
                "episode %d: train %.4f val %.4f acc %.3f",
                ep_index, point.train_loss, val_loss, val_acc,
            )
            if val_loss < best_val:
                best_val = val_loss
                best_episode = ep_index
                best_state = {k: v.clone() for k, v in weights.net.state_dict().items()}
                evals_since_best = 0
            else:
                evals_since_best += 1
                if evals_since_best >= config.patience:
                    break

    if best_state is not None:
        weights.net.load_state_dict(best_state)
    result = TrainResult(
        weights=weights,
        log=log,
        episode_losses=np.asarray(losses),
        best_episode=best_episode,
        best_val_loss=float(best_val),
        wall_seconds=time.monotonic() - t0,
    )
    if log_path is not None:
        write_training_log(log, log_path)
    if checkpoint_path is not None:
        save_weights(weights, checkpoint_path)
    return result


def write_training_log(log: list[EvalPoint], path: str | Path) -> None:
    """One JSON record per evaluation, newline-delimited."""
    Path(path).write_text("".join(p.to_json() + "\n" for p in log))


def read_training_log(path: str | Path) -> list[EvalPoint]:
    points = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        points.append(
            EvalPoint(
                episode=d["episode"],
                train_loss=d["train_loss"],
                val_loss=d["val_loss"],
                val_acc=d["val_acc"],
            )
        )
    return points
