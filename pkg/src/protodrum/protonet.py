"""Nearest-prototype classification math.

A class prototype is the mean of its support embeddings; a query's class
posterior is a softmax over negated squared Euclidean distances to the
prototypes. Embeddings are never normalized. The numpy functions are the
reference semantics used everywhere at inference time; `episode_objective`
is the differentiable twin of the same math for the training loop and is
pinned to the numpy path by tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class Prototype:
    class_id: str
    vector: np.ndarray
    support_count: int


def compute_prototype(embeddings: np.ndarray, class_id: str = "") -> Prototype:
    """Element-wise mean of K >= 1 support embeddings."""
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[0] < 1:
        raise ValueError("support set must be a non-empty [K x dim] array")
    return Prototype(class_id=class_id, vector=emb.mean(axis=0), support_count=emb.shape[0])


def squared_distances(queries: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """[Q x C] squared Euclidean distances."""
    q = np.asarray(queries, dtype=np.float64)
    c = np.asarray(centers, dtype=np.float64)
    diff = q[:, None, :] - c[None, :, :]
    return np.einsum("qcd,qcd->qc", diff, diff)


def posterior_from_distances(distances: np.ndarray) -> np.ndarray:
    """Softmax over negated distances, row-stabilized.

    Subtracting the row-minimum distance before exponentiation keeps the
    largest exponent at exactly 0, so huge distances cannot underflow the
    whole row.
    """
    d = np.asarray(distances, dtype=np.float64)
    d = d - d.min(axis=1, keepdims=True)
    w = np.exp(-d)
    return w / w.sum(axis=1, keepdims=True)


def posterior_matrix(queries: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """[Q x C] class posteriors for a batch of queries."""
    return posterior_from_distances(squared_distances(queries, centers))


def class_posterior(query: np.ndarray, prototypes: list[Prototype]) -> np.ndarray:
    """Posterior over prototype classes for one query embedding."""
    if len(prototypes) < 2:
        raise ValueError("need at least two prototypes")
    centers = np.stack([p.vector for p in prototypes])
    return posterior_matrix(np.asarray(query, dtype=np.float64)[None, :], centers)[0]


def episode_loss(posteriors: np.ndarray, true_labels: np.ndarray) -> float:
    """Mean negative log-likelihood of the true class over queries."""
    p = np.asarray(posteriors, dtype=np.float64)
    labels = np.asarray(true_labels)
    if labels.min() < 0 or labels.max() >= p.shape[1]:
        raise ValueError("label out of range")
    picked = p[np.arange(p.shape[0]), labels]
    return float(-np.log(np.maximum(picked, PROB_FLOOR)).mean())


def episode_objective(
    support: torch.Tensor, query: torch.Tensor, n_classes: int, n_shot: int, query_labels: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """Differentiable episode loss for training.

    `support` is [C*K x dim] ordered class-major, `query` [Q x dim]. Returns
    (mean NLL, [Q x C] logits = negated squared distances). Uses a fused
    log-softmax, which matches the numpy posterior/loss path analytically.
    """
    protos = support.view(n_classes, n_shot, -1).mean(dim=1)
    d = (query.unsqueeze(1) - protos.unsqueeze(0)).pow(2).sum(dim=-1)
    logits = -d
    loss = torch.nn.functional.cross_entropy(logits, query_labels)
    return loss, logits
