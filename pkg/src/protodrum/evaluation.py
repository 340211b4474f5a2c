"""Onset-matching metrics and the evaluation/search pipelines.

Matching is greedy-chronological one-to-one with a 20 ms tolerance: each
prediction (in time order) takes the earliest still-unmatched reference
within the tolerance. F-measure aggregation comes in three flavors:

* micro: pool TP/FP/FN over every (track, class, iteration) cell, one F.
* macro: per iteration, mean class-level F over classes present in the
  track; mean over iterations; mean over tracks.
* macro*: macro, with vocabulary classes absent from a track contributing
  F = 1 at the track level.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio_io import OnsetAnnotation
from .peakpick import PeakPickParams, peak_pick, random_params
from .transcriber import IterationResult, TrackEmbeddings, embed_track, transcribe

TOLERANCE = 0.020
POLYPHONY_WINDOW = 0.020
POLYPHONY_BUCKETS = ("1", "2", "3+")


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class MatchResult:
    tp: int
    fp: int
    fn: int
    pairs: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.tp != len(self.pairs):
            raise EvaluationError("TP must equal the number of matched pairs")


@dataclass(frozen=True)
class EvalCell:
    """Counts for one (track, class, iteration)."""

    track_id: str
    class_label: str
    iteration: int
    match: MatchResult


def match_onsets(ref, pred, tolerance: float = TOLERANCE) -> MatchResult:
    """Greedy chronological one-to-one matching within +/- tolerance."""
    ref = list(ref)
    pred = list(pred)
    if ref != sorted(ref) or pred != sorted(pred):
        raise EvaluationError("onset lists must be sorted")
    pairs = []
    i = 0
    for p in pred:
        # one-sided comparisons keep the skip and match conditions exactly
        # consistent at the tolerance boundary under floating point
        while i < len(ref) and p - ref[i] > tolerance:
            i += 1
        if i < len(ref) and ref[i] - p <= tolerance:
            pairs.append((ref[i], p))
            i += 1
    tp = len(pairs)
    return MatchResult(tp=tp, fp=len(pred) - tp, fn=len(ref) - tp, pairs=tuple(pairs))


def f_measure(tp: int, fp: int, fn: int) -> float:
    """2TP / (2TP + FP + FN); an empty class predicted empty scores 1."""
    if min(tp, fp, fn) < 0:
        raise EvaluationError("counts must be non-negative")
    if tp == fp == fn == 0:
        return 1.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


def micro_f(cells: list[EvalCell]) -> float:
    if not cells:
        raise EvaluationError("no evaluation cells")
    tp = sum(c.match.tp for c in cells)
    fp = sum(c.match.fp for c in cells)
    fn = sum(c.match.fn for c in cells)
    return f_measure(tp, fp, fn)


def aggregate(
    cells: list[EvalCell], mode: str, vocabulary: list[str] | None = None
) -> float:
    """One of micro / macro / macro_star over a set of cells."""
    if not cells:
        raise EvaluationError("no evaluation cells")
    if mode == "micro":
        return micro_f(cells)
    if mode not in ("macro", "macro_star"):
        raise EvaluationError(f"unknown aggregation mode {mode!r}")
    vocab = set(vocabulary) if vocabulary is not None else {c.class_label for c in cells}

    by_track: dict[str, dict[int, dict[str, MatchResult]]] = {}
    for c in cells:
        by_track.setdefault(c.track_id, {}).setdefault(c.iteration, {})[c.class_label] = c.match

    track_scores = []
    for iterations in by_track.values():
        iter_scores = []
        for class_matches in iterations.values():
            fs = [f_measure(m.tp, m.fp, m.fn) for m in class_matches.values()]
            if mode == "macro_star":
                fs.extend(1.0 for label in vocab if label not in class_matches)
            iter_scores.append(float(np.mean(fs)))
        track_scores.append(float(np.mean(iter_scores)))
    return float(np.mean(track_scores))


def per_class_f(cells: list[EvalCell]) -> dict[str, float]:
    """Micro F per class over all tracks and iterations."""
    counts: dict[str, list[int]] = {}
    for c in cells:
        acc = counts.setdefault(c.class_label, [0, 0, 0])
        acc[0] += c.match.tp
        acc[1] += c.match.fp
        acc[2] += c.match.fn
    return {label: f_measure(*acc) for label, acc in sorted(counts.items())}


def exclude_support(
    ref, pred, support_times, tolerance: float = TOLERANCE
) -> tuple[list[float], list[float]]:
    """Strip the user-labeled examples from both sides before counting.

    Each support time is removed from the references (it must be one),
    and claims at most one prediction within +/- tolerance, nearest first.
    """
    ref = list(ref)
    pred = list(pred)
    for s in support_times:
        if s not in ref:
            raise EvaluationError(f"support time {s} not present in reference onsets")
        ref.remove(s)
        candidates = [(abs(p - s), i) for i, p in enumerate(pred) if abs(p - s) <= tolerance]
        if candidates:
            _, idx = min(candidates)
            pred.pop(idx)
    return ref, pred


def polyphony_of(time: float, annotation: OnsetAnnotation, window: float = POLYPHONY_WINDOW) -> int:
    """Distinct sound classes with an onset inside the window around `time`."""
    half = window / 2.0
    labels = {lab for t, lab in annotation.events if abs(t - time) <= half + 1e-12}
    return len(labels)


def polyphony_bucket(count: int) -> str:
    if count <= 1:
        return "1"
    if count == 2:
        return "2"
    return "3+"


# --- Report ------------------------------------------------------------------

@dataclass
class EvalReport:
    micro: float
    macro: float
    macro_star: float
    per_class: dict[str, float]
    include_support: bool
    n_cells: int
    tolerance: float = TOLERANCE
    peak_params: PeakPickParams | None = None
    polyphony: dict[str, dict[str, float | None]] | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        doc = {
            "micro_f": self.micro,
            "macro_f": self.macro,
            "macro_star_f": self.macro_star,
            "per_class_f": self.per_class,
            "include_support": self.include_support,
            "n_cells": self.n_cells,
            "tolerance_seconds": self.tolerance,
        }
        if self.peak_params is not None:
            doc["peak_params"] = json.loads(self.peak_params.to_json())
        if self.polyphony is not None:
            doc["polyphony_f"] = self.polyphony
        doc.update(self.extra)
        return doc

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def build_report(
    cells: list[EvalCell],
    include_support: bool,
    vocabulary: list[str] | None = None,
    peak_params: PeakPickParams | None = None,
) -> EvalReport:
    return EvalReport(
        micro=aggregate(cells, "micro"),
        macro=aggregate(cells, "macro", vocabulary),
        macro_star=aggregate(cells, "macro_star", vocabulary),
        per_class=per_class_f(cells),
        include_support=include_support,
        n_cells=len(cells),
        peak_params=peak_params,
    )


# --- Dataset-level evaluation --------------------------------------------------

def eligible_classes(annotation: OnsetAnnotation, n_positives: int) -> list[str]:
    """Classes with more instances than the support size needs."""
    return sorted(lab for lab in annotation.labels if len(annotation.times_of(lab)) > n_positives)


def transcribe_dataset(
    weights,
    tracks,
    params: PeakPickParams,
    n_iterations: int = 10,
    n_positives: int = 5,
    seed: int = 0,
    target_classes: list[str] | None = None,
    embeddings: dict[str, TrackEmbeddings] | None = None,
) -> dict[tuple[str, str], list[IterationResult]]:
    """Run repeated few-shot transcription for every eligible (track, class).

    `embeddings` caches per-track frame embeddings across calls (the
    peak-parameter search and the include/exclude variants reuse them).
    """
    out: dict[tuple[str, str], list[IterationResult]] = {}
    for track in tracks:
        spec = track.mel
        if embeddings is not None and track.track_id in embeddings:
            track_emb = embeddings[track.track_id]
        else:
            track_emb = embed_track(weights, spec)
            if embeddings is not None:
                embeddings[track.track_id] = track_emb
        classes = eligible_classes(track.annotation, n_positives)
        if target_classes is not None:
            classes = [c for c in classes if c in target_classes]
        for label in classes:
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=seed, spawn_key=(hash_key(track.track_id), hash_key(label)))
            )
            out[(track.track_id, label)] = transcribe(
                weights,
                spec,
                track.annotation,
                label,
                params,
                n_iterations=n_iterations,
                n_positives=n_positives,
                rng=rng,
                track_id=track.track_id,
                track_emb=track_emb,
            )
    return out


def hash_key(text: str) -> int:
    """Stable small integer for seeding from strings (hash() is salted)."""
    acc = 0
    for ch in text:
        acc = (acc * 131 + ord(ch)) % (2**31 - 1)
    return acc


def cells_from_results(
    results: dict[tuple[str, str], list[IterationResult]],
    tracks,
    include_support: bool,
    tolerance: float = TOLERANCE,
) -> list[EvalCell]:
    """Match every iteration's onsets against the reference annotation."""
    annotations = {t.track_id: t.annotation for t in tracks}
    cells = []
    for (track_id, label), iterations in results.items():
        ref_all = annotations[track_id].times_of(label)
        for i, it in enumerate(iterations):
            if include_support:
                ref, pred = ref_all, list(it.onsets)
            else:
                ref, pred = exclude_support(ref_all, list(it.onsets), it.positive_times, tolerance)
            cells.append(
                EvalCell(
                    track_id=track_id,
                    class_label=label,
                    iteration=i,
                    match=match_onsets(ref, pred, tolerance),
                )
            )
    return cells


def rescore_results(
    results: dict[tuple[str, str], list[IterationResult]], params: PeakPickParams
) -> dict[tuple[str, str], list[IterationResult]]:
    """Re-run peak picking on cached probability curves (no model passes)."""
    out = {}
    for key, iterations in results.items():
        out[key] = [
            IterationResult(
                positive_times=it.positive_times,
                curve=it.curve,
                onsets=tuple(peak_pick(it.curve.values, params, hop_seconds=it.curve.hop_seconds)),
            )
            for it in iterations
        ]
    return out


def search_peak_params(
    results: dict[tuple[str, str], list[IterationResult]],
    tracks,
    rng: np.random.Generator,
    n_iters: int = 1000,
    include_support: bool = True,
    tolerance: float = TOLERANCE,
) -> tuple[PeakPickParams, float, list[tuple[PeakPickParams, float]]]:
    """Randomized search over peak parameters, maximizing micro F.

    Only peak picking and matching re-run per draw; the probability curves
    are fixed inputs.
    """
    trials = []
    best: tuple[PeakPickParams, float] | None = None
    for _ in range(n_iters):
        params = random_params(rng)
        rescored = rescore_results(results, params)
        cells = cells_from_results(rescored, tracks, include_support, tolerance)
        score = micro_f(cells)
        trials.append((params, score))
        if best is None or score > best[1]:
            best = (params, score)
    return best[0], best[1], trials


# --- Polyphony breakdown -------------------------------------------------------

def polyphony_breakdown(
    weights,
    tracks,
    params: PeakPickParams,
    target_classes: list[str] | None = None,
    n_iterations: int = 10,
    n_positives: int = 5,
    seed: int = 0,
    tolerance: float = TOLERANCE,
    embeddings: dict[str, TrackEmbeddings] | None = None,
) -> dict[str, dict[str, float | None]]:
    """F per (support polyphony x query polyphony) bucket.

    For each support bucket, positives are sampled only from target onsets
    with that polyphony; (track, class) pairs with fewer than n_positives
    such onsets are skipped. TP/FN land in the matched reference onset's
    bucket; FPs land in the bucket of the co-occurrence count at the
    predicted time (floored at 1).
    """
    counts = {s: {q: [0, 0, 0] for q in POLYPHONY_BUCKETS} for s in POLYPHONY_BUCKETS}
    populated = {s: {q: False for q in POLYPHONY_BUCKETS} for s in POLYPHONY_BUCKETS}
    if embeddings is None:
        embeddings = {}
    for track in tracks:
        ann = track.annotation
        spec = track.mel
        track_emb = embeddings.get(track.track_id)
        classes = eligible_classes(ann, n_positives)
        if target_classes is not None:
            classes = [c for c in classes if c in target_classes]
        poly_cache = {t: polyphony_of(t, ann, POLYPHONY_WINDOW) for t, _ in ann.events}
        for label in classes:
            times = ann.times_of(label)
            ref_buckets = {t: polyphony_bucket(poly_cache[t]) for t in times}
            for s_bucket in POLYPHONY_BUCKETS:
                pool = [t for t in times if ref_buckets[t] == s_bucket]
                if len(pool) < n_positives:
                    continue
                if track_emb is None:
                    track_emb = embed_track(weights, spec)
                    embeddings[track.track_id] = track_emb
                rng = np.random.default_rng(
                    np.random.SeedSequence(
                        entropy=seed,
                        spawn_key=(hash_key(track.track_id), hash_key(label), hash_key(s_bucket)),
                    )
                )
                for _ in range(n_iterations):
                    idx = rng.choice(len(pool), size=n_positives, replace=False)
                    positives = tuple(sorted(pool[i] for i in idx))
                    result = transcribe(
                        weights,
                        spec,
                        ann,
                        label,
                        params,
                        track_id=track.track_id,
                        track_emb=track_emb,
                        positive_times=positives,
                    )[0]
                    match = match_onsets(times, list(result.onsets), tolerance)
                    matched_refs = {r for r, _ in match.pairs}
                    matched_preds = {p for _, p in match.pairs}
                    for t in times:
                        q_bucket = ref_buckets[t]
                        populated[s_bucket][q_bucket] = True
                        if t in matched_refs:
                            counts[s_bucket][q_bucket][0] += 1
                        else:
                            counts[s_bucket][q_bucket][2] += 1
                    for p in result.onsets:
                        if p in matched_preds:
                            continue
                        q_bucket = polyphony_bucket(max(1, polyphony_of(p, ann, POLYPHONY_WINDOW)))
                        populated[s_bucket][q_bucket] = True
                        counts[s_bucket][q_bucket][1] += 1
    table: dict[str, dict[str, float | None]] = {}
    for s_bucket in POLYPHONY_BUCKETS:
        table[s_bucket] = {}
        for q_bucket in POLYPHONY_BUCKETS:
            if not populated[s_bucket][q_bucket]:
                table[s_bucket][q_bucket] = None
            else:
                table[s_bucket][q_bucket] = f_measure(*counts[s_bucket][q_bucket])
    return table


# --- Cross-validated search ----------------------------------------------------

def make_cv_splits(track_ids: list[str], n_folds: int = 3) -> dict[str, dict[str, list[str]]]:
    """Partition tracks into folds; fold k tests on part k, tunes on part k+1."""
    if len(track_ids) < n_folds:
        raise EvaluationError(f"need at least {n_folds} tracks for {n_folds}-fold CV")
    parts = [sorted(track_ids)[i::n_folds] for i in range(n_folds)]
    folds = {}
    for k in range(n_folds):
        folds[f"fold{k}"] = {
            "test": parts[k],
            "val": parts[(k + 1) % n_folds],
            "train": parts[(k + 2) % n_folds] if n_folds > 2 else [],
        }
    return folds


def save_cv_splits(folds: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(folds, indent=2) + "\n")


def load_cv_splits(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise EvaluationError(f"split manifest not found: {path}")
    return json.loads(path.read_text())


@dataclass
class FoldOutcome:
    fold: str
    params: PeakPickParams
    val_micro: float
    report: EvalReport


def cv_run(
    weights,
    tracks,
    folds: dict[str, dict[str, list[str]]],
    search_iters: int = 1000,
    n_iterations: int = 10,
    n_positives: int = 5,
    seed: int = 0,
    include_support: bool = True,
    vocabulary: list[str] | None = None,
    embeddings: dict[str, TrackEmbeddings] | None = None,
) -> tuple[list[FoldOutcome], EvalReport]:
    """Per fold: tune peak params on the val split, evaluate the test split.

    Returns per-fold outcomes plus a mean report (metric means over folds;
    per-class table pooled over folds).
    """
    by_id = {t.track_id: t for t in tracks}
    if embeddings is None:
        embeddings = {}
    outcomes = []
    all_cells = []
    base_params = PeakPickParams(delta=0.1, w1=2, w2=2, w3=2, w4=2, w5=2)
    for fold_name in sorted(folds):
        split = folds[fold_name]
        missing = [tid for tid in split["val"] + split["test"] if tid not in by_id]
        if missing:
            raise EvaluationError(f"{fold_name}: unknown track ids {missing}")
        val_tracks = [by_id[tid] for tid in split["val"]]
        test_tracks = [by_id[tid] for tid in split["test"]]

        val_results = transcribe_dataset(
            weights,
            val_tracks,
            base_params,
            n_iterations=n_iterations,
            n_positives=n_positives,
            seed=seed,
            embeddings=embeddings,
        )
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(hash_key(fold_name),)))
        params, val_micro, _ = search_peak_params(
            val_results, val_tracks, rng, n_iters=search_iters, include_support=include_support
        )

        test_results = transcribe_dataset(
            weights,
            test_tracks,
            params,
            n_iterations=n_iterations,
            n_positives=n_positives,
            seed=seed + 1,
            embeddings=embeddings,
        )
        cells = cells_from_results(test_results, test_tracks, include_support)
        all_cells.extend(cells)
        report = build_report(cells, include_support, vocabulary, peak_params=params)
        outcomes.append(FoldOutcome(fold=fold_name, params=params, val_micro=val_micro, report=report))

    mean_report = EvalReport(
        micro=float(np.mean([o.report.micro for o in outcomes])),
        macro=float(np.mean([o.report.macro for o in outcomes])),
        macro_star=float(np.mean([o.report.macro_star for o in outcomes])),
        per_class=per_class_f(all_cells),
        include_support=include_support,
        n_cells=len(all_cells),
        extra={"folds": [o.fold for o in outcomes]},
    )
    return outcomes, mean_report
