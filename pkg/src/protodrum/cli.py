"""Command-line entry points.

Subcommands: synth, train, transcribe, evaluate, search, serve. Any
failure exits nonzero with a single machine-parsable JSON error line on
stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np


def _fail(code: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": {"code": code, "message": message}}) + "\n")
    return 2


def _parse_polyphony(text: str) -> dict[int, float]:
    weights = {}
    for part in text.split(","):
        size, w = part.split(":")
        weights[int(size)] = float(w)
    return weights


def _load_model(path: str):
    from .neuralnet import load_weights

    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"checkpoint not found: {p}")
    return load_weights(p)


def _tracks(manifest: str, vocab_path: str | None = None):
    from .audio_io import load_vocabulary
    from .corpus import load_manifest, with_vocabulary

    tracks = load_manifest(manifest)
    if vocab_path:
        tracks = with_vocabulary(tracks, load_vocabulary(vocab_path))
    return tracks


def cmd_synth(args) -> int:
    from .synthkit import generate_corpus

    split_plan = tuple(int(x) for x in args.split.split(","))
    manifest = generate_corpus(
        args.out,
        n_kits=args.kits,
        tracks_per_kit=args.tracks_per_kit,
        split_plan=split_plan,  # type: ignore[arg-type]
        seed=args.seed,
        duration=args.duration,
        base_rate=args.base_rate,
        polyphony_weights=_parse_polyphony(args.polyphony),
        accompaniment=args.accompaniment,
        n_classes=args.classes,
    )
    print(manifest)
    return 0


def cmd_train(args) -> int:
    from .episodes import TrainConfig, train
    from .reporting import save_training_curves

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = TrainConfig(
        max_episodes=args.episodes,
        eval_every=args.eval_every,
        patience=args.patience,
        seed=args.seed,
        excluded_classes=tuple(args.exclude),
        lr=args.lr,
        val_episodes=args.val_episodes,
    )
    result = train(
        _tracks(args.manifest),
        config,
        log_path=out / "training_log.jsonl",
        checkpoint_path=out / "model.ckpt",
    )
    save_training_curves(result.log, out / "training_curves.png")
    last = result.log[-1]
    print(
        json.dumps(
            {
                "episodes": int(result.episode_losses.size),
                "best_episode": result.best_episode,
                "best_val_loss": result.best_val_loss,
                "final_val_acc": last.val_acc,
                "checkpoint": str(out / "model.ckpt"),
                "wall_seconds": round(result.wall_seconds, 1),
            }
        )
    )
    return 0


def cmd_transcribe(args) -> int:
    from .peakpick import PeakPickParams
    from .reporting import save_probability_figure
    from .transcriber import save_transcription, transcribe

    tracks = _tracks(args.manifest, args.vocab)
    by_id = {t.track_id: t for t in tracks}
    if args.track not in by_id:
        raise KeyError(f"unknown track {args.track!r}")
    track = by_id[args.track]
    weights = _load_model(args.checkpoint)
    params = PeakPickParams.load(args.params) if args.params else PeakPickParams(
        delta=0.1, w1=3, w2=3, w3=5, w4=5, w5=3
    )
    positive_times = None
    n_iterations = args.iterations
    if args.times:
        positive_times = tuple(float(x) for x in args.times.split(","))
        n_iterations = 1
    results = transcribe(
        weights,
        track.mel,
        track.annotation,
        args.target,
        params,
        n_iterations=n_iterations,
        n_positives=args.positives,
        rng=np.random.default_rng(args.seed),
        track_id=track.track_id,
        positive_times=positive_times,
    )
    out = Path(args.out) if args.out else Path(f"{track.track_id}.{args.target}.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_transcription(results, args.target, out, dump_curves=args.dump_curves)
    if args.figure:
        save_probability_figure(
            results[0].curve.values,
            list(results[0].onsets),
            list(results[0].positive_times),
            out.with_suffix(".png"),
            title=f"{track.track_id} / {args.target}",
        )
    print(out)
    return 0


def cmd_evaluate(args) -> int:
    from .corpus import split_tracks
    from .evaluation import (
        build_report,
        cells_from_results,
        polyphony_breakdown,
        transcribe_dataset,
    )
    from .peakpick import PeakPickParams
    from .reporting import (
        save_per_class_csv,
        save_per_class_figure,
        save_polyphony_csv,
        save_polyphony_figure,
    )

    tracks = _tracks(args.manifest, args.vocab)
    subset = split_tracks(tracks, args.split) if args.split else tracks
    if not subset:
        raise ValueError(f"no tracks in split {args.split!r}")
    weights = _load_model(args.checkpoint)
    params = PeakPickParams.load(args.params) if args.params else PeakPickParams(
        delta=0.1, w1=3, w2=3, w3=5, w4=5, w5=3
    )
    include = not args.exclude_support
    target_classes = args.classes.split(",") if args.classes else None
    embeddings: dict = {}
    results = transcribe_dataset(
        weights,
        subset,
        params,
        n_iterations=args.iterations,
        n_positives=args.positives,
        seed=args.seed,
        target_classes=target_classes,
        embeddings=embeddings,
    )
    if not results:
        raise ValueError("no (track, class) pairs were eligible for evaluation")
    cells = cells_from_results(results, subset, include_support=include)
    vocabulary = sorted({label for t in subset for label in t.annotation.labels})
    report = build_report(cells, include, vocabulary, peak_params=params)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / "report.json")
    save_per_class_csv(report, out / "per_class.csv")
    save_per_class_figure(report, out / "per_class_f.png")
    if args.polyphony_breakdown:
        table = polyphony_breakdown(
            weights,
            subset,
            params,
            target_classes=target_classes,
            n_iterations=args.iterations,
            n_positives=args.positives,
            seed=args.seed,
            embeddings=embeddings,
        )
        report.polyphony = table
        report.save(out / "report.json")
        save_polyphony_csv(table, out / "polyphony.csv")
        save_polyphony_figure(table, out / "polyphony_f.png")
    print(
        json.dumps(
            {
                "micro_f": report.micro,
                "macro_f": report.macro,
                "macro_star_f": report.macro_star,
                "include_support": include,
                "report": str(out / "report.json"),
            }
        )
    )
    return 0


def cmd_search(args) -> int:
    from .corpus import split_tracks
    from .evaluation import cv_run, make_cv_splits, load_cv_splits, save_cv_splits
    from .reporting import save_per_class_csv, save_per_class_figure

    tracks = _tracks(args.manifest, args.vocab)
    subset = split_tracks(tracks, args.split) if args.split else tracks
    if not subset:
        raise ValueError(f"no tracks in split {args.split!r}")
    weights = _load_model(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.cv_splits:
        folds = load_cv_splits(args.cv_splits)
    else:
        folds = make_cv_splits([t.track_id for t in subset], args.folds)
        save_cv_splits(folds, out / "cv_splits.json")
    outcomes, mean_report = cv_run(
        weights,
        subset,
        folds,
        search_iters=args.search_iters,
        n_iterations=args.iterations,
        n_positives=args.positives,
        seed=args.seed,
        include_support=not args.exclude_support,
    )
    for outcome in outcomes:
        outcome.params.save(out / f"{outcome.fold}_params.json")
        outcome.report.save(out / f"{outcome.fold}_report.json")
    mean_report.save(out / "cv_report.json")
    save_per_class_csv(mean_report, out / "per_class.csv")
    save_per_class_figure(mean_report, out / "per_class_f.png")
    print(
        json.dumps(
            {
                "folds": {o.fold: {"val_micro_f": o.val_micro, "test_micro_f": o.report.micro} for o in outcomes},
                "mean_micro_f": mean_report.micro,
                "report": str(out / "cv_report.json"),
            }
        )
    )
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    port = int(os.environ.get("PROTODRUM_PORT", args.port))
    app = create_app(args.checkpoint, args.manifest, static_dir=args.static)
    uvicorn.run(app, host=args.host, port=port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="protodrum",
        description="Few-shot percussion transcription toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic training corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--kits", type=int, default=8)
    p.add_argument("--tracks-per-kit", type=int, default=8)
    p.add_argument("--split", default="5,1,2", help="kits per train,val,test")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=float, default=16.0)
    p.add_argument("--base-rate", type=float, default=1.3)
    p.add_argument("--polyphony", default="1:0.95,2:0.05")
    p.add_argument("--accompaniment", action="store_true")
    p.add_argument("--classes", type=int, default=12)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="episodic training with early stopping")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--episodes", type=int, default=100_000)
    p.add_argument("--eval-every", type=int, default=500)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--val-episodes", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--exclude", action="append", default=[], help="class label to hold out of training")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("transcribe", help="few-shot transcription of one track/class")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--track", required=True)
    p.add_argument("--target", required=True, help="target class label")
    p.add_argument("--params", help="peak-picking params JSON")
    p.add_argument("--iterations", type=int, default=10)
    p.add_argument("--positives", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--times", help="comma-separated positive times (interactive mode)")
    p.add_argument("--out")
    p.add_argument("--dump-curves", action="store_true")
    p.add_argument("--figure", action="store_true")
    p.add_argument("--vocab")
    p.set_defaults(func=cmd_transcribe)

    p = sub.add_parser("evaluate", help="dataset evaluation with fixed peak params")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--params")
    p.add_argument("--iterations", type=int, default=10)
    p.add_argument("--positives", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--include-support", action="store_true", default=True)
    group.add_argument("--exclude-support", action="store_true")
    p.add_argument("--vocab", help="raw->target label mapping file")
    p.add_argument("--classes", help="comma-separated target class subset")
    p.add_argument("--polyphony-breakdown", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("search", help="cross-validated randomized peak-parameter search")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--folds", type=int, default=3)
    p.add_argument("--cv-splits", help="existing fold manifest JSON")
    p.add_argument("--search-iters", type=int, default=1000)
    p.add_argument("--iterations", type=int, default=10)
    p.add_argument("--positives", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--exclude-support", action="store_true")
    p.add_argument("--vocab")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("serve", help="HTTP service for the browser UI")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--static", help="directory with the built UI", default=None)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 130
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        return _fail(type(exc).__name__, str(exc))


if __name__ == "__main__":
    sys.exit(main())
