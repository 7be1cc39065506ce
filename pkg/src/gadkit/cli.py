"""Command-line entry point.

Subcommands: evaluate, stats, train-toy, infer, baseline, synth, gradcheck.
Exit codes: 0 success, 1 input error (bad files, schema violations, bad
arguments), 2 numerical failure (divergence, failed gradient check).
"""

from __future__ import annotations

import argparse
import json
import sys

from . import autodiff as ad
from . import metrics, model, synth, training
from .baseline import baseline_predict
from .data import (
    load_dataset,
    load_features,
    load_predictions,
    save_predictions,
)
from .errors import DivergenceError, GadError
from .rng import SplitMix64


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; 2 is reserved for numerical failure
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_model_flags(p: argparse.ArgumentParser, dim_default: int) -> None:
    p.add_argument("--dim", type=int, default=dim_default, help="embedding width")
    p.add_argument("--k-tokens", type=int, default=12, help="group slots")
    p.add_argument("--layers", type=int, default=6)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--mu", type=float, default=0.2, help="distance-mask radius")
    p.add_argument("--frames", type=int, default=5, help="sampled frames per clip")
    p.add_argument("--scene-tokens", type=int, default=4)
    p.add_argument("--classes", type=int, default=6, help="activity classes")


def _add_loss_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lambda-mem", type=float, default=5.0)
    p.add_argument("--lambda-con", type=float, default=2.0)
    p.add_argument("--tau", type=float, default=0.2)


def _model_config(args) -> model.ModelConfig:
    return model.ModelConfig(
        dim=args.dim,
        heads=args.heads,
        layers=args.layers,
        group_tokens=args.k_tokens,
        num_classes=args.classes,
        mask_threshold=args.mu,
        frames=args.frames,
        scene_tokens=args.scene_tokens,
    )


def build_parser() -> _Parser:
    parser = _Parser(prog="gadkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("dataset")
    p.add_argument("predictions")
    p.add_argument("--theta", type=float, nargs="+", default=[1.0, 0.5])
    p.add_argument("--json", dest="json_out", help="also write the report as JSON")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("stats", help="dataset summary statistics")
    p.add_argument("dataset")
    p.add_argument("--frame", type=int, default=0, help="key frame for geometry stats")
    p.add_argument("--csv-dir", help="write histogram CSVs into this directory")
    p.add_argument("--json", dest="json_out")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("synth", help="generate a synthetic dataset + features")
    p.add_argument("dataset")
    p.add_argument("features")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clips", type=int, default=4)
    p.add_argument("--actors", type=int, nargs=2, default=[8, 10], metavar=("LO", "HI"))
    p.add_argument("--groups", type=int, nargs=2, default=[2, 2], metavar=("LO", "HI"))
    p.add_argument("--group-size", type=int, nargs=2, default=[2, 4], metavar=("LO", "HI"))
    p.add_argument("--outlier-fraction", type=float, default=0.25)
    p.add_argument("--tightness", type=float, default=0.5)
    p.add_argument("--noise", type=float, default=0.05, help="feature noise level")
    p.add_argument("--classes", type=int, default=6)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--num-frames", type=int, default=8)
    p.add_argument("--scene-tokens", type=int, default=4)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-toy", help="train on a small dataset (or a generated toy)")
    p.add_argument("--data", help="dataset JSON; omitted = generate the default toy")
    p.add_argument("--features", help="features JSON (required with --data)")
    p.add_argument("--out", default="toy_checkpoint.json")
    p.add_argument("--curve", default="toy_curve.csv")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--lr", type=float, default=5e-3, help="peak learning rate")
    p.add_argument("--lr-init", type=float, default=None, help="warmup start (default lr/10)")
    p.add_argument("--warmup-epochs", type=int, default=5)
    p.add_argument("--no-distance-mask", action="store_true")
    _add_model_flags(p, dim_default=32)
    _add_loss_flags(p)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("infer", help="run a checkpoint over a dataset")
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.add_argument("features")
    p.add_argument("--out", default="predictions.json")
    p.add_argument("--threshold", type=float, default=0.5, help="membership cutoff")
    p.add_argument("--min-group-size", type=int, default=2)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("baseline", help="spectral-clustering baseline predictions")
    p.add_argument("dataset")
    p.add_argument("features", nargs="?", help="needed for cosine affinity")
    p.add_argument("--k-clusters", "--k", dest="k_clusters", type=int, default=3)
    p.add_argument("--affinity", choices=["cosine", "rbf"], default="cosine")
    p.add_argument("--bandwidth", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=6)
    p.add_argument("--out", default="baseline_predictions.json")
    p.add_argument("--theta", type=float, nargs="+", default=[1.0, 0.5])
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--actors", type=int, default=3)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--h", type=float, default=1e-5)
    _add_loss_flags(p)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def cmd_evaluate(args) -> int:
    clips = load_dataset(args.dataset)
    preds = load_predictions(args.predictions, clips)
    reports = metrics.evaluate(clips, preds, thetas=args.theta)
    for report in reports:
        print(report.to_table())
        print()
    cm = metrics.confusion_matrix(clips, preds)
    print("confusion matrix (rows = truth, cols = prediction, 0 = no activity)")
    for row in cm:
        print("  " + " ".join(f"{int(v):>4}" for v in row))
    if args.json_out:
        payload = {
            "reports": [r.to_json() for r in reports],
            "confusion_matrix": cm.tolist(),
        }
        with open(args.json_out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
    return 0


def cmd_stats(args) -> int:
    from .stats import compute_stats

    clips = load_dataset(args.dataset)
    summary = compute_stats(clips, frame_index=args.frame)
    print(json.dumps(summary.to_json(), indent=2))
    if args.csv_dir:
        for path in summary.write_csvs(args.csv_dir):
            print(f"wrote {path}")
    if args.json_out:
        with open(args.json_out, "w", encoding="utf-8") as fh:
            json.dump(summary.to_json(), fh, indent=2)
    return 0


def cmd_synth(args) -> int:
    spec = synth.SynthSpec(
        num_clips=args.clips,
        actors=tuple(args.actors),
        groups=tuple(args.groups),
        group_size=tuple(args.group_size),
        outlier_fraction=args.outlier_fraction,
        tightness=args.tightness,
        feature_noise=args.noise,
        num_classes=args.classes,
        seed=args.seed,
        feature_dim=args.dim,
        num_frames=args.num_frames,
        scene_tokens=args.scene_tokens,
    )
    synth.write_synth(spec, args.dataset, args.features)
    print(f"wrote {args.dataset} and {args.features}")
    return 0


def _toy_inputs(args):
    if args.data:
        if not args.features:
            raise GadError("--features is required with --data")
        clips = load_dataset(args.data)
        feats = load_features(args.features)
    else:
        clips, feats = synth.generate(synth.SynthSpec(seed=args.seed))
    return clips, feats


def cmd_train_toy(args) -> int:
    clips, feats = _toy_inputs(args)
    cfg = _model_config(args)
    schedule = training.TrainSchedule(
        epochs=args.epochs,
        batch_size=args.batch,
        lr_init=args.lr / 10.0 if args.lr_init is None else args.lr_init,
        lr_peak=args.lr,
        warmup_epochs=min(args.warmup_epochs, args.epochs) if args.epochs else 0,
        lambda_mem=args.lambda_mem,
        lambda_con=args.lambda_con,
        tau=args.tau,
        seed=args.seed,
    )
    params = model.init_params(cfg, SplitMix64(args.seed))
    rows = [("epoch", "loss", "lr")]
    if args.epochs > 0:
        history = training.train(
            cfg, params, clips, feats, schedule,
            use_distance_mask=not args.no_distance_mask,
        )
        for epoch, loss in enumerate(history):
            rows.append((epoch, repr(loss), repr(schedule.lr_at(epoch))))
    with open(args.curve, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")
    model.save_checkpoint(cfg, params, args.out)
    print(f"wrote {args.out} and {args.curve}")

    preds = [
        model.predict_clip(cfg, params, clip, feats[clip.clip_id]) for clip in clips
    ]
    for report in metrics.evaluate(clips, preds):
        print(report.to_table())
        print()
    return 0


def cmd_infer(args) -> int:
    cfg, params = model.load_checkpoint(args.checkpoint)
    clips = load_dataset(args.dataset)
    feats = load_features(args.features)
    preds = [
        model.predict_clip(
            cfg,
            params,
            clip,
            feats[clip.clip_id],
            score_threshold=args.threshold,
            min_group_size=args.min_group_size,
        )
        for clip in clips
    ]
    save_predictions(preds, args.out)
    print(f"wrote {args.out} ({len(preds)} clips)")
    return 0


def cmd_baseline(args) -> int:
    clips = load_dataset(args.dataset)
    feats = load_features(args.features) if args.features else {}
    preds = []
    for clip in clips:
        f = feats.get(clip.clip_id)
        if args.affinity == "cosine" and f is None:
            raise GadError(f"cosine affinity needs features for clip {clip.clip_id!r}")
        preds.append(
            baseline_predict(
                clip,
                f,
                args.k_clusters,
                kind=args.affinity,
                bandwidth=args.bandwidth,
                seed=args.seed,
                num_classes=args.classes,
            )
        )
    save_predictions(preds, args.out)
    print(f"wrote {args.out}")
    for report in metrics.evaluate(clips, preds, thetas=args.theta):
        print(report.to_table())
        print()
    return 0


def cmd_gradcheck(args) -> int:
    cfg = model.ModelConfig(
        dim=8, heads=2, layers=1, group_tokens=2, num_classes=3,
        mask_threshold=0.2, frames=1, scene_tokens=2,
    )
    rng = SplitMix64(args.seed)
    spec = synth.SynthSpec(
        num_clips=1,
        actors=(args.actors, args.actors),
        groups=(1, 1),
        group_size=(2, 2),
        outlier_fraction=0.4,
        num_classes=cfg.num_classes,
        seed=args.seed,
        feature_dim=cfg.dim,
        num_frames=2,
        scene_tokens=cfg.scene_tokens,
    )
    clips, feats = synth.generate(spec)
    clip = clips[0]
    actor, scene, boxes = model.build_inputs(clip, feats[clip.clip_id], cfg.frames)
    params = model.init_params(cfg, rng)
    schedule = training.TrainSchedule(
        lambda_mem=args.lambda_mem, lambda_con=args.lambda_con, tau=args.tau
    )

    def loss():
        out = model.forward(cfg, params, actor, scene, boxes)
        return training.clip_loss(out, clip, schedule).total(
            schedule.lambda_mem, schedule.lambda_con
        )

    report = ad.grad_check(loss, list(params.values()), h=args.h, tol=args.tol)
    print(
        f"max relative error {report.max_rel_error:.3e} "
        f"(worst {report.worst_param}[{report.worst_index}])"
    )
    if not report.passed:
        print("gradient check FAILED", file=sys.stderr)
        return 2
    print("gradient check passed")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (GadError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
