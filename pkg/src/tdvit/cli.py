"""Command-line pipeline: generate-data | pretrain | train | evaluate | gradcheck | report.

Flags mirror config-file keys one to one; precedence is flags > file >
defaults, and the effective values are printed to stderr at startup.
Diagnostics go to stderr, data to files or stdout. Exit code 0 means the
subcommand's contract was met. ``TDVIT_SEED`` supplies the default seed.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Dict, List, Optional

import numpy as np

from . import attention, datasynth, model, training
from .evaluate import evaluate as evaluate_model, read_scores_csv, roc_auc
from .checkpoint import load_checkpoint, load_named, save_checkpoint
from .gradcheck import finite_difference_check

GRADCHECK_TOLERANCE = 1e-4


def _default_seed() -> int:
    return int(os.environ.get("TDVIT_SEED", "0"))


class Option:
    """One setting shared by a CLI flag and a config-file key."""

    def __init__(self, name, type_, default, help_, choices=None):
        self.name = name  # flag/file key, dash-separated
        self.type = type_
        self.default = default
        self.help = help_
        self.choices = choices


def _bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes"):
        return True
    if text.lower() in ("0", "false", "no"):
        return False
    raise ValueError(f"expected a boolean, got '{text}'")


def _positive_float(text: str) -> float:
    value = float(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


MODEL_OPTIONS = [
    Option("mode", str, "ta", "temporal mode", choices=list(model.MODES)),
    Option("patch-size", int, 8, "square patch edge in pixels"),
    Option("dim", int, 64, "token embedding dimension"),
    Option("depth", int, 8, "encoder depth"),
    Option("heads", int, 8, "attention heads per layer"),
    Option("head-dim", int, 8, "per-head query/key/value dimension"),
    Option("decoder-depth", int, 2, "MAE decoder depth"),
    Option("pairwise-r", _bool, False, "pairwise |t_i - t_j| time distances"),
    Option("precision", str, "single", "numeric precision", choices=["single", "double"]),
]

TRAIN_OPTIONS = [
    Option("epochs", int, None, "training epochs (default: driver-specific)"),
    Option("batch-size", int, 32, "sequences per optimizer step"),
    Option("lr", float, None, "peak learning rate (default: driver-specific)"),
    Option("weight-decay", float, 0.05, "decoupled weight decay"),
    Option("warmup-frac", float, 0.05, "fraction of steps spent in linear warmup"),
    Option("clip-norm", float, 1.0, "global gradient-norm clip"),
    Option("mask-ratio", float, None, "MAE mask ratio (default: by sequence length)"),
    Option("workers", int, 1, "data-parallel shards per batch (1 = bit-reproducible)"),
    Option("augment", _bool, True, "train-time augmentation"),
    Option("seed", int, None, "run seed (default: TDVIT_SEED or 0)"),
]

GENERATOR_OPTIONS = [
    Option("variant", str, None, "protocol variant", choices=["v1", "v2"]),
    Option("n", int, None, "number of sequences"),
    Option("seed", int, None, "generator seed (default: TDVIT_SEED or 0)"),
    Option("image-size", int, 32, "frame edge in pixels"),
    Option("channels", int, 3, "frame channels"),
    Option("frames", int, 5, "scans per subject"),
    Option("growth-mean", float, 0.25, "benign growth mean, px/month"),
    Option("growth-std", float, 0.08, "growth standard deviation"),
    Option("init-diameter-mean", float, 3.0, "initial diameter mean, px"),
    Option("init-diameter-std", float, 0.5, "initial diameter std, px"),
    Option("intensity", float, 0.85, "nodule peak intensity"),
    Option("edge-softness", float, 2.0, "radial falloff exponent"),
    Option("interval-months", float, 3.0, "v1 scan spacing, months"),
    Option("schedule-step-mean", float, 1.0, "v2 per-frame diameter step mean, px"),
    Option("schedule-step-std", float, 0.3, "v2 diameter step std, px"),
]


def _add_options(parser: argparse.ArgumentParser, options: List[Option]) -> None:
    for opt in options:
        kwargs = {"default": None, "help": opt.help}
        if opt.choices:
            kwargs["choices"] = opt.choices
        parser.add_argument(f"--{opt.name}", type=opt.type, dest=opt.name, **kwargs)


def _resolve(
    args: argparse.Namespace,
    options: List[Option],
    file_values: Dict[str, str],
) -> Dict[str, object]:
    """Merge flags > file > defaults; report provenance on stderr."""
    known = {o.name: o for o in options}
    for key in file_values:
        if key not in known:
            raise ValueError(f"unknown config key '{key}' (valid: {', '.join(sorted(known))})")
    effective = {}
    for opt in options:
        flag_val = getattr(args, opt.name)
        if flag_val is not None:
            effective[opt.name] = flag_val
            source = "flag"
        elif opt.name in file_values:
            effective[opt.name] = opt.type(file_values[opt.name])
            source = "file"
        else:
            effective[opt.name] = opt.default
            source = "default"
        if opt.choices and effective[opt.name] is not None and effective[opt.name] not in opt.choices:
            raise ValueError(f"{opt.name} must be one of {opt.choices}")
        print(f"# {opt.name}={effective[opt.name]} ({source})", file=sys.stderr)
    return effective


def _file_values(args) -> Dict[str, str]:
    if getattr(args, "config", None):
        return training.parse_config_file(args.config)
    return {}


def _seeded(value: Optional[int]) -> int:
    return _default_seed() if value is None else value


def _model_config(opts: Dict[str, object], ds: datasynth.NoduleDataset) -> model.ModelConfig:
    _, h, w, c = ds.frames.shape[1:]
    return model.ModelConfig(
        dim=opts["dim"], heads=opts["heads"], depth=opts["depth"],
        head_dim=opts["head-dim"], mlp_hidden=4 * opts["dim"],
        patch_size=opts["patch-size"], mode=opts["mode"],
        pairwise_r=opts["pairwise-r"], frame_h=h, frame_w=w, channels=c,
        decoder_depth=opts["decoder-depth"], precision=opts["precision"],
    )


def _train_config(opts, default_epochs, default_lr) -> training.TrainConfig:
    return training.TrainConfig(
        epochs=opts["epochs"] if opts["epochs"] is not None else default_epochs,
        batch_size=opts["batch-size"],
        lr=opts["lr"] if opts["lr"] is not None else default_lr,
        weight_decay=opts["weight-decay"],
        warmup_frac=opts["warmup-frac"],
        clip_norm=opts["clip-norm"],
        mask_ratio=opts["mask-ratio"],
        seed=_seeded(opts["seed"]),
        workers=opts["workers"],
        augment=opts["augment"],
    )


# -- subcommands -----------------------------------------------------------------


def cmd_generate_data(args) -> int:
    opts = _resolve(args, GENERATOR_OPTIONS, _file_values(args))
    if opts["variant"] is None or opts["n"] is None:
        raise ValueError("generate-data requires --variant and --n")
    spec = datasynth.GeneratorSpec(
        image_size=opts["image-size"], channels=opts["channels"], frames=opts["frames"],
        benign_growth_mean=opts["growth-mean"], growth_std=opts["growth-std"],
        init_diameter_mean=opts["init-diameter-mean"],
        init_diameter_std=opts["init-diameter-std"],
        intensity=opts["intensity"], edge_softness=opts["edge-softness"],
        interval_months=opts["interval-months"],
        schedule_step_mean=opts["schedule-step-mean"],
        schedule_step_std=opts["schedule-step-std"],
        background=args.backgrounds if args.backgrounds else "noise",
        variant=opts["variant"], seed=_seeded(opts["seed"]),
    )
    ds = datasynth.generate_dataset(spec, opts["n"], spec.seed, path=args.out)
    gaps = datasynth.interval_stats(ds)
    print(f"dataset: {args.out}")
    print(f"variant: {spec.variant}  n: {len(ds)}  frames: {ds.num_frames}")
    print(f"labels: benign={int(np.sum(ds.labels == 0))} malignant={int(np.sum(ds.labels == 1))}")
    print(f"mean inter-scan gap (months): benign={gaps['benign']:.3f} "
          f"malignant={gaps['malignant']:.3f}")
    return 0


def cmd_pretrain(args) -> int:
    opts = _resolve(args, MODEL_OPTIONS + TRAIN_OPTIONS, _file_values(args))
    ds = datasynth.load_dataset(args.data)
    config = _model_config(opts, ds)
    train = _train_config(opts, default_epochs=30, default_lr=1e-3)
    params = model.init_weights(config, train.seed)
    params, losses, metrics = training.pretrain_mae(ds, params, config, train)
    params.classifier = None  # MAE checkpoints carry encoder + decoder only
    save_checkpoint(args.out, params, config)
    metrics_path = args.metrics or f"{args.out}.metrics.csv"
    training.write_metrics_csv(metrics_path, metrics)
    print(f"pretrained checkpoint: {args.out}")
    print(f"final mae_loss: {losses[-1]:.6f} over {len(losses)} steps")
    return 0


def cmd_train(args) -> int:
    opts = _resolve(args, MODEL_OPTIONS + TRAIN_OPTIONS, _file_values(args))
    ds = datasynth.load_dataset(args.data)
    config = _model_config(opts, ds)
    train = _train_config(opts, default_epochs=20, default_lr=3e-4)
    params = model.init_weights(config, train.seed)
    if args.init != "random":
        named, ck_config = load_named(args.init)
        if ck_config.mode != config.mode:
            raise ValueError(
                f"checkpoint mode '{ck_config.mode}' does not match requested '{config.mode}'"
            )
        training.load_encoder_from(params, named, config)
    val = datasynth.load_dataset(args.val_data) if args.val_data else None
    params, metrics = training.train_classifier(ds, params, config, train, val=val)
    params.mask_token = None  # fine-tuned checkpoints drop the MAE branch
    params.decoder = None
    params.decoder_norm_scale = None
    params.decoder_norm_offset = None
    params.decoder_pred = None
    save_checkpoint(args.out, params, config)
    metrics_path = args.metrics or f"{args.out}.metrics.csv"
    training.write_metrics_csv(metrics_path, metrics)
    print(f"trained checkpoint: {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    params, config = load_checkpoint(args.checkpoint)
    if params.classifier is None:
        raise ValueError(f"checkpoint missing classifier head: '{args.checkpoint}'")
    ds = datasynth.load_dataset(args.data)
    scores_path = args.scores or f"{args.checkpoint}.scores.csv"
    roc_path = args.roc or f"{args.checkpoint}.roc.csv"
    report = evaluate_model(params, config, ds, scores_path, roc_path)
    print(f"AUC {report['auc']:.4f}")
    print(f"accuracy {report['accuracy']:.4f} over {report['n']} samples")
    print(f"scores: {scores_path}", file=sys.stderr)
    print(f"roc: {roc_path}", file=sys.stderr)
    return 0


def cmd_gradcheck(args) -> int:
    eps = args.eps if args.eps is not None else 1e-5
    seed = _seeded(args.seed)
    config = model.ModelConfig(
        dim=8, heads=2, depth=1, head_dim=4, mlp_hidden=32, patch_size=4,
        mode=args.mode, frame_h=8, frame_w=8, channels=1, decoder_depth=1,
        precision="double",
    )
    rng = np.random.default_rng(seed)
    params = model.init_weights(config, seed)
    params.classifier = model.Tensor(rng.normal(size=(8, 1)) * 0.3, requires_grad=True)
    frames = rng.random((1, 2, 8, 8, 1))
    times = np.cumsum(rng.uniform(1.0, 8.0, size=(1, 2)), axis=1)
    labels = np.array([1.0])
    plan = model.sample_mask(2, 4, 0.5, rng)

    def classify_loss(_):
        logits = model.forward_logits(params, config, frames, times)
        return model.bce_with_logits(logits, labels)

    def mae_loss(_):
        loss, _ = model.forward_mae_batch(params, config, frames, times, plan.masked[None])
        return loss

    failed = False
    for name, tensor in params.named().items():
        on_mae_path = name.startswith("decoder") or name in ("mask_token", "decoder_pred")
        f = mae_loss if on_mae_path else classify_loss
        err = finite_difference_check(f, [tensor], eps=eps)
        ok = err < GRADCHECK_TOLERANCE
        failed |= not ok
        print(f"{name:40s} max_rel_err {err:.3e} {'PASS' if ok else 'FAIL'}")
    print(f"gradcheck mode={args.mode}: {'PASS' if not failed else 'FAIL'}", file=sys.stderr)
    return 1 if failed else 0


def cmd_report(args) -> int:
    runs = []
    for item in args.scores:
        if "=" not in item:
            raise ValueError(f"expected LABEL=PATH, got '{item}'")
        label, path = item.split("=", 1)
        mode = label.split(":", 1)[0]
        auc = roc_auc(read_scores_csv(path))
        runs.append((mode, label, auc))
    modes = sorted({mode for mode, _, _ in runs})
    print(f"{'run':24s} {'auc':>8s}")
    for mode, label, auc in runs:
        print(f"{label:24s} {auc:8.4f}")
    print()
    print(f"{'mode':12s} {'n':>3s} {'mean_auc':>9s} {'std_auc':>8s}")
    lines = ["mode,n,mean_auc,std_auc"]
    for mode in modes:
        aucs = np.array([a for m, _, a in runs if m == mode])
        print(f"{mode:12s} {len(aucs):3d} {aucs.mean():9.4f} {aucs.std():8.4f}")
        lines.append(f"{mode},{len(aucs)},{aucs.mean():.6f},{aucs.std():.6f}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        print(f"report csv: {args.out}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tdvit",
        description="Time-distance vision transformers on synthetic longitudinal nodules.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="write a synthetic dataset (TDDS)")
    p.add_argument("--out", required=True, help="output dataset path")
    p.add_argument("--backgrounds", default=None, help="optional CIFAR-10 binary batch")
    p.add_argument("--config", default=None, help="key=value config file")
    _add_options(p, GENERATOR_OPTIONS)
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("pretrain", help="masked-autoencoder pretraining")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--metrics", default=None, help="metric CSV path (default: <out>.metrics.csv)")
    p.add_argument("--config", default=None)
    _add_options(p, MODEL_OPTIONS + TRAIN_OPTIONS)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="classifier fine-tuning")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--init", default="random", help="'random' or an MAE checkpoint path")
    p.add_argument("--val-data", default=None)
    p.add_argument("--metrics", default=None)
    p.add_argument("--config", default=None)
    _add_options(p, MODEL_OPTIONS + TRAIN_OPTIONS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a dataset with a trained checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scores", default=None, help="scores CSV path")
    p.add_argument("--roc", default=None, help="ROC CSV path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="verify gradients against central differences")
    p.add_argument("--mode", default="ta", choices=list(model.MODES))
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--eps", type=_positive_float, default=None)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("report", help="aggregate evaluate outputs into a comparison table")
    p.add_argument("--scores", nargs="+", required=True, metavar="LABEL=PATH")
    p.add_argument("--out", default=None, help="machine-readable CSV path")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
