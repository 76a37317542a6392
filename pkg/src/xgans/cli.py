"""Command-line entry point: ``xgans {corrupt,train,reconstruct,evaluate,plot}``.

Exit codes: 0 success, 2 configuration error, 3 runtime or numeric failure.
``XGANS_OUTPUT_ROOT`` prefixes relative output directories and
``XGANS_CACHE_DIR`` points at pretrained-weight caches.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .corruption import CorruptionKind, CorruptionSpec, corrupt, save_sample, to_uint8
from .dataset import CorruptionSampler, DatasetIOError, TrainingData, list_images, load_and_normalize, split_manifest
from .evaluation import ablate_point_loss, evaluate_grid, MetricsReport, plot_report, reconstruct
from .losses import NumericFailure
from .perceptual import ExtractorUnavailable
from .training import CheckpointError, TrainConfig, load_checkpoint, train_loop

log = logging.getLogger("xgans")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

KIND_ALIASES = {
    "uniform": CorruptionKind.UNIFORM_POINTS_WHITE,
    "feature": CorruptionKind.FEATURE_POINTS_WHITE,
    "noise": CorruptionKind.UNIFORM_POINTS_COLOR_NOISE,
    "block": CorruptionKind.CENTER_WHITE_BLOCK,
    "clutter": CorruptionKind.CLUTTER_COLOR_BLOCK,
}


class ConfigError(Exception):
    def __init__(self, errors):
        self.errors = [errors] if isinstance(errors, str) else list(errors)
        super().__init__("; ".join(self.errors))


def parse_kind(text):
    try:
        return KIND_ALIASES.get(text) or CorruptionKind(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"unknown corruption kind {text!r}") from None


def parse_floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def output_dir(path):
    path = Path(path)
    root = os.environ.get("XGANS_OUTPUT_ROOT")
    if root and not path.is_absolute():
        path = Path(root) / path
    path.mkdir(parents=True, exist_ok=True)
    return path


def make_spec(kind, keep=None, block=None, seed=0):
    kind = CorruptionKind(kind)
    if kind.is_point:
        return CorruptionSpec(kind, keep_fraction=keep if keep is not None else 0.1, seed=seed)
    return CorruptionSpec(kind, block_size=block if block is not None else 128, seed=seed)


# ---------------------------------------------------------------------------
# experiment config


@dataclass
class ExperimentConfig:
    data_dir: Optional[str] = None
    donor_dir: Optional[str] = None
    out_dir: str = "runs/xgans"
    train_count: Optional[int] = None
    val_count: int = 0
    train: TrainConfig = field(default_factory=lambda: TrainConfig(max_iterations=100_000))

    def validate(self):
        errors = list(self.train.validate())
        if not self.data_dir:
            errors.append("data_dir is required")
        elif not Path(self.data_dir).is_dir():
            errors.append(f"data_dir does not exist: {self.data_dir}")
        if self.train.task.needs_donor:
            if not self.donor_dir:
                errors.append("clutter_color_block training needs donor_dir")
            elif not Path(self.donor_dir).is_dir():
                errors.append(f"donor_dir does not exist: {self.donor_dir}")
        if self.train_count is not None and self.train_count < 1:
            errors.append("train_count must be >= 1")
        if self.val_count < 0:
            errors.append("val_count must be >= 0")
        return errors

    def to_dict(self):
        return {
            "data_dir": self.data_dir,
            "donor_dir": self.donor_dir,
            "out_dir": self.out_dir,
            "train_count": self.train_count,
            "val_count": self.val_count,
            "train": self.train.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "train" in d:
            d["train"] = TrainConfig.from_dict(d["train"])
        return cls(**d)


def _set(obj, path, value):
    *head, last = path.split(".")
    for part in head:
        obj = getattr(obj, part)
    setattr(obj, last, value)


def experiment_from_args(args):
    errors = []
    cfg = ExperimentConfig()
    if args.config:
        try:
            cfg = ExperimentConfig.from_dict(json.loads(Path(args.config).read_text()))
        except (OSError, ValueError, TypeError, KeyError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    overrides = {
        "data_dir": args.data,
        "donor_dir": args.donor,
        "out_dir": args.out,
        "train_count": args.train_count,
        "val_count": args.val_count,
        "train.learning_rate": args.lr,
        "train.batch_size": args.batch_size,
        "train.seed": args.seed,
        "train.image_size": args.image_size,
        "train.checkpoint_every": args.checkpoint_every,
        "train.sample_every": args.sample_every,
        "train.extractor": args.extractor,
        "train.generator.dropout_rate": args.dropout,
        "train.weights.lambda_fm": args.lambda_fm,
        "train.weights.lambda_vgg": args.lambda_vgg,
        "train.weights.lambda_point": args.lambda_point,
        "train.weights.d_aggregation": args.d_aggregation,
        "train.weights.adversarial_mode": args.adversarial_mode,
        "train.weights.point_norm": args.point_norm,
    }
    for key, value in overrides.items():
        if value is not None:
            _set(cfg, key, value)
    if args.max_iterations is not None:
        cfg.train.max_iterations, cfg.train.epochs = args.max_iterations, None
    if args.epochs is not None:
        cfg.train.epochs, cfg.train.max_iterations = args.epochs, None
    if args.lr_decay:
        cfg.train.lr_decay = True
    if args.frozen_corruption:
        cfg.train.frozen_corruption = True
    if args.no_point_loss:
        cfg.train.weights.point_loss_enabled = False
    if args.kind is not None:
        kind = args.kind
        try:
            if kind.is_point:
                keep = args.keep or [0.01, 0.20]
                lo, hi = (keep[0], keep[0]) if len(keep) == 1 else (min(keep), max(keep))
                cfg.train.task = CorruptionSampler(kind, (lo, hi))
            else:
                cfg.train.task = CorruptionSampler(kind, block_size=args.block_size or 128)
            # point loss is used for white points and white blocks only
            if args.no_point_loss is False and kind in (
                CorruptionKind.UNIFORM_POINTS_COLOR_NOISE, CorruptionKind.CLUTTER_COLOR_BLOCK
            ):
                cfg.train.weights.point_loss_enabled = False
        except ValueError as exc:
            errors.append(str(exc))
    try:
        cfg.train.weights.__post_init__()
    except ValueError as exc:
        errors.append(str(exc))
    errors += cfg.validate()
    if errors:
        raise ConfigError(errors)
    return cfg


# ---------------------------------------------------------------------------
# commands


def cmd_corrupt(args):
    inputs = list_images(args.input)
    if not inputs:
        raise ConfigError(f"no images in {args.input}")
    kind = args.kind
    if kind is CorruptionKind.CLUTTER_COLOR_BLOCK and not args.donor:
        raise ConfigError("--kind clutter_color_block needs --donor")
    block = args.max_block if args.max_block is not None else args.block_size
    donors = list_images(args.donor) if args.donor else []
    if args.donor and not donors:
        raise ConfigError(f"no donor images in {args.donor}")
    out = output_dir(args.output)
    try:
        base = make_spec(kind, args.keep, block, args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    rng = np.random.default_rng(args.seed)
    for i, path in enumerate(inputs):
        real = load_and_normalize(path, args.size)
        spec = base.with_seed(int(rng.integers(0, 2**63)))
        donor = None
        if spec.needs_donor:
            donor = load_and_normalize(donors[int(rng.integers(0, len(donors)))], args.size)
        sample = corrupt(real, spec, donor)
        save_sample(sample, out, Path(path).stem)
    log.info("wrote %d corrupted samples to %s", len(inputs), out)
    return EXIT_OK


def cmd_train(args):
    cfg = experiment_from_args(args)
    out = output_dir(cfg.out_dir)
    paths = list_images(cfg.data_dir)
    train_count = cfg.train_count if cfg.train_count is not None else len(paths) - cfg.val_count
    try:
        manifest = split_manifest(paths, train_count, cfg.val_count, cfg.train.seed, cfg.train.image_size)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    manifest.save(out / "manifest.json")
    (out / "experiment.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    donors = list_images(cfg.donor_dir) if cfg.train.task.needs_donor else []
    data = TrainingData(manifest, cfg.train.task, donors, cfg.train.frozen_corruption)

    def report(it, bd):
        if it % max(1, args.log_every) == 0:
            v = bd.values()
            log.info("iter %d  total_g %.4f  adv_d %.4f  point %.5f", it, v["total_g"], v["adv_d"], v["point"])

    ckpt = train_loop(cfg.train, data, out, resume=args.resume, on_step=report)
    log.info("finished at iteration %d; checkpoints in %s", ckpt.iteration, out / "checkpoints")
    return EXIT_OK


def _network_stride(generator):
    return generator.config.stride


def cmd_reconstruct(args):
    ckpt = load_checkpoint(args.checkpoint)
    generator = ckpt.generator()
    stride = _network_stride(generator)
    src = Path(args.input)
    files = list_images(src) if src.is_dir() else [str(src)]
    if src.is_dir() and args.sources_only:
        files = [f for f in files if Path(f).stem.endswith("_source")]
    if not files:
        raise ConfigError(f"no input images at {src}")
    out = output_dir(args.output) if args.output else (src if src.is_dir() else src.parent)
    for f in files:
        with Image.open(f) as im:
            w, h = im.size
        if args.size is None and (h % stride or w % stride):
            raise ConfigError(
                f"{f}: size {w}x{h} is not divisible by the network stride {stride}; "
                f"pass --size with a multiple of {stride}"
            )
        size = args.size or w
        if size % stride:
            raise ConfigError(f"--size {size} is not a multiple of the network stride {stride}")
        source = load_and_normalize(f, size)
        fake = reconstruct(generator, source)
        stem = Path(f).stem
        base = stem[: -len("_source")] if stem.endswith("_source") else stem
        Image.fromarray(to_uint8(fake)).save(out / f"{base}_recon.png")
        if args.dump_triptych:
            real_path = _find_real(Path(f), base, args.real_dir)
            panels = [to_uint8(source), to_uint8(fake)]
            if real_path is not None:
                panels.append(to_uint8(load_and_normalize(real_path, size)))
            else:
                log.warning("no real image for %s; triptych has two panels", f)
            Image.fromarray(np.concatenate(panels, axis=1)).save(out / f"{base}_triptych.png")
    log.info("reconstructed %d images into %s", len(files), out)
    return EXIT_OK


def _find_real(path, base, real_dir):
    candidates = [path.with_name(f"{base}_real.png")]
    if real_dir:
        candidates += [Path(real_dir) / f"{base}{ext}" for ext in (".png", ".jpg", ".jpeg")]
        candidates += [Path(real_dir) / f"{base}_real.png"]
    return next((c for c in candidates if c.exists()), None)


def _eval_specs(args):
    kinds = []
    if args.compare:
        for name in args.compare.split(","):
            kinds.append(parse_kind(name.strip()))
    else:
        kinds.append(args.kind or CorruptionKind.UNIFORM_POINTS_WHITE)
    specs = []
    for kind in kinds:
        if kind.is_point:
            for keep in args.keep or [0.01, 0.05, 0.10, 0.15, 0.20]:
                specs.append(CorruptionSpec(kind, keep_fraction=keep, seed=args.seed))
        else:
            specs.append(CorruptionSpec(kind, block_size=args.block_size or 128, seed=args.seed))
    return specs


def cmd_evaluate(args):
    try:
        specs = _eval_specs(args)
    except (ValueError, argparse.ArgumentTypeError) as exc:
        raise ConfigError(str(exc)) from exc
    out = output_dir(args.out)
    if args.ablate:
        cfg = experiment_from_args(args)
        paths = list_images(cfg.data_dir)
        manifest = split_manifest(paths, len(paths), 0, cfg.train.seed, cfg.train.image_size)
        size = cfg.train.image_size
        data = TrainingData(manifest, cfg.train.task, list_images(cfg.donor_dir) if cfg.donor_dir else [])
    else:
        if not args.checkpoint:
            raise ConfigError("evaluate needs --checkpoint (or --ablate)")
        ckpt = load_checkpoint(args.checkpoint)
        size = ckpt.train_config().image_size
    val_paths = list_images(args.val)
    if args.limit:
        val_paths = val_paths[: args.limit]
    if not val_paths:
        raise ConfigError(f"validation set {args.val} is empty")
    val = [(Path(p).stem, load_and_normalize(p, size)) for p in val_paths]
    donors = [load_and_normalize(p, size) for p in list_images(args.donor)] if args.donor else None
    if any(s.needs_donor for s in specs) and not donors:
        raise ConfigError("clutter_color_block evaluation needs --donor")
    if args.ablate:
        reports = ablate_point_loss(cfg.train, data, val, specs, out)
        for variant, rep in reports.items():
            rep.to_csv(out / f"metrics_{variant}.csv")
            plot_report(rep, out / f"psnr_{variant}.png", title=f"point loss: {variant}")
        return EXIT_OK
    report = evaluate_grid(ckpt, val, specs, donors=donors, region=args.region,
                           metadata={"dataset": str(args.val), "seed": args.seed})
    report.to_csv(out / "metrics.csv")
    (out / "metrics_meta.json").write_text(json.dumps(report.metadata, indent=2, sort_keys=True) + "\n")
    plot_report(report, out / "psnr.png", "psnr_db")
    plot_report(report, out / "ssim.png", "ssim")
    for (kind, param), agg in report.aggregates().items():
        print(f"{kind:28s} {param:<8g} psnr {agg['psnr_mean']:7.3f} dB  ssim {agg['ssim_mean']:.4f}  n={agg['n']}")
    return EXIT_OK


def cmd_plot(args):
    path = Path(args.csv)
    if not path.exists():
        raise ConfigError(f"metrics file not found: {path}")
    report = MetricsReport.from_csv(path)
    if not report.rows:
        raise ConfigError(f"{path} has no rows")
    out = Path(args.out) if args.out else path.with_suffix(f".{args.metric}.{args.format}")
    out.parent.mkdir(parents=True, exist_ok=True)
    plot_report(report, out, args.metric, title=args.title)
    log.info("wrote %s", out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _train_options(p):
    p.add_argument("--config", help="ExperimentConfig JSON; flags override its values")
    p.add_argument("--data", help="folder of training images")
    p.add_argument("--donor", help="folder of donor images for clutter blocks")
    p.add_argument("--out", help="output directory")
    p.add_argument("--train-count", type=int)
    p.add_argument("--val-count", type=int)
    p.add_argument("--kind", type=parse_kind)
    p.add_argument("--keep", type=parse_floats, help="keep fraction, or lo,hi range")
    p.add_argument("--block-size", type=int)
    p.add_argument("--max-iterations", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--image-size", type=int)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--sample-every", type=int)
    p.add_argument("--extractor", choices=("vgg19", "random"))
    p.add_argument("--dropout", type=float)
    p.add_argument("--lambda-fm", type=float)
    p.add_argument("--lambda-vgg", type=float)
    p.add_argument("--lambda-point", type=float)
    p.add_argument("--d-aggregation", choices=("sum", "max"))
    p.add_argument("--adversarial-mode", choices=("vanilla_log", "least_squares"))
    p.add_argument("--point-norm", choices=("l2", "l1"))
    p.add_argument("--no-point-loss", action="store_true", default=False)
    p.add_argument("--lr-decay", action="store_true")
    p.add_argument("--frozen-corruption", action="store_true")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--log-every", type=int, default=100)


def build_parser():
    parser = argparse.ArgumentParser(prog="xgans", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--workers", type=int, default=None, help="intra-op threads for torch")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("corrupt", help="write corrupted (source, real, mask) triplets")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--kind", type=parse_kind, required=True)
    p.add_argument("--keep", type=float)
    p.add_argument("--block-size", type=int)
    p.add_argument("--max-block", type=int, help="largest clutter block side")
    p.add_argument("--donor")
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("train", help="train generator and discriminators")
    _train_options(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reconstruct", help="run a trained generator on images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="image file or folder")
    p.add_argument("--output")
    p.add_argument("--size", type=int)
    p.add_argument("--sources-only", action="store_true", help="only *_source images in a folder")
    p.add_argument("--dump-triptych", action="store_true")
    p.add_argument("--real-dir")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="PSNR/SSIM sweep over corruption settings")
    _train_options(p)
    p.add_argument("--checkpoint")
    p.add_argument("--val", required=True)
    p.add_argument("--compare", help="comma list of kinds, e.g. uniform,feature")
    p.add_argument("--limit", type=int)
    p.add_argument("--region", choices=("whole", "corrupted"), default="whole")
    p.add_argument("--ablate", action="store_true", help="train L2/L1/no point-loss variants first")
    p.set_defaults(func=cmd_evaluate, out="eval")

    p = sub.add_parser("plot", help="render curves from a metrics CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--out")
    p.add_argument("--metric", choices=("psnr_db", "ssim"), default="psnr_db")
    p.add_argument("--format", choices=("png", "svg"), default="png")
    p.add_argument("--title")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers:
        import torch

        torch.set_num_threads(args.workers)
    if getattr(args, "seed", None) is None and args.command in ("evaluate",):
        args.seed = 0
    try:
        return args.func(args)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (CheckpointError, ExtractorUnavailable) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetIOError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
