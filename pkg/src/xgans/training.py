"""Alternating discriminator/generator optimization, checkpoints and logs."""

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from PIL import Image

from .corruption import to_uint8
from .dataset import CorruptionSampler, TrainingData
from .discriminator import DiscriminatorConfig, build_discriminators
from .generator import GeneratorConfig, build_generator
from .losses import (
    LossBreakdown,
    LossWeights,
    NumericFailure,
    adversarial_losses,
    corresponding_point_loss,
    feature_matching_loss,
    perceptual_loss,
    total_generator_objective,
)
from .perceptual import build_extractor

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
FULL_SCALE_ITERATIONS = 100_000


class CheckpointError(RuntimeError):
    pass


@dataclass
class Batch:
    """Tensors for a list of CorruptedSamples: (N, 3, H, W) images, (N, H, W) mask."""

    source: torch.Tensor
    real: torch.Tensor
    mask: torch.Tensor
    specs: list = field(default_factory=list)

    @classmethod
    def from_samples(cls, samples, device="cpu"):
        def stack(key):
            arr = np.stack([getattr(s, key) for s in samples]).astype(np.float32)
            return torch.from_numpy(arr).permute(0, 3, 1, 2).contiguous().to(device)

        mask = torch.from_numpy(np.stack([s.mask for s in samples])).to(device)
        return cls(stack("source"), stack("real"), mask, [s.spec for s in samples])

    def __len__(self):
        return self.source.shape[0]


@dataclass
class TrainConfig:
    learning_rate: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    batch_size: int = 1
    max_iterations: Optional[int] = None
    epochs: Optional[int] = None
    seed: int = 0
    checkpoint_every: int = 1000
    sample_every: int = 0
    lr_decay: bool = False
    image_size: int = 256
    frozen_corruption: bool = False
    extractor: str = "vgg19"
    extractor_fallback: Optional[str] = "random"
    weights: LossWeights = field(default_factory=LossWeights)
    task: CorruptionSampler = field(
        default_factory=lambda: CorruptionSampler("uniform_points_white", (0.01, 0.20))
    )
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)

    def validate(self):
        errors = []
        if not self.learning_rate > 0:
            errors.append("learning_rate must be > 0")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                errors.append(f"{name} must be in [0, 1)")
        if self.batch_size < 1:
            errors.append("batch_size must be >= 1")
        if (self.max_iterations is None) == (self.epochs is None):
            errors.append("exactly one of max_iterations and epochs must be set")
        if self.max_iterations is not None and self.max_iterations < 0:
            errors.append("max_iterations must be >= 0")
        if self.epochs is not None and self.epochs < 0:
            errors.append("epochs must be >= 0")
        if self.checkpoint_every < 1:
            errors.append("checkpoint_every must be >= 1")
        if self.sample_every < 0:
            errors.append("sample_every must be >= 0")
        if self.image_size % self.generator.stride:
            errors.append(f"image_size must be divisible by {self.generator.stride}")
        errors += [f"weights: {e}" for e in self.weights.validate()]
        errors += [f"generator: {e}" for e in self.generator.validate()]
        errors += [f"discriminator: {e}" for e in self.discriminator.validate()]
        return errors

    def total_iterations(self, dataset_size):
        if self.max_iterations is not None:
            return self.max_iterations
        return self.epochs * math.ceil(dataset_size / self.batch_size)

    def is_full_scale(self, dataset_size):
        return self.image_size >= 256 and self.total_iterations(dataset_size) >= FULL_SCALE_ITERATIONS

    def to_dict(self):
        return {
            "learning_rate": self.learning_rate,
            "adam_beta1": self.adam_beta1,
            "adam_beta2": self.adam_beta2,
            "batch_size": self.batch_size,
            "max_iterations": self.max_iterations,
            "epochs": self.epochs,
            "seed": self.seed,
            "checkpoint_every": self.checkpoint_every,
            "sample_every": self.sample_every,
            "lr_decay": self.lr_decay,
            "image_size": self.image_size,
            "frozen_corruption": self.frozen_corruption,
            "extractor": self.extractor,
            "extractor_fallback": self.extractor_fallback,
            "weights": self.weights.to_dict(),
            "task": self.task.to_dict(),
            "generator": self.generator.to_dict(),
            "discriminator": self.discriminator.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        nested = {
            "weights": LossWeights.from_dict,
            "task": CorruptionSampler.from_dict,
            "generator": lambda x: GeneratorConfig(**x),
            "discriminator": lambda x: DiscriminatorConfig(**x),
        }
        for key, build in nested.items():
            if key in d and not hasattr(d[key], "to_dict"):
                d[key] = build(d[key])
        return cls(**d)


@dataclass
class Models:
    generator: torch.nn.Module
    discriminators: torch.nn.Module
    extractor: Optional[torch.nn.Module]


@dataclass
class Optimizers:
    g: torch.optim.Optimizer
    d: torch.optim.Optimizer


def build_models(config):
    need_vgg = config.weights.lambda_vgg > 0
    extractor = None
    if need_vgg:
        extractor = build_extractor(config.extractor, seed=config.seed, fallback=config.extractor_fallback)
    return Models(
        generator=build_generator(config.generator, init_seed=config.seed),
        discriminators=build_discriminators(config.discriminator, init_seed=config.seed + 1),
        extractor=extractor,
    )


def build_optimizers(models, config):
    betas = (config.adam_beta1, config.adam_beta2)
    return Optimizers(
        g=torch.optim.Adam(models.generator.parameters(), lr=config.learning_rate, betas=betas),
        d=torch.optim.Adam(models.discriminators.parameters(), lr=config.learning_rate, betas=betas),
    )


def _finite(name, value, iteration):
    v = float(value.detach())
    if not math.isfinite(v):
        raise NumericFailure(name, v, iteration)


def train_step(models, batch, weights, optimizers, iteration=None, update_d=True):
    """One discriminator update, then one generator update. Returns float losses."""
    G, D = models.generator, models.discriminators
    G.train()
    D.train()
    mode, agg = weights.adversarial_mode, weights.d_aggregation

    fake = G(batch.source)

    D.requires_grad_(True)
    real_out = D(batch.source, batch.real)
    fake_out = D(batch.source, fake.detach())
    adv_d, _ = adversarial_losses(real_out, fake_out, mode, agg)
    _finite("adv_d", adv_d, iteration)
    if update_d:
        optimizers.d.zero_grad(set_to_none=True)
        adv_d.backward()
        optimizers.d.step()

    D.requires_grad_(False)
    with torch.no_grad():
        real_out = D(batch.source, batch.real)
    fake_out = D(batch.source, fake)
    _, adv_g = adversarial_losses(real_out, fake_out, mode, agg)
    zero = fake.new_zeros(())
    fm = feature_matching_loss(real_out, fake_out) if weights.lambda_fm > 0 else zero
    vgg = perceptual_loss(batch.real, fake, models.extractor, 1.0) if weights.lambda_vgg > 0 else zero
    point = corresponding_point_loss(batch, fake, weights.point_norm, weights.point_reduction)
    if not weights.point_loss_enabled:
        point = point.detach()
    parts = {"adv_g": adv_g, "adv_d": adv_d.detach(), "fm": fm, "vgg": vgg, "point": point}
    breakdown = total_generator_objective(parts, weights, iteration)
    optimizers.g.zero_grad(set_to_none=True)
    breakdown.total_g.backward()
    optimizers.g.step()
    D.requires_grad_(True)
    return breakdown.detached()


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    iteration: int
    config: dict
    generator_state: dict
    discriminator_state: dict
    optimizer_g_state: Optional[dict] = None
    optimizer_d_state: Optional[dict] = None
    rng_state: Optional[torch.Tensor] = None
    version: int = CHECKPOINT_VERSION

    def manifest(self):
        return {
            "version": self.version,
            "iteration": self.iteration,
            "seed": self.config.get("seed"),
            "config": self.config,
        }

    def train_config(self):
        return TrainConfig.from_dict(self.config)

    def generator(self):
        cfg = self.train_config()
        net = build_generator(cfg.generator, cfg.seed)
        net.load_state_dict(self.generator_state)
        net.eval()
        return net

    def discriminators(self):
        cfg = self.train_config()
        bank = build_discriminators(cfg.discriminator, cfg.seed + 1)
        bank.load_state_dict(self.discriminator_state)
        return bank


def snapshot(models, optimizers, iteration, config):
    clone = lambda sd: {k: v.detach().clone() if torch.is_tensor(v) else v for k, v in sd.items()}
    return Checkpoint(
        iteration=iteration,
        config=config.to_dict(),
        generator_state=clone(models.generator.state_dict()),
        discriminator_state=clone(models.discriminators.state_dict()),
        optimizer_g_state=optimizers.g.state_dict() if optimizers else None,
        optimizer_d_state=optimizers.d.state_dict() if optimizers else None,
        rng_state=torch.get_rng_state(),
    )


def save_checkpoint(checkpoint, path):
    """Write ``<path>`` (torch payload) and ``<path>.json`` (manifest)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "version": checkpoint.version,
        "iteration": checkpoint.iteration,
        "config": checkpoint.config,
        "generator": checkpoint.generator_state,
        "discriminators": checkpoint.discriminator_state,
        "optimizer_g": checkpoint.optimizer_g_state,
        "optimizer_d": checkpoint.optimizer_d_state,
        "rng_state": checkpoint.rng_state,
    }
    tmp = path.with_name(path.name + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)
    manifest_path(path).write_text(json.dumps(checkpoint.manifest(), indent=2, sort_keys=True) + "\n")
    return path


def manifest_path(path):
    path = Path(path)
    return path.with_name(path.name + ".json")


def load_checkpoint(path):
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("version")
    if version != CHECKPOINT_VERSION:
        diff = {"version": {"expected": CHECKPOINT_VERSION, "found": version}}
        mp = manifest_path(path)
        if mp.exists():
            diff["manifest"] = json.loads(mp.read_text())
        raise CheckpointError(f"incompatible checkpoint {path}: {json.dumps(diff, sort_keys=True)}")
    return Checkpoint(
        iteration=payload["iteration"],
        config=payload["config"],
        generator_state=payload["generator"],
        discriminator_state=payload["discriminators"],
        optimizer_g_state=payload.get("optimizer_g"),
        optimizer_d_state=payload.get("optimizer_d"),
        rng_state=payload.get("rng_state"),
        version=version,
    )


def restore(checkpoint, models, optimizers=None):
    models.generator.load_state_dict(checkpoint.generator_state)
    models.discriminators.load_state_dict(checkpoint.discriminator_state)
    if optimizers is not None and checkpoint.optimizer_g_state is not None:
        optimizers.g.load_state_dict(checkpoint.optimizer_g_state)
        optimizers.d.load_state_dict(checkpoint.optimizer_d_state)
    if checkpoint.rng_state is not None:
        torch.set_rng_state(checkpoint.rng_state)


# ---------------------------------------------------------------------------
# loop


LOG_FIELDS = ("iteration",) + LossBreakdown.COLUMNS


def batches(samples, size):
    chunk = []
    for s in samples:
        chunk.append(s)
        if len(chunk) == size:
            yield Batch.from_samples(chunk)
            chunk = []
    if chunk:
        yield Batch.from_samples(chunk)


def save_grid(batch, fake, path, limit=4):
    """Rows of source | reconstruction | real."""
    rows = []
    for i in range(min(limit, len(batch))):
        imgs = [batch.source[i], fake[i].detach(), batch.real[i]]
        rows.append(np.concatenate([to_uint8(t.permute(1, 2, 0).cpu().numpy()) for t in imgs], axis=1))
    Image.fromarray(np.concatenate(rows, axis=0)).save(path)


def _linear_lr(config, iteration, total):
    if not config.lr_decay or total <= 0:
        return config.learning_rate
    half = total // 2
    if iteration <= half:
        return config.learning_rate
    return config.learning_rate * max(0.0, (total - iteration) / max(1, total - half))


def _weights_differ(saved, current):
    return saved.get("weights") != current.to_dict()


def train_loop(config, data: TrainingData, out_dir, resume=None, on_step=None):
    """Train until ``max_iterations`` or ``epochs`` is reached and return the final checkpoint.

    Writes ``config.json``, ``losses.csv``, ``checkpoints/ckpt_<iter>.pt`` and,
    when ``sample_every`` is set, ``samples/iter_<iter>.png`` under ``out_dir``.
    """
    errors = config.validate()
    if errors:
        raise ValueError("invalid training config: " + "; ".join(errors))
    if data.manifest.target_size != config.image_size:
        raise ValueError(
            f"dataset target_size {data.manifest.target_size} != image_size {config.image_size}"
        )
    if len(data) == 0 and config.total_iterations(1) > 0:
        raise ValueError("training set is empty")
    out_dir = Path(out_dir)
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    total = config.total_iterations(len(data))
    if config.is_full_scale(len(data)):
        log.warning("full-scale run (%d iterations at %dpx): expect multiple GPU-days", total, config.image_size)

    torch.manual_seed(config.seed)
    models = build_models(config)
    optimizers = build_optimizers(models, config)
    iteration = 0
    if resume is not None:
        ckpt = load_checkpoint(resume)
        if _weights_differ(ckpt.config, config.weights):
            log.warning("loss weights differ from the checkpoint's; continuing with the new weights")
        restore(ckpt, models, optimizers)
        iteration = ckpt.iteration

    (out_dir / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    log_path = out_dir / "losses.csv"
    fresh_log = resume is None or not log_path.exists()
    if fresh_log:
        with open(log_path, "w", newline="") as fh:
            csv.writer(fh).writerow(LOG_FIELDS)
    else:
        _truncate_log(log_path, iteration)

    def checkpoint_now():
        ck = snapshot(models, optimizers, iteration, config)
        save_checkpoint(ck, ckpt_dir / f"ckpt_{iteration:07d}.pt")
        save_checkpoint(ck, ckpt_dir / "latest.pt")
        return ck

    latest = checkpoint_now() if iteration == 0 else None
    per_epoch = math.ceil(len(data) / config.batch_size) if len(data) else 1
    try:
        with open(log_path, "a", newline="") as fh:
            writer = csv.writer(fh)
            while iteration < total:
                epoch, offset = divmod(iteration, per_epoch)
                stream = batches(data.epoch(config.seed, epoch), config.batch_size)
                for k, batch in enumerate(stream):
                    if k < offset:
                        continue
                    if iteration >= total:
                        break
                    iteration += 1
                    lr = _linear_lr(config, iteration, total)
                    for opt in (optimizers.g, optimizers.d):
                        for group in opt.param_groups:
                            group["lr"] = lr
                    bd = train_step(models, batch, config.weights, optimizers, iteration)
                    row = bd.values()
                    writer.writerow([iteration] + [f"{row[c]:.8g}" for c in LossBreakdown.COLUMNS])
                    fh.flush()
                    if on_step is not None:
                        on_step(iteration, bd)
                    if config.sample_every and iteration % config.sample_every == 0:
                        (out_dir / "samples").mkdir(exist_ok=True)
                        with torch.no_grad():
                            models.generator.eval()
                            fake = models.generator(batch.source)
                        save_grid(batch, fake, out_dir / "samples" / f"iter_{iteration:07d}.png")
                    if iteration % config.checkpoint_every == 0 or iteration == total:
                        latest = checkpoint_now()
    except OSError:
        log.error("I/O failure at iteration %d; attempting a final checkpoint", iteration)
        try:
            checkpoint_now()
        except OSError:
            log.exception("final checkpoint failed")
        raise
    if latest is None or latest.iteration != iteration:
        latest = checkpoint_now()
    return latest


def _truncate_log(path, iteration):
    # drop rows past the resume point so numbering continues at iteration + 1
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    kept = [rows[0]] + [r for r in rows[1:] if r and int(r[0]) <= iteration]
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(kept)


def read_loss_log(path):
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "iteration" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]
