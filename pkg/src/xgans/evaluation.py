"""PSNR / SSIM, corruption sweeps and the point-loss ablation."""

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import kernels
from .corruption import corrupt
from .training import TrainConfig, load_checkpoint, train_loop

log = logging.getLogger(__name__)

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
K1, K2 = 0.01, 0.03
CSV_FIELDS = ("kind", "param", "image_id", "psnr_db", "ssim")


def _unit(x):
    """[-1, 1] -> [0, 1] as float64."""
    if torch.is_tensor(x):
        x = x.detach().cpu().numpy()
    return (np.asarray(x, dtype=np.float64) + 1.0) / 2.0


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def psnr(a, b, cap=PSNR_CAP, mask=None):
    """Peak signal-to-noise ratio in dB of two [-1, 1] images (peak 1 in [0, 1] space).

    ``mask`` (H, W bool) restricts the error to selected pixels.  Identical
    inputs return ``cap``.
    """
    a, b = _unit(a), _unit(b)
    _same_shape(a, b)
    diff = a - b
    if mask is not None:
        diff = diff[np.asarray(mask, dtype=bool)]
    mse = float(np.mean(diff * diff)) if diff.size else 0.0
    if mse == 0.0:
        return cap
    return min(cap, 10.0 * math.log10(1.0 / mse))


def ssim(a, b, window=SSIM_WINDOW, sigma=SSIM_SIGMA):
    """Mean SSIM over valid 11x11 Gaussian windows of the [0, 1] luma."""
    a, b = _unit(a), _unit(b)
    _same_shape(a, b)
    if a.ndim == 3:
        a, b = a @ kernels.LUMA, b @ kernels.LUMA
    if min(a.shape) < window:
        raise ValueError(f"image {a.shape} smaller than the {window}x{window} SSIM window")
    return float(np.mean(ssim_map(a, b, window, sigma)))


def ssim_map(a, b, window=SSIM_WINDOW, sigma=SSIM_SIGMA):
    taps = kernels.gaussian_window(window, sigma)
    c1, c2 = K1 ** 2, K2 ** 2
    mu_a = kernels.filter_valid(a, taps)
    mu_b = kernels.filter_valid(b, taps)
    var_a = kernels.filter_valid(a * a, taps) - mu_a * mu_a
    var_b = kernels.filter_valid(b * b, taps) - mu_b * mu_b
    cov = kernels.filter_valid(a * b, taps) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


@dataclass
class MetricsRow:
    kind: str
    param: float
    image_id: str
    psnr_db: float
    ssim: float


@dataclass
class MetricsReport:
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def sorted_rows(self):
        return sorted(self.rows, key=lambda r: (r.kind, r.param, r.image_id))

    def aggregates(self):
        """``{(kind, param): {"psnr_mean", "psnr_std", "ssim_mean", "ssim_std", "n"}}``."""
        groups = {}
        for r in self.rows:
            groups.setdefault((r.kind, r.param), []).append(r)
        out = {}
        for key in sorted(groups):
            p = np.array([r.psnr_db for r in groups[key]])
            s = np.array([r.ssim for r in groups[key]])
            out[key] = {"psnr_mean": float(p.mean()), "psnr_std": float(p.std()),
                        "ssim_mean": float(s.mean()), "ssim_std": float(s.std()), "n": len(p)}
        return out

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for r in self.sorted_rows():
            w.writerow([r.kind, f"{r.param:g}", r.image_id, f"{r.psnr_db:.6f}", f"{r.ssim:.6f}"])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = [MetricsRow(r["kind"], float(r["param"]), r["image_id"], float(r["psnr_db"]), float(r["ssim"]))
                    for r in csv.DictReader(fh)]
        return cls(rows)


def reconstruct(generator, source):
    """Inference on one (H, W, 3) image; returns an (H, W, 3) float32 array."""
    generator.eval()
    with torch.no_grad():
        x = torch.from_numpy(np.ascontiguousarray(source, dtype=np.float32)).permute(2, 0, 1)[None]
        y = generator(x)
    return y[0].permute(1, 2, 0).cpu().numpy()


def _generator(checkpoint):
    if isinstance(checkpoint, (str, Path)):
        checkpoint = load_checkpoint(checkpoint)
    if hasattr(checkpoint, "generator_state"):
        return checkpoint.generator(), f"iter{checkpoint.iteration}"
    return checkpoint, "in-memory"


def _image_seed(seed, pos):
    return int(np.random.SeedSequence([int(seed) % 2**64, pos]).generate_state(1, np.uint64)[0])


def evaluate_grid(checkpoint, val_set, specs, donors=None, region="whole", metadata=None):
    """Corrupt every image with every spec, reconstruct, and tabulate PSNR/SSIM.

    ``val_set`` is a sequence of ``(image_id, image)`` pairs.  Each spec's seed
    is combined with the image position so runs are repeatable.  ``region``
    is ``"whole"`` or ``"corrupted"`` (PSNR over mask-false pixels; SSIM
    stays whole-image).
    """
    if not specs:
        raise ValueError("no corruption specs to evaluate")
    val_set = list(val_set)
    if not val_set:
        raise ValueError("validation set is empty")
    if region not in ("whole", "corrupted"):
        raise ValueError(f"unknown region {region!r}")
    generator, ckpt_id = _generator(checkpoint)
    report = MetricsReport(metadata={"checkpoint": ckpt_id, "region": region, **(metadata or {})})
    for spec in specs:
        for pos, (image_id, real) in enumerate(val_set):
            donor = None
            if spec.needs_donor:
                if not donors:
                    raise ValueError("clutter_color_block evaluation needs donor images")
                donor = donors[pos % len(donors)]
            sample = corrupt(real, spec.with_seed(_image_seed(spec.seed, pos)), donor)
            if sample.mask.all():
                fake = sample.source
            else:
                fake = reconstruct(generator, sample.source)
            mask = ~sample.mask if region == "corrupted" and not sample.mask.all() else None
            report.rows.append(
                MetricsRow(spec.kind.value, float(spec.param), str(image_id),
                           psnr(fake, sample.real, mask=mask), ssim(fake, sample.real))
            )
    report.rows = report.sorted_rows()
    return report


def plot_report(report, path, metric="psnr_db", title=None):
    """Mean metric against the corruption parameter, one line per kind."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    agg = report.aggregates()
    key = "psnr_mean" if metric == "psnr_db" else "ssim_mean"
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for kind in sorted({k for k, _ in agg}):
        params = sorted(p for k, p in agg if k == kind)
        ax.plot(params, [agg[(kind, p)][key] for p in params], marker="o", label=kind)
    ax.set_xlabel("keep fraction / block size")
    ax.set_ylabel("PSNR (dB)" if metric == "psnr_db" else "SSIM")
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


ABLATION_VARIANTS = ("l2", "l1", "none")


def ablation_config(base, variant):
    if variant == "none":
        weights = replace(base.weights, point_loss_enabled=False)
    elif variant in ("l1", "l2"):
        weights = replace(base.weights, point_loss_enabled=True, point_norm=variant)
    else:
        raise ValueError(f"unknown point-loss variant {variant!r}")
    return replace(base, weights=weights)


def ablate_point_loss(base_config: TrainConfig, data, val_set, specs, out_dir, variants=ABLATION_VARIANTS):
    """Train one model per point-loss variant from the same seed and evaluate each.

    Returns ``{variant: MetricsReport}`` and writes ``ablation.csv`` with a
    leading ``variant`` column.
    """
    out_dir = Path(out_dir)
    reports = {}
    for variant in variants:
        cfg = ablation_config(base_config, variant)
        ckpt = train_loop(cfg, data, out_dir / f"point_{variant}")
        reports[variant] = evaluate_grid(ckpt, val_set, specs, metadata={"variant": variant})
    with open(out_dir / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("variant",) + CSV_FIELDS)
        for variant, rep in reports.items():
            for r in rep.sorted_rows():
                w.writerow([variant, r.kind, f"{r.param:g}", r.image_id, f"{r.psnr_db:.6f}", f"{r.ssim:.6f}"])
    means = {v: float(np.mean([r.psnr_db for r in rep.rows])) for v, rep in reports.items()}
    log.info("point-loss ablation mean PSNR: %s", means)
    return reports
