"""Adversarial, feature-matching, perceptual and corresponding-point losses."""

import enum
import math
from dataclasses import asdict, dataclass, fields

import torch
import torch.nn.functional as F


class AdversarialMode(str, enum.Enum):
    VANILLA_LOG = "vanilla_log"
    LEAST_SQUARES = "least_squares"


class Aggregation(str, enum.Enum):
    SUM = "sum"
    MAX = "max"


class NumericFailure(FloatingPointError):
    def __init__(self, component, value, iteration=None):
        where = "" if iteration is None else f" at iteration {iteration}"
        super().__init__(f"non-finite {component} loss ({value}){where}")
        self.component = component
        self.iteration = iteration


@dataclass
class LossWeights:
    lambda_fm: float = 10.0
    lambda_vgg: float = 10.0
    lambda_point: float = 10.0
    point_loss_enabled: bool = True
    adversarial_mode: AdversarialMode = AdversarialMode.VANILLA_LOG
    d_aggregation: Aggregation = Aggregation.SUM
    point_norm: str = "l2"
    point_reduction: str = "mean"

    def __post_init__(self):
        self.adversarial_mode = AdversarialMode(self.adversarial_mode)
        self.d_aggregation = Aggregation(self.d_aggregation)
        errors = self.validate()
        if errors:
            raise ValueError("; ".join(errors))

    def validate(self):
        errors = []
        for name in ("lambda_fm", "lambda_vgg", "lambda_point"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                errors.append(f"{name} must be finite and >= 0, got {v}")
        if self.point_norm not in ("l2", "l1"):
            errors.append(f"point_norm must be l2 or l1, got {self.point_norm!r}")
        if self.point_reduction not in ("mean", "sum"):
            errors.append(f"point_reduction must be mean or sum, got {self.point_reduction!r}")
        return errors

    def to_dict(self):
        d = asdict(self)
        d["adversarial_mode"] = self.adversarial_mode.value
        d["d_aggregation"] = self.d_aggregation.value
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class LossBreakdown:
    adv_g: object = 0.0
    adv_d: object = 0.0
    fm: object = 0.0
    vgg: object = 0.0
    point: object = 0.0
    total_g: object = 0.0

    COLUMNS = ("adv_g", "adv_d", "fm", "vgg", "point", "total_g")

    def values(self):
        """Plain-float copy of every component."""
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = float(v.detach()) if torch.is_tensor(v) else float(v)
        return out

    def detached(self):
        return LossBreakdown(**self.values())


def _bce(logits, target):
    return F.binary_cross_entropy_with_logits(logits, torch.full_like(logits, target))


def _scale_terms(real, fake, mode):
    mode = AdversarialMode(mode)
    if mode is AdversarialMode.VANILLA_LOG:
        d = (_bce(real, 1.0) + _bce(fake, 0.0)) if real is not None else None
        g = _bce(fake, 1.0)
    else:
        d = (torch.mean((real - 1.0) ** 2) + torch.mean(fake ** 2)) if real is not None else None
        g = torch.mean((fake - 1.0) ** 2)
    return d, g


def _logits(x):
    return x.logits if hasattr(x, "logits") else x


def per_scale_generator_terms(scale_logits_fake, mode=AdversarialMode.VANILLA_LOG):
    return [_scale_terms(None, _logits(f), mode)[1] for f in scale_logits_fake]


def adversarial_losses(scale_logits_real, scale_logits_fake, mode=AdversarialMode.VANILLA_LOG,
                       d_aggregation=Aggregation.SUM):
    """Discriminator loss summed over scales and the generator's aggregated loss.

    Each list holds one patch-logit map (or ScaleFeatures) per scale; losses
    average over the patch grid.  The generator term is the non-saturating
    ``-log sigmoid(fake)`` (or ``(fake-1)^2`` for least squares), summed or
    maxed across scales per ``d_aggregation``.
    """
    if len(scale_logits_real) != 3 or len(scale_logits_fake) != 3:
        raise ValueError("adversarial_losses expects one logit map per scale (3 scales)")
    d_terms, g_terms = [], []
    for r, f in zip(scale_logits_real, scale_logits_fake):
        r, f = _logits(r), _logits(f)
        if r.shape != f.shape:
            raise ValueError(f"logit shapes differ: {tuple(r.shape)} vs {tuple(f.shape)}")
        d, g = _scale_terms(r, f, mode)
        d_terms.append(d)
        g_terms.append(g)
    adv_d = torch.stack(d_terms).sum()
    g = torch.stack(g_terms)
    adv_g = g.sum() if Aggregation(d_aggregation) is Aggregation.SUM else g.max()
    return adv_d, adv_g


def _taps(scale):
    return scale.taps if hasattr(scale, "taps") else list(scale)


def feature_matching_loss(real_feats, fake_feats):
    """Sum over scales and layers of the mean absolute feature difference.

    Real-pair features are treated as constants.
    """
    if len(real_feats) != len(fake_feats):
        raise ValueError(f"scale counts differ: {len(real_feats)} vs {len(fake_feats)}")
    total = None
    for rs, fs in zip(real_feats, fake_feats):
        rt, ft = _taps(rs), _taps(fs)
        if len(rt) != len(ft):
            raise ValueError(f"layer counts differ: {len(rt)} vs {len(ft)}")
        for r, f in zip(rt, ft):
            if r.shape != f.shape:
                raise ValueError(f"feature shapes differ: {tuple(r.shape)} vs {tuple(f.shape)}")
            term = torch.mean(torch.abs(r.detach() - f))
            total = term if total is None else total + term
    if total is None:
        raise ValueError("no features to match")
    return total


def perceptual_loss(real, fake, extractor, lambda_vgg=1.0):
    """``lambda_vgg`` times the summed mean-absolute differences of the extractor's layers."""
    if extractor is None:
        from .perceptual import ExtractorUnavailable

        raise ExtractorUnavailable("no perceptual feature extractor configured")
    if real.shape != fake.shape:
        raise ValueError(f"shape mismatch: {tuple(real.shape)} vs {tuple(fake.shape)}")
    if lambda_vgg == 0:
        return fake.new_zeros(())
    with torch.no_grad():
        target = extractor(real)
    total = fake.new_zeros(())
    for t, f in zip(target, extractor(fake)):
        total = total + torch.mean(torch.abs(t - f))
    return lambda_vgg * total


def corresponding_point_loss(batch, generated, norm="l2", reduction="mean"):
    """Squared (or absolute) error between source and generated on retained pixels.

    ``batch`` carries ``source`` (N, 3, H, W) and ``mask`` (N, H, W).  With
    ``reduction="mean"`` the error is averaged over kept pixels and channels;
    an empty mask gives 0.
    """
    source, mask = batch.source, batch.mask
    if generated.shape != source.shape:
        raise ValueError(f"shape mismatch: {tuple(generated.shape)} vs {tuple(source.shape)}")
    if mask.shape != source.shape[:1] + source.shape[2:]:
        raise ValueError(f"mask shape {tuple(mask.shape)} does not match images {tuple(source.shape)}")
    m = mask.unsqueeze(1).expand_as(source)
    diff = torch.masked_select(generated, m) - torch.masked_select(source, m)
    if diff.numel() == 0:
        return generated.sum() * 0.0
    err = diff * diff if norm == "l2" else torch.abs(diff)
    return err.mean() if reduction == "mean" else err.sum()


def total_generator_objective(parts, weights, iteration=None):
    """Weighted generator objective.

    ``parts`` maps ``adv_g``, ``fm``, ``vgg``, ``point`` (and optionally
    ``adv_d``) to scalars or scalar tensors; each enters the total with its
    weight from ``weights``.
    """
    parts = dict(parts)
    for name, value in parts.items():
        v = float(value.detach()) if torch.is_tensor(value) else float(value)
        if not math.isfinite(v):
            raise NumericFailure(name, v, iteration)
    adv_g = parts["adv_g"]
    fm = parts.get("fm", 0.0)
    vgg = parts.get("vgg", 0.0)
    point = parts.get("point", 0.0)
    total = adv_g + weights.lambda_fm * fm + weights.lambda_vgg * vgg
    if weights.point_loss_enabled:
        total = total + weights.lambda_point * point
    return LossBreakdown(adv_g=adv_g, adv_d=parts.get("adv_d", 0.0), fm=fm, vgg=vgg, point=point, total_g=total)
