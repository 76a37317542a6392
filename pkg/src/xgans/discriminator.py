"""Bank of three patch discriminators operating at full, half and quarter scale."""

from dataclasses import asdict, dataclass
from typing import List

import torch
import torch.nn.functional as F
from torch import nn

from .generator import LEAK, init_weights, norm

SCALES = 3
KERNEL = 4
PAD = 2


@dataclass
class DiscriminatorConfig:
    scales: int = SCALES
    layers: int = 4
    base_channels: int = 64
    max_channels: int = 512

    def validate(self):
        errors = []
        if self.scales != SCALES:
            errors.append(f"scales must be {SCALES}")
        if self.layers < 2:
            errors.append("layers must be >= 2")
        if self.base_channels < 1:
            errors.append("base_channels must be >= 1")
        return errors

    def to_dict(self):
        return asdict(self)


@dataclass
class ScaleFeatures:
    """Intermediate maps of one discriminator (one per strided layer) and its logit map."""

    features: List[torch.Tensor]
    logits: torch.Tensor

    @property
    def T(self):
        return len(self.features)

    @property
    def taps(self):
        """Maps compared by the feature-matching loss: every layer plus the logits."""
        return [*self.features, self.logits]

    @property
    def sizes(self):
        return [f[0].numel() for f in self.taps]


class PatchDiscriminator(nn.Module):
    def __init__(self, config, in_channels=6):
        super().__init__()
        stages = []
        cin, cout = in_channels, config.base_channels
        for i in range(config.layers):
            unit = [nn.Conv2d(cin, cout, KERNEL, 2, PAD, bias=i == 0)]
            if i > 0:
                unit.append(norm(cout))
            unit.append(nn.LeakyReLU(LEAK))
            stages.append(nn.Sequential(*unit))
            cin, cout = cout, min(cout * 2, config.max_channels)
        self.stages = nn.ModuleList(stages)
        self.head = nn.Conv2d(cin, 1, KERNEL, 1, PAD)

    def forward(self, x):
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return ScaleFeatures(feats, self.head(x))


class DiscriminatorBank(nn.Module):
    def __init__(self, config=None):
        super().__init__()
        config = config or DiscriminatorConfig()
        errors = config.validate()
        if errors:
            raise ValueError("; ".join(errors))
        self.config = config
        self.nets = nn.ModuleList([PatchDiscriminator(config) for _ in range(config.scales)])

    def pyramid(self, source, candidate):
        if source.shape != candidate.shape:
            raise ValueError(f"source {tuple(source.shape)} and candidate {tuple(candidate.shape)} differ")
        x = torch.cat([source, candidate], dim=1)
        inputs = [x]
        for _ in range(1, self.config.scales):
            x = F.avg_pool2d(x, 2)
            inputs.append(x)
        return inputs

    def forward(self, source, candidate):
        return [net(x) for net, x in zip(self.nets, self.pyramid(source, candidate))]


def build_discriminators(config=None, init_seed=0):
    config = config or DiscriminatorConfig()
    errors = config.validate()
    if errors:
        raise ValueError("; ".join(errors))
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(init_seed)
        bank = DiscriminatorBank(config)
        init_weights(bank)
    return bank


def discriminator_forward(bank, source, candidate):
    """Per-scale features for the channel-concatenated pair (source, candidate)."""
    return bank(source, candidate)


def receptive_field(config, scale):
    """Side, in original-image pixels, of the input patch seen by one logit at ``scale`` (1-based)."""
    rf, jump = 1, 1
    # pooling stages that precede this scale
    for _ in range(scale - 1):
        rf += (2 - 1) * jump
        jump *= 2
    for _ in range(config.layers):
        rf += (KERNEL - 1) * jump
        jump *= 2
    rf += (KERNEL - 1) * jump
    return rf
