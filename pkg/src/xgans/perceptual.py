"""Frozen feature extractors for the perceptual loss.

``vgg19`` uses ImageNet-pretrained VGG-19 activations (relu1_1 ... relu5_1).
``random`` is a fixed-seed random convolution stack with the same five-tap
layout; it needs no downloads and is what the tests use.
"""

import logging
import os
from pathlib import Path

import torch
from torch import nn

log = logging.getLogger(__name__)

VGG_TAPS = (1, 6, 11, 20, 29)  # relu1_1, relu2_1, relu3_1, relu4_1, relu5_1
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class ExtractorUnavailable(RuntimeError):
    pass


def freeze(module):
    module.eval()
    for p in module.parameters():
        p.requires_grad_(False)
    return module


class Extractor(nn.Module):
    """Base: ``forward`` returns a list of feature maps; parameters stay frozen."""

    def train(self, mode=True):
        # stays in eval mode regardless of the surrounding model
        return super().train(False)


class IdentityExtractor(Extractor):
    def forward(self, x):
        return [x]


class RandomConvExtractor(Extractor):
    def __init__(self, seed=0, widths=(16, 32, 64, 128, 128)):
        super().__init__()
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            stages = []
            cin = 3
            for i, w in enumerate(widths):
                layers = [] if i == 0 else [nn.AvgPool2d(2, ceil_mode=True)]
                conv = nn.Conv2d(cin, w, 3, padding=1)
                nn.init.kaiming_normal_(conv.weight, nonlinearity="relu")
                nn.init.zeros_(conv.bias)
                layers += [conv, nn.ReLU()]
                stages.append(nn.Sequential(*layers))
                cin = w
        self.stages = nn.ModuleList(stages)
        freeze(self)

    def forward(self, x):
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


class VGG19Extractor(Extractor):
    def __init__(self, features):
        super().__init__()
        self.slices = nn.ModuleList()
        start = 0
        for end in VGG_TAPS:
            self.slices.append(nn.Sequential(*[features[i] for i in range(start, end + 1)]))
            start = end + 1
        self.register_buffer("mean", torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(IMAGENET_STD).view(1, 3, 1, 1))
        freeze(self)

    def forward(self, x):
        x = ((x + 1.0) / 2.0 - self.mean) / self.std
        feats = []
        for s in self.slices:
            x = s(x)
            feats.append(x)
        return feats


def _vgg_weights_path():
    from torchvision.models import VGG19_Weights

    hub = Path(os.environ.get("XGANS_CACHE_DIR") or torch.hub.get_dir())
    url = VGG19_Weights.IMAGENET1K_V1.url
    return hub / "checkpoints" / os.path.basename(url), VGG19_Weights.IMAGENET1K_V1


def load_vgg19(allow_download=False):
    from torchvision.models import vgg19

    path, weights = _vgg_weights_path()
    if path.exists():
        net = vgg19()
        net.load_state_dict(torch.load(path, map_location="cpu", weights_only=True))
    elif allow_download:
        net = vgg19(weights=weights)
    else:
        raise ExtractorUnavailable(f"VGG-19 weights not found at {path} and downloads are disabled")
    return VGG19Extractor(net.features)


def build_extractor(name="random", seed=0, allow_download=False, fallback=None):
    """Return a frozen extractor.

    ``fallback`` names the extractor to use when ``name`` cannot be built;
    without one, an unavailable extractor raises :class:`ExtractorUnavailable`.
    """
    try:
        if name == "vgg19":
            return load_vgg19(allow_download)
        if name == "random":
            return RandomConvExtractor(seed)
        if name == "identity":
            return IdentityExtractor()
        raise ExtractorUnavailable(f"unknown extractor {name!r}")
    except Exception as exc:
        if fallback is None or fallback == name:
            if isinstance(exc, ExtractorUnavailable):
                raise
            raise ExtractorUnavailable(f"{name}: {exc}") from exc
        log.warning("perceptual extractor %s unavailable (%s); using %s", name, exc, fallback)
        return build_extractor(fallback, seed=seed)
