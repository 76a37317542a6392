"""Synthetic degradations: sparse points, color noise, white and cluttered blocks.

Images are float32 arrays of shape (H, W, 3) with values in [-1, 1].  Masks
are boolean (H, W) arrays where ``True`` marks a pixel copied unchanged from
the real image.
"""

import enum
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from . import kernels

WHITE = 1.0
# flat regions keep this share of the peak edge weight during feature sampling
EDGE_FLOOR = 0.01
MIN_CLUTTER_SIDE = 16


class CorruptionKind(str, enum.Enum):
    UNIFORM_POINTS_WHITE = "uniform_points_white"
    FEATURE_POINTS_WHITE = "feature_points_white"
    UNIFORM_POINTS_COLOR_NOISE = "uniform_points_color_noise"
    CENTER_WHITE_BLOCK = "center_white_block"
    CLUTTER_COLOR_BLOCK = "clutter_color_block"

    @property
    def is_point(self):
        return self in POINT_KINDS

    @property
    def is_block(self):
        return not self.is_point


POINT_KINDS = frozenset(
    {
        CorruptionKind.UNIFORM_POINTS_WHITE,
        CorruptionKind.FEATURE_POINTS_WHITE,
        CorruptionKind.UNIFORM_POINTS_COLOR_NOISE,
    }
)


@dataclass(frozen=True)
class CorruptionSpec:
    """One degradation regime.

    Point regimes need ``keep_fraction``; block regimes need ``block_size``
    (for ``clutter_color_block`` it is the largest allowed block side).
    """

    kind: CorruptionKind
    keep_fraction: Optional[float] = None
    block_size: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", CorruptionKind(self.kind))
        if self.kind.is_point:
            if self.keep_fraction is None:
                raise ValueError(f"{self.kind.value} requires keep_fraction")
            if self.block_size is not None:
                raise ValueError(f"{self.kind.value} does not take block_size")
            if not 0.0 < self.keep_fraction <= 1.0:
                raise ValueError(f"keep_fraction must be in (0, 1], got {self.keep_fraction}")
        else:
            if self.block_size is None:
                raise ValueError(f"{self.kind.value} requires block_size")
            if self.keep_fraction is not None:
                raise ValueError(f"{self.kind.value} does not take keep_fraction")
            if self.block_size <= 0:
                raise ValueError(f"block_size must be positive, got {self.block_size}")
            if self.kind is CorruptionKind.CLUTTER_COLOR_BLOCK and self.block_size < MIN_CLUTTER_SIDE:
                raise ValueError(f"clutter block_size must be >= {MIN_CLUTTER_SIDE}")
        if not -(2**63) <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 bits")

    @property
    def needs_donor(self):
        return self.kind is CorruptionKind.CLUTTER_COLOR_BLOCK

    @property
    def param(self):
        """The regime's numeric knob: keep fraction or block size."""
        return self.keep_fraction if self.kind.is_point else self.block_size

    def with_seed(self, seed):
        return CorruptionSpec(self.kind, self.keep_fraction, self.block_size, int(seed))

    def to_dict(self):
        d = asdict(self)
        d["kind"] = self.kind.value
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            kind=d["kind"],
            keep_fraction=d.get("keep_fraction"),
            block_size=d.get("block_size"),
            seed=int(d.get("seed", 0)),
        )


@dataclass
class CorruptedSample:
    source: np.ndarray
    real: np.ndarray
    mask: np.ndarray
    spec: CorruptionSpec

    def check(self):
        """Raise AssertionError if the retention invariant is broken."""
        assert self.source.shape == self.real.shape
        assert self.mask.shape == self.real.shape[:2]
        assert np.array_equal(self.source[self.mask], self.real[self.mask])


def _rng(seed, stream):
    # independent streams for mask placement and fill values
    return np.random.default_rng(np.random.SeedSequence([int(seed) % 2**64, stream]))


def _check_image(image):
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {image.shape}")
    if image.shape[0] <= 0 or image.shape[1] <= 0:
        raise ValueError("image has an empty dimension")
    return image


def luma(image):
    return np.asarray(image, dtype=np.float64) @ kernels.LUMA


def keep_threshold(keep_fraction):
    """Integer threshold against draws in [0, 99]; a draw below it keeps the pixel."""
    return int(round(100.0 * keep_fraction))


def make_uniform_mask(height, width, keep_fraction, seed):
    """Keep each pixel independently with probability ``round(100*keep)/100``."""
    if height <= 0 or width <= 0:
        raise ValueError(f"mask dimensions must be positive, got {height}x{width}")
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    draws = _rng(seed, 0).integers(0, 100, size=(height, width))
    return draws < keep_threshold(keep_fraction)


def sobel_edge_map(image):
    """Sobel gradient magnitude of the image's luma, shape (H, W)."""
    return kernels.sobel_magnitude(luma(_check_image(image)))


def sampling_weights(edges):
    """Edge magnitudes plus a floor so flat regions stay reachable."""
    peak = float(edges.max())
    if peak <= 0.0:
        return np.ones_like(edges)
    return edges + EDGE_FLOOR * peak


def make_feature_mask(image, keep_fraction, seed):
    """Sample exactly ``round(keep*H*W)`` pixels, edge-weighted, without replacement."""
    image = _check_image(image)
    h, w = image.shape[:2]
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    count = int(round(keep_fraction * h * w))
    if count > h * w:
        raise ValueError(f"cannot keep {count} of {h * w} pixels")
    mask = np.zeros(h * w, dtype=bool)
    if count == h * w:
        mask[:] = True
        return mask.reshape(h, w)
    if count == 0:
        return mask.reshape(h, w)
    weights = sampling_weights(sobel_edge_map(image)).ravel()
    # Gumbel top-k == successive weighted draws without replacement
    keys = np.log(weights) + _rng(seed, 0).gumbel(size=weights.shape)
    mask[np.argpartition(-keys, count - 1)[:count]] = True
    return mask.reshape(h, w)


def _fill_points(real, mask, spec):
    source = real.copy()
    holes = ~mask
    if spec.kind is CorruptionKind.UNIFORM_POINTS_COLOR_NOISE:
        noise = _rng(spec.seed, 1).uniform(-1.0, 1.0, size=real.shape).astype(real.dtype)
        source[holes] = noise[holes]
    else:
        source[holes] = WHITE
    return source


def corrupt(real, spec, donor=None):
    """Apply ``spec`` to ``real`` and return the (source, real, mask) triple."""
    real = _check_image(real).astype(np.float32, copy=False)
    h, w = real.shape[:2]
    if spec.needs_donor and donor is None:
        raise ValueError("clutter_color_block needs a donor image")
    if not spec.needs_donor and donor is not None:
        raise ValueError(f"{spec.kind.value} does not take a donor image")

    kind = spec.kind
    if kind in (CorruptionKind.UNIFORM_POINTS_WHITE, CorruptionKind.UNIFORM_POINTS_COLOR_NOISE):
        mask = make_uniform_mask(h, w, spec.keep_fraction, spec.seed)
        source = _fill_points(real, mask, spec)
    elif kind is CorruptionKind.FEATURE_POINTS_WHITE:
        mask = make_feature_mask(real, spec.keep_fraction, spec.seed)
        source = _fill_points(real, mask, spec)
    elif kind is CorruptionKind.CENTER_WHITE_BLOCK:
        b = spec.block_size
        if b > min(h, w):
            raise ValueError(f"block_size {b} exceeds image side {min(h, w)}")
        top, left = (h - b) // 2, (w - b) // 2
        mask = np.ones((h, w), dtype=bool)
        mask[top:top + b, left:left + b] = False
        source = real.copy()
        source[~mask] = WHITE
    else:
        donor = _check_image(donor).astype(np.float32, copy=False)
        b = spec.block_size
        limit = min(h, w, donor.shape[0], donor.shape[1])
        if b > min(h, w):
            raise ValueError(f"block_size {b} exceeds image side {min(h, w)}")
        if b > limit:
            raise ValueError(f"block_size {b} exceeds donor side {limit}")
        rng = _rng(spec.seed, 0)
        side = int(rng.integers(MIN_CLUTTER_SIDE, b + 1))
        top = int(rng.integers(0, h - side + 1))
        left = int(rng.integers(0, w - side + 1))
        dtop = int(rng.integers(0, donor.shape[0] - side + 1))
        dleft = int(rng.integers(0, donor.shape[1] - side + 1))
        mask = np.ones((h, w), dtype=bool)
        mask[top:top + side, left:left + side] = False
        source = real.copy()
        source[top:top + side, left:left + side] = donor[dtop:dtop + side, dleft:dleft + side]
    return CorruptedSample(source=source, real=real, mask=mask, spec=spec)


# ---------------------------------------------------------------------------
# on-disk triplets


def to_uint8(image):
    image = np.asarray(image, dtype=np.float64)
    return np.clip(np.rint((image + 1.0) * 127.5), 0, 255).astype(np.uint8)


def from_uint8(pixels):
    return (np.asarray(pixels, dtype=np.float32) / 127.5 - 1.0).astype(np.float32)


def save_sample(sample, directory, stem):
    """Write ``<stem>_source.png``, ``<stem>_real.png``, ``<stem>_mask.png`` and ``<stem>.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "source": directory / f"{stem}_source.png",
        "real": directory / f"{stem}_real.png",
        "mask": directory / f"{stem}_mask.png",
        "spec": directory / f"{stem}.json",
    }
    Image.fromarray(to_uint8(sample.source)).save(paths["source"])
    Image.fromarray(to_uint8(sample.real)).save(paths["real"])
    Image.fromarray(sample.mask).convert("1").save(paths["mask"])
    record = {"spec": sample.spec.to_dict(), "height": int(sample.mask.shape[0]),
              "width": int(sample.mask.shape[1]), "kept": int(sample.mask.sum())}
    paths["spec"].write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return paths


def load_sample(directory, stem):
    directory = Path(directory)
    record = json.loads((directory / f"{stem}.json").read_text())
    source = from_uint8(np.array(Image.open(directory / f"{stem}_source.png").convert("RGB")))
    real = from_uint8(np.array(Image.open(directory / f"{stem}_real.png").convert("RGB")))
    mask = np.array(Image.open(directory / f"{stem}_mask.png").convert("1"), dtype=bool)
    return CorruptedSample(source, real, mask, CorruptionSpec.from_dict(record["spec"]))
