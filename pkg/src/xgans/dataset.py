"""Image folders -> normalized tensors -> streams of corrupted training pairs."""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .corruption import CorruptedSample, CorruptionKind, CorruptionSpec, corrupt, from_uint8, to_uint8

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".webp")


class DatasetIOError(OSError):
    """An image could not be read; ``path`` names the offending file."""

    def __init__(self, path, reason):
        super().__init__(f"{path}: {reason}")
        self.path = str(path)


def list_images(folder):
    folder = Path(folder)
    if not folder.is_dir():
        raise DatasetIOError(folder, "not a directory")
    return sorted(str(p) for p in folder.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def center_crop_square(img):
    w, h = img.size
    side = min(w, h)
    left, top = (w - side) // 2, (h - side) // 2
    return img.crop((left, top, left + side, top + side))


def load_and_normalize(path, target_size=256):
    """Read an RGB image, center-crop to square, bilinear-resize, map [0, 255] -> [-1, 1]."""
    try:
        with Image.open(path) as img:
            img = img.convert("RGB")
    except (OSError, UnidentifiedImageError) as exc:
        raise DatasetIOError(path, f"cannot decode image ({exc})") from exc
    img = center_crop_square(img)
    if img.size != (target_size, target_size):
        img = img.resize((target_size, target_size), Image.BILINEAR)
    return from_uint8(np.asarray(img))


def denormalize(image):
    """Inverse of the [-1, 1] mapping, back to uint8."""
    return to_uint8(image)


@dataclass
class DatasetManifest:
    entries: list
    train: list
    val: list
    target_size: int = 256
    seed: int = 0

    def __post_init__(self):
        if set(self.train) & set(self.val):
            raise ValueError("train and val indices overlap")

    @property
    def train_paths(self):
        return [self.entries[i] for i in self.train]

    @property
    def val_paths(self):
        return [self.entries[i] for i in self.val]

    def to_dict(self):
        return {
            "entries": list(self.entries),
            "train": list(self.train),
            "val": list(self.val),
            "target_size": self.target_size,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["entries"], d["train"], d["val"], d.get("target_size", 256), d.get("seed", 0))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def split_manifest(paths, train_count, val_count, seed=0, target_size=256):
    """Shuffle ``paths`` with ``seed`` and cut disjoint train/val index sets."""
    paths = list(paths)
    if train_count < 0 or val_count < 0:
        raise ValueError("split counts must be non-negative")
    if train_count + val_count > len(paths):
        raise ValueError(
            f"requested {train_count}+{val_count} images but only {len(paths)} available"
        )
    order = np.random.default_rng(seed).permutation(len(paths))
    entries = [paths[i] for i in order]
    return DatasetManifest(
        entries=entries,
        train=list(range(train_count)),
        val=list(range(train_count, train_count + val_count)),
        target_size=target_size,
        seed=seed,
    )


@dataclass
class CorruptionSampler:
    """Draws a CorruptionSpec per sample.

    ``keep_range`` is an inclusive interval for point regimes (equal ends give
    a fixed fraction); ``block_size`` is passed through for block regimes.
    """

    kind: CorruptionKind
    keep_range: Optional[tuple] = None
    block_size: Optional[int] = None

    def __post_init__(self):
        self.kind = CorruptionKind(self.kind)
        if self.keep_range is not None:
            lo, hi = self.keep_range
            self.keep_range = (float(lo), float(hi))
            if lo > hi:
                raise ValueError(f"keep_range is reversed: {self.keep_range}")
        # validates the kind/parameter combination
        self.draw(np.random.default_rng(0))

    @classmethod
    def fixed(cls, spec):
        keep = None if spec.keep_fraction is None else (spec.keep_fraction, spec.keep_fraction)
        return cls(spec.kind, keep, spec.block_size)

    @property
    def needs_donor(self):
        return self.kind is CorruptionKind.CLUTTER_COLOR_BLOCK

    def draw(self, rng):
        seed = int(rng.integers(0, 2**63))
        keep = None
        if self.kind.is_point:
            if self.keep_range is None:
                raise ValueError(f"{self.kind.value} sampler needs keep_range")
            lo, hi = self.keep_range
            keep = lo if lo == hi else float(rng.uniform(lo, hi))
        return CorruptionSpec(self.kind, keep, self.block_size if self.kind.is_block else None, seed)

    def to_dict(self):
        return {
            "kind": self.kind.value,
            "keep_range": None if self.keep_range is None else list(self.keep_range),
            "block_size": self.block_size,
        }

    @classmethod
    def from_dict(cls, d):
        kr = d.get("keep_range")
        return cls(d["kind"], None if kr is None else tuple(kr), d.get("block_size"))


class ImageCache:
    """Memoizes decoded, normalized images by path."""

    def __init__(self, target_size):
        self.target_size = target_size
        self._store = {}

    def __call__(self, path):
        img = self._store.get(path)
        if img is None:
            img = load_and_normalize(path, self.target_size)
            self._store[path] = img
        return img


def sample_rng(epoch_seed, index):
    return np.random.default_rng(np.random.SeedSequence([int(epoch_seed) % 2**64, int(index)]))


def sample_stream(
    manifest: DatasetManifest,
    sampler: CorruptionSampler,
    donor_paths: Optional[Sequence[str]] = None,
    epoch_seed: int = 0,
    loader=None,
    shuffle: bool = True,
) -> Iterator[CorruptedSample]:
    """Yield every training entry once, corrupted afresh for this ``epoch_seed``.

    Each sample depends only on ``(epoch_seed, entry index)``.
    """
    if sampler.needs_donor and not donor_paths:
        raise ValueError("clutter_color_block sampling needs donor images")
    if donor_paths and not sampler.needs_donor:
        raise ValueError(f"{sampler.kind.value} does not use donor images")
    load = loader or ImageCache(manifest.target_size)
    order = list(manifest.train)
    if shuffle:
        perm = np.random.default_rng(np.random.SeedSequence([int(epoch_seed) % 2**64, 2**32])).permutation(len(order))
        order = [order[i] for i in perm]
    for idx in order:
        rng = sample_rng(epoch_seed, idx)
        spec = sampler.draw(rng)
        donor = None
        if sampler.needs_donor:
            donor = load(donor_paths[int(rng.integers(0, len(donor_paths)))])
        yield corrupt(load(manifest.entries[idx]), spec, donor)


@dataclass
class TrainingData:
    """Everything the training loop needs to build an epoch's stream."""

    manifest: DatasetManifest
    sampler: CorruptionSampler
    donor_paths: list = field(default_factory=list)
    frozen_corruption: bool = False

    def __post_init__(self):
        self._load = ImageCache(self.manifest.target_size)

    def __len__(self):
        return len(self.manifest.train)

    def epoch(self, base_seed, epoch):
        # frozen corruption reuses the same masks every epoch
        epoch_seed = base_seed if self.frozen_corruption else int(
            np.random.SeedSequence([int(base_seed) % 2**64, int(epoch)]).generate_state(1, np.uint64)[0]
        )
        return sample_stream(self.manifest, self.sampler, self.donor_paths or None, epoch_seed, self._load)
