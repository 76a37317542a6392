import numpy as np
import pytest
import torch
from PIL import Image

from xgans import kernels


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture(params=["numba", "numpy"])
def backend(request):
    if request.param == "numba" and not kernels.HAS_NUMBA:
        pytest.skip("numba not installed")
    previous = kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(previous)


def step_image(size=64, column=32):
    img = -np.ones((size, size, 3), dtype=np.float32)
    img[:, column:] = 1.0
    return img


def natural_photo(size=128):
    """A center-cropped, resized skimage sample photo in [-1, 1]."""
    from skimage import data

    img = Image.fromarray(data.astronaut())
    img = img.resize((size, size), Image.BILINEAR)
    return (np.asarray(img, dtype=np.float32) / 127.5 - 1.0).astype(np.float32)


def photo_crops(n=16, size=64):
    """``n`` natural 64x64 crops: quadrants of several skimage photos."""
    from skimage import data

    out = []
    for name in ("astronaut", "coffee", "chelsea", "rocket", "immunohistochemistry"):
        img = Image.fromarray(getattr(data, name)()).convert("RGB")
        w, h = img.size
        s = min(w, h)
        img = img.crop(((w - s) // 2, (h - s) // 2, (w - s) // 2 + s, (h - s) // 2 + s))
        img = img.resize((2 * size, 2 * size), Image.BILINEAR)
        for i in range(2):
            for j in range(2):
                out.append((f"{name}_{i}{j}", img.crop((j * size, i * size, (j + 1) * size, (i + 1) * size))))
    return out[:n]


@pytest.fixture
def photo_dir(tmp_path):
    d = tmp_path / "photos"
    d.mkdir()
    for name, img in photo_crops(16):
        img.save(d / f"{name}.png")
    return d
