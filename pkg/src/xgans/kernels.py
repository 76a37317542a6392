"""Numeric inner loops used by corruption and evaluation.

Every kernel has two implementations: a numba ``@njit`` version and a plain
numpy version.  Both produce the same values (up to float rounding order).
The active path is picked once at import time from the ``XGANS_NUMBA``
environment variable (``0``/``false``/``off`` disables numba) and can be
switched at runtime with :func:`set_backend`.
"""

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

HAS_NUMBA = numba is not None

_env = os.environ.get("XGANS_NUMBA", "1").strip().lower()
BACKEND = "numba" if HAS_NUMBA and _env not in ("0", "false", "off", "no") else "numpy"

# ITU-R BT.601 luma weights
LUMA = np.array([0.299, 0.587, 0.114])


def set_backend(name):
    """Select ``"numba"`` or ``"numpy"`` for all kernels; returns the previous one."""
    global BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba is not installed")
    previous, BACKEND = BACKEND, name
    return previous


def _njit(fn):
    if HAS_NUMBA:
        return numba.njit(cache=True, fastmath=False)(fn)
    return fn


# ---------------------------------------------------------------------------
# Sobel gradient magnitude, replicated border


def _sobel_numpy(gray):
    p = np.pad(gray, 1, mode="edge")
    up, mid, down = p[:-2], p[1:-1], p[2:]
    gx = (up[:, 2:] + 2.0 * mid[:, 2:] + down[:, 2:]) - (up[:, :-2] + 2.0 * mid[:, :-2] + down[:, :-2])
    left, centre, right = p[:, :-2], p[:, 1:-1], p[:, 2:]
    gy = (left[2:] + 2.0 * centre[2:] + right[2:]) - (left[:-2] + 2.0 * centre[:-2] + right[:-2])
    return np.sqrt(gx * gx + gy * gy)


@_njit
def _sobel_numba(gray):
    h, w = gray.shape
    out = np.empty((h, w))
    for i in range(h):
        im = max(i - 1, 0)
        ip = min(i + 1, h - 1)
        for j in range(w):
            jm = max(j - 1, 0)
            jp = min(j + 1, w - 1)
            gx = (gray[im, jp] + 2.0 * gray[i, jp] + gray[ip, jp]) - (
                gray[im, jm] + 2.0 * gray[i, jm] + gray[ip, jm]
            )
            gy = (gray[ip, jm] + 2.0 * gray[ip, j] + gray[ip, jp]) - (
                gray[im, jm] + 2.0 * gray[im, j] + gray[im, jp]
            )
            out[i, j] = np.sqrt(gx * gx + gy * gy)
    return out


def sobel_magnitude(gray):
    """Gradient magnitude of a 2-D array with the 3x3 Sobel pair."""
    gray = np.ascontiguousarray(gray, dtype=np.float64)
    if gray.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {gray.shape}")
    if BACKEND == "numba":
        return _sobel_numba(gray)
    return _sobel_numpy(gray)


# ---------------------------------------------------------------------------
# Separable 'valid' filtering (SSIM local statistics)


def gaussian_window(size=11, sigma=1.5):
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid_numpy(img, taps):
    k = taps.shape[0]
    h, w = img.shape
    rows = np.zeros((h, w - k + 1))
    for t in range(k):
        rows += taps[t] * img[:, t:t + w - k + 1]
    out = np.zeros((h - k + 1, w - k + 1))
    for t in range(k):
        out += taps[t] * rows[t:t + h - k + 1, :]
    return out


@_njit
def _filter_valid_numba(img, taps):
    k = taps.shape[0]
    h, w = img.shape
    ow = w - k + 1
    oh = h - k + 1
    rows = np.zeros((h, ow))
    for i in range(h):
        for j in range(ow):
            acc = 0.0
            for t in range(k):
                acc += taps[t] * img[i, j + t]
            rows[i, j] = acc
    out = np.zeros((oh, ow))
    for i in range(oh):
        for j in range(ow):
            acc = 0.0
            for t in range(k):
                acc += taps[t] * rows[i + t, j]
            out[i, j] = acc
    return out


def filter_valid(img, taps):
    """Correlate ``img`` with the outer product ``taps x taps``, no padding."""
    img = np.ascontiguousarray(img, dtype=np.float64)
    taps = np.ascontiguousarray(taps, dtype=np.float64)
    if min(img.shape) < taps.shape[0]:
        raise ValueError(f"image {img.shape} smaller than window {taps.shape[0]}")
    if BACKEND == "numba":
        return _filter_valid_numba(img, taps)
    return _filter_valid_numpy(img, taps)
