"""Small replicate-padded 2-D filters shared by metrics, degradations and the teacher."""
from __future__ import annotations

import numpy as np

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()


def gaussian_kernel1d(size: int, sigma: float) -> np.ndarray:
    r = (size - 1) / 2.0
    x = np.arange(size) - r
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def correlate_rows(img: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Correlate along axis 1 with replicate padding.

    Accumulates ``img + sum(w * (shifted - img))`` so that constant inputs are
    returned bit-exactly whenever the taps sum to one.
    """
    r = len(taps) // 2
    padded = np.pad(img, ((0, 0), (r, r)), mode="edge")
    w = img.shape[1]
    out = img.copy()
    for i, t in enumerate(taps):
        if t != 0.0:
            out += t * (padded[:, i:i + w] - img)
    return out


def separable(img: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Apply the same normalised 1-D kernel along both axes."""
    return correlate_rows(correlate_rows(img, taps).T, taps).T


def box_filter(img: np.ndarray, size: int) -> np.ndarray:
    return separable(img, np.full(size, 1.0 / size))


def correlate3x3(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """3x3 cross-correlation with replicate padding.

    Accumulated as differences from the centre pixel so zero-sum kernels give
    exactly 0 on flat regions.
    """
    img = np.asarray(img, dtype=np.float64)
    p = np.pad(img, 1, mode="edge")
    h, w = img.shape
    out = float(kernel.sum()) * img
    for di in range(3):
        for dj in range(3):
            if kernel[di, dj] != 0.0:
                out += kernel[di, dj] * (p[di:di + h, dj:dj + w] - img)
    return out


def sobel_magnitude(img: np.ndarray) -> np.ndarray:
    gx = correlate3x3(img, SOBEL_X)
    gy = correlate3x3(img, SOBEL_Y)
    return np.sqrt(gx * gx + gy * gy)
