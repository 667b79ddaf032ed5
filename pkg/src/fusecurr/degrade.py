"""Deterministic degradations that turn the agent's difficulty knobs into harder samples."""
from __future__ import annotations

from dataclasses import astuple, dataclass

import numpy as np

from .filters import gaussian_kernel1d, separable

BLOCK = 8


@dataclass(frozen=True)
class DegradationParams:
    blur: float = 0.0
    compress: float = 0.0
    brightness: float = 0.5
    contrast: float = 0.5
    noise: float = 0.0

    def __post_init__(self):
        for name, value in zip(("blur", "compress", "brightness", "contrast", "noise"), astuple(self)):
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name}={value} outside [0, 1]")

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)

    @classmethod
    def identity(cls) -> "DegradationParams":
        return cls()

    @classmethod
    def from_knobs(cls, knobs) -> "DegradationParams":
        """Map five difficulty knobs in [0, 1] (0 = untouched) to parameters.

        Knob order is blur, compress, brightness, contrast, noise. Brightness
        and contrast knobs move their factor from 1 down towards 0.5, i.e.
        darker and flatter images, so that all-zero knobs is the identity.
        """
        b, q, br, ct, n = (float(np.clip(k, 0.0, 1.0)) for k in knobs)
        return cls(blur=b, compress=q, brightness=0.5 - 0.5 * br, contrast=0.5 - 0.5 * ct, noise=n)

    def magnitude(self) -> float:
        """L1 distance from the identity point."""
        return float(np.abs(self.as_array() - DegradationParams().as_array()).sum())


def blur_kernel_size(d: float) -> int:
    return 2 * int(np.floor(3.0 * d + 0.5)) + 1


def gaussian_blur(img, d: float) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    k = blur_kernel_size(d)
    if k == 1:
        return img.copy()
    return np.clip(separable(img, gaussian_kernel1d(k, k / 6.0)), 0.0, 1.0)


def dct_matrix(n: int = BLOCK) -> np.ndarray:
    """Orthonormal DCT-II basis, rows indexed by frequency."""
    k = np.arange(n)
    c = np.sqrt(2.0 / n) * np.cos(np.pi * (2 * k[None, :] + 1) * k[:, None] / (2 * n))
    c[0] /= np.sqrt(2.0)
    return c


_DCT = dct_matrix()


def _to_blocks(img: np.ndarray) -> tuple[np.ndarray, tuple[int, int]]:
    h, w = img.shape
    ph, pw = -h % BLOCK, -w % BLOCK
    padded = np.pad(img, ((0, ph), (0, pw)), mode="edge")
    H, W = padded.shape
    blocks = padded.reshape(H // BLOCK, BLOCK, W // BLOCK, BLOCK).transpose(0, 2, 1, 3)
    return blocks, (H, W)


def _from_blocks(blocks: np.ndarray, padded_shape, shape) -> np.ndarray:
    H, W = padded_shape
    img = blocks.transpose(0, 2, 1, 3).reshape(H, W)
    return img[: shape[0], : shape[1]]


def block_dct(img) -> np.ndarray:
    blocks, _ = _to_blocks(np.asarray(img, dtype=np.float64))
    return _DCT @ blocks @ _DCT.T


def block_idct(coeffs, shape) -> np.ndarray:
    H, W = -(-shape[0] // BLOCK) * BLOCK, -(-shape[1] // BLOCK) * BLOCK
    return _from_blocks(_DCT.T @ coeffs @ _DCT, (H, W), shape)


def compression_step(d: float) -> float:
    return 50.0 * d / 255.0


def dct_compress(img, d: float) -> np.ndarray:
    """Blockwise DCT coefficient quantisation; ``d = 0`` is lossless."""
    img = np.asarray(img, dtype=np.float64)
    q = compression_step(d)
    if q == 0.0:
        return img.copy()
    coeffs = np.round(block_dct(img) / q) * q
    return np.clip(block_idct(coeffs, img.shape), 0.0, 1.0)


def color_jitter(img, b: float, c: float) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    scaled = img * (0.5 + b)
    mu = scaled.mean()
    return np.clip((scaled - mu) * (0.5 + c) + mu, 0.0, 1.0)


def noise_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def add_noise(img, d: float, seed: int) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    sigma = 0.1 * d
    if sigma == 0.0:
        return img.copy()
    draws = noise_rng(seed).standard_normal(img.size).reshape(img.shape)
    return np.clip(img + sigma * draws, 0.0, 1.0)


def derive_seed(seed: int, *path: int) -> int:
    """Stable 63-bit child seed for (seed, *path)."""
    state = np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, *path]).generate_state(2, np.uint32)
    return int(state[0]) << 31 | int(state[1]) >> 1


def degrade(img, p: DegradationParams, seed: int) -> np.ndarray:
    out = gaussian_blur(img, p.blur)
    out = color_jitter(out, p.brightness, p.contrast)
    out = add_noise(out, p.noise, seed)
    return dct_compress(out, p.compress)


def degrade_pair(ir, vi, p: DegradationParams, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Blur, jitter, noise, compress; same parameters, independent noise per modality."""
    return degrade(ir, p, derive_seed(seed, 0)), degrade(vi, p, derive_seed(seed, 1))
