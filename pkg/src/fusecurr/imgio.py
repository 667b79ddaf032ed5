"""Image representation, Netpbm grayscale I/O and BT.601 colour handling.

Images are plain ``float64`` numpy arrays of shape ``(H, W)`` with values in
``[0, 1]``; colour images are ``(3, H, W)`` arrays holding R, G, B planes.
"""
from __future__ import annotations

import os
import re

import numpy as np

from .errors import DimensionError, IoError, ParseError

MIN_SIZE = 8

# BT.601 full range, chroma rows without the +0.5 offset.
_RGB_TO_YCC = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ]
)
_YCC_TO_RGB = np.linalg.inv(_RGB_TO_YCC)


def as_image(data, min_size: int = MIN_SIZE) -> np.ndarray:
    """Validate ``data`` as an Image and return it as a float64 array."""
    img = np.asarray(data, dtype=np.float64)
    if img.ndim != 2:
        raise DimensionError(f"image must be 2-D, got shape {img.shape}")
    h, w = img.shape
    if h < min_size or w < min_size:
        raise DimensionError(f"image {h}x{w} is smaller than {min_size}x{min_size}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return img


def check_same_shape(*images: np.ndarray) -> None:
    shapes = {np.shape(im) for im in images}
    if len(shapes) != 1:
        raise DimensionError(f"images differ in size: {sorted(shapes)}")


_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _header_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    tokens, pos = [], 0
    for _ in range(count):
        m = _TOKEN.match(buf, pos)
        if m is None:
            raise ParseError("truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    return tokens, pos


def load_pgm(path, min_size: int = MIN_SIZE) -> np.ndarray:
    """Read a P5 (binary) or P2 (ASCII) PGM file into an Image.

    Samples are scaled by ``1/maxval``. ``min_size`` exists so that tiny
    fixtures can be read; the engine always uses the default.
    """
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc

    if buf[:2] not in (b"P5", b"P2"):
        raise ParseError(f"{path}: not a PGM file (magic {buf[:2]!r})")
    magic = buf[:2]
    try:
        (w_tok, h_tok, max_tok), pos = _header_tokens(buf[2:], 3)
        width, height, maxval = int(w_tok), int(h_tok), int(max_tok)
    except ValueError as exc:
        raise ParseError(f"{path}: malformed header") from exc
    if width <= 0 or height <= 0 or not 0 < maxval <= 65535:
        raise ParseError(f"{path}: invalid header values {width}x{height} maxval {maxval}")
    pos += 2
    count = width * height

    if magic == b"P5":
        # exactly one whitespace byte separates the header from the raster
        raster = buf[pos + 1:]
        dtype = ">u1" if maxval < 256 else ">u2"
        nbytes = count * np.dtype(dtype).itemsize
        if len(raster) < nbytes:
            raise ParseError(f"{path}: raster truncated ({len(raster)} of {nbytes} bytes)")
        samples = np.frombuffer(raster[:nbytes], dtype=dtype).astype(np.float64)
    else:
        try:
            samples = np.array(buf[pos:].split()[:count], dtype=np.float64)
        except ValueError as exc:
            raise ParseError(f"{path}: non-numeric sample") from exc
        if samples.size < count:
            raise ParseError(f"{path}: raster truncated ({samples.size} of {count} samples)")
    if samples.max(initial=0) > maxval:
        raise ParseError(f"{path}: sample exceeds maxval {maxval}")

    img = (samples / maxval).reshape(height, width)
    if height < min_size or width < min_size:
        raise DimensionError(f"{path}: {height}x{width} is smaller than {min_size}x{min_size}")
    return img


def save_pgm(img, path, maxval: int = 255) -> None:
    """Write ``img`` as binary P5, value = round(p * maxval) clamped."""
    if maxval not in (255, 65535):
        raise ValueError(f"maxval must be 255 or 65535, got {maxval}")
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or min(img.shape) < MIN_SIZE:
        raise DimensionError(f"cannot save image of shape {img.shape}")
    q = np.clip(np.floor(img * maxval + 0.5), 0, maxval)
    dtype = ">u1" if maxval < 256 else ">u2"
    h, w = img.shape
    payload = b"P5\n%d %d\n%d\n" % (w, h, maxval) + q.astype(dtype).tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(payload)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def rgb_to_ycbcr(rgb) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split a ``(3, H, W)`` RGB image into Y, Cb, Cr planes in [0, 1]."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise DimensionError(f"colour image must have shape (3, H, W), got {rgb.shape}")
    for plane in rgb:
        as_image(plane)
    ycc = np.einsum("ij,jhw->ihw", _RGB_TO_YCC, rgb)
    ycc[1:] += 0.5
    ycc = np.clip(ycc, 0.0, 1.0)
    return ycc[0], ycc[1], ycc[2]


def ycbcr_to_rgb(y, cb, cr) -> np.ndarray:
    check_same_shape(y, cb, cr)
    ycc = np.stack([np.asarray(y, float), np.asarray(cb, float) - 0.5, np.asarray(cr, float) - 0.5])
    rgb = np.einsum("ij,jhw->ihw", _YCC_TO_RGB, ycc)
    return np.clip(rgb, 0.0, 1.0)


def restore_color(fused_y, vi_rgb, degraded_vi_rgb=None, chroma: str = "original") -> np.ndarray:
    """Recombine a fused luminance plane with the visible image's chroma.

    ``chroma`` selects whether Cb/Cr come from the original visible image or
    from its degraded version (``degraded_vi_rgb`` must then be given).
    """
    if chroma == "original":
        source = vi_rgb
    elif chroma == "degraded":
        if degraded_vi_rgb is None:
            raise ValueError("chroma='degraded' needs degraded_vi_rgb")
        source = degraded_vi_rgb
    else:
        raise ValueError(f"unknown chroma source {chroma!r}")
    _, cb, cr = rgb_to_ycbcr(source)
    return ycbcr_to_rgb(fused_y, cb, cr)


def list_pairs(dataset_dir) -> list[str]:
    """Sorted stems that have both ``<stem>_ir.pgm`` and ``<stem>_vi.pgm``."""
    try:
        names = os.listdir(dataset_dir)
    except OSError as exc:
        raise IoError(f"cannot list {dataset_dir}: {exc}") from exc
    ir = {n[: -len("_ir.pgm")] for n in names if n.endswith("_ir.pgm")}
    vi = {n[: -len("_vi.pgm")] for n in names if n.endswith("_vi.pgm")}
    return sorted(ir & vi)
