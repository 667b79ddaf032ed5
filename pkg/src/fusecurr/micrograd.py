"""Explicit forward/backward layers, Adam, finite-difference checking and checkpoints.

Tensors are float64 numpy arrays shaped ``(C, H, W)`` for feature maps and
``(n,)`` or ``(batch, n)`` for vectors. Every ``*_backward`` returns the exact
adjoint of its forward map.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from .errors import IoError, ParseError, ShapeError

Params = dict[str, np.ndarray]

# --- convolution -----------------------------------------------------------


@lru_cache(maxsize=128)
def _window_index(c: int, h: int, w: int) -> np.ndarray:
    """Flat index into a (C, H, W) tensor of every 3x3 tap, clamped at the border.

    Laid out as (C, 9, H*W) and flattened, matching the kernel layout.
    """
    rows = np.arange(h)[:, None]
    cols = np.arange(w)[None, :]
    taps = np.stack([
        (np.clip(rows + di, 0, h - 1) * w + np.clip(cols + dj, 0, w - 1)).ravel()
        for di in (-1, 0, 1)
        for dj in (-1, 0, 1)
    ])
    # left writeable: take() copies read-only index arrays on every call
    return (taps[None] + (np.arange(c) * h * w)[:, None, None]).ravel()


def _cols(x: np.ndarray) -> np.ndarray:
    """im2col for a 3x3 window with replicate padding: (C*9, H*W)."""
    c, h, w = x.shape
    return x.ravel().take(_window_index(c, h, w)).reshape(c * 9, h * w)


def _uncols(gcols: np.ndarray, shape) -> np.ndarray:
    """Adjoint of ``_cols``: scatter-add window gradients back onto pixels."""
    c, h, w = shape
    idx = _window_index(c, h, w)
    return np.bincount(idx, weights=gcols.ravel(), minlength=c * h * w).reshape(shape)


def _check_conv(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray | None = None) -> None:
    if x.ndim != 3:
        raise ShapeError(f"conv input must be (C, H, W), got {x.shape}")
    if kernels.ndim != 4 or kernels.shape[2:] != (3, 3):
        raise ShapeError(f"kernels must be (C_out, C_in, 3, 3), got {kernels.shape}")
    if kernels.shape[1] != x.shape[0]:
        raise ShapeError(f"kernel expects {kernels.shape[1]} input channels, got {x.shape[0]}")
    if bias is not None and bias.shape != (kernels.shape[0],):
        raise ShapeError(f"bias must be ({kernels.shape[0]},), got {bias.shape}")


def conv2d_forward(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray) -> np.ndarray:
    _check_conv(x, kernels, bias)
    c_out = kernels.shape[0]
    _, h, w = x.shape
    y = kernels.reshape(c_out, -1) @ _cols(x)
    return y.reshape(c_out, h, w) + bias[:, None, None]


def conv2d_backward(grad_out: np.ndarray, x: np.ndarray, kernels: np.ndarray):
    """Returns ``(grad_input, grad_kernels, grad_bias)``."""
    _check_conv(x, kernels)
    c_out, c_in = kernels.shape[:2]
    _, h, w = x.shape
    if grad_out.shape != (c_out, h, w):
        raise ShapeError(f"grad_out shape {grad_out.shape} != {(c_out, h, w)}")
    g = grad_out.reshape(c_out, h * w)
    grad_k = (g @ _cols(x).T).reshape(kernels.shape)
    grad_b = g.sum(axis=1)

    gcols = kernels.reshape(c_out, -1).T @ g
    return _uncols(gcols, x.shape), grad_k, grad_b


# --- pointwise and pooling -------------------------------------------------


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(grad_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    return grad_out * (x > 0.0)


def sigmoid_forward(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid_backward(grad_out: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``y`` is the forward output."""
    return grad_out * y * (1.0 - y)


def avgpool2_forward(x: np.ndarray) -> np.ndarray:
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avgpool2 needs even spatial size, got {h}x{w}")
    return x.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))


def avgpool2_backward(grad_out: np.ndarray) -> np.ndarray:
    return 0.25 * np.repeat(np.repeat(grad_out, 2, axis=1), 2, axis=2)


def linear_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    if x.shape[-1] != weight.shape[1] or bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: input {x.shape}, weight {weight.shape}, bias {bias.shape}")
    return x @ weight.T + bias


def linear_backward(grad_out: np.ndarray, x: np.ndarray, weight: np.ndarray):
    """Returns ``(grad_input, grad_weight, grad_bias)``; batched over leading axes."""
    if grad_out.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear grad {grad_out.shape} vs weight {weight.shape}")
    g2 = grad_out.reshape(-1, weight.shape[0])
    x2 = x.reshape(-1, weight.shape[1])
    return grad_out @ weight, g2.T @ x2, g2.sum(axis=0)


def concat_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[1:] != b.shape[1:]:
        raise ShapeError(f"cannot concatenate {a.shape} and {b.shape}")
    return np.concatenate([a, b], axis=0)


def split_channels_grad(grad: np.ndarray, first: int) -> tuple[np.ndarray, np.ndarray]:
    return grad[:first], grad[first:]


def mse_loss(a: np.ndarray, b: np.ndarray) -> tuple[float, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"mse operands differ: {a.shape} vs {b.shape}")
    diff = a - b
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


# --- Adam ------------------------------------------------------------------


@dataclass
class AdamState:
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: Params, grads: Params, state: AdamState, lr: float) -> tuple[Params, AdamState]:
    """Bias-corrected Adam descent step; returns new params and state."""
    for name, p in params.items():
        if grads[name].shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {grads[name].shape}, expected {p.shape}")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        m = b1 * state.m.get(name, np.zeros_like(p)) + (1.0 - b1) * g
        v = b2 * state.v.get(name, np.zeros_like(p)) + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(new_m, new_v, t, b1, b2, state.eps)


class Adam:
    """Stateful convenience wrapper that updates a parameter dict in place."""

    def __init__(self, lr: float):
        self.lr = lr
        self.state = AdamState()

    def step(self, params: Params, grads: Params) -> None:
        updated, self.state = adam_step(params, grads, self.state, self.lr)
        for name, value in updated.items():
            params[name][...] = value


# --- finite differences ----------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: str
    checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def rel_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    """Relative error with an absolute floor below which entries are compared absolutely."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(
    fn: Callable[[Params], tuple[float, Params]],
    params: Params,
    tolerance: float = 1e-4,
    h: float = 1e-4,
    max_entries: int | None = None,
    seed: int = 0,
    loss_fn: Callable[[Params], float] | None = None,
) -> GradCheckReport:
    """Compare ``fn``'s analytic gradients with central finite differences.

    ``fn(params)`` returns ``(loss, grads)``. ``loss_fn``, when given, is a
    cheaper forward-only evaluation used for the perturbed points. With
    ``max_entries`` only that many randomly chosen entries per tensor are
    perturbed.
    """
    _, grads = fn(params)
    if loss_fn is None:
        loss_fn = lambda q: fn(q)[0]  # noqa: E731
    rng = np.random.default_rng(seed)
    worst, worst_name, checked = 0.0, "", 0
    for name, p in params.items():
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn(params)
            flat[i] = orig - h
            down = loss_fn(params)
            flat[i] = orig
            err = rel_error(float(grads[name].reshape(-1)[i]), (up - down) / (2.0 * h))
            checked += 1
            if err > worst:
                worst, worst_name = err, f"{name}[{i}]"
    return GradCheckReport(worst, worst_name, checked, tolerance)


# --- checkpoints -----------------------------------------------------------

MAGIC = b"FCKPT1"


def save_checkpoint(path, tensors: Params) -> None:
    chunks = [MAGIC]
    for name, arr in tensors.items():
        encoded = name.encode("utf-8")
        arr = np.asarray(arr, dtype=np.float64)
        chunks.append(struct.pack("<I", len(encoded)) + encoded)
        chunks.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(arr.astype("<f8").tobytes())
    try:
        with open(path, "wb") as fh:
            fh.write(b"".join(chunks))
    except OSError as exc:
        raise IoError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path) -> Params:
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read checkpoint {path}: {exc}") from exc
    if not buf.startswith(MAGIC):
        raise ParseError(f"{path}: not an FCKPT1 checkpoint")
    out: Params = {}
    pos = len(MAGIC)
    try:
        while pos < len(buf):
            (n,) = struct.unpack_from("<I", buf, pos)
            name = buf[pos + 4:pos + 4 + n].decode("utf-8")
            pos += 4 + n
            (rank,) = struct.unpack_from("<I", buf, pos)
            shape = struct.unpack_from(f"<{rank}I", buf, pos + 4)
            pos += 4 + 4 * rank
            count = int(np.prod(shape))
            if pos + 8 * count > len(buf):
                raise ParseError(f"{path}: tensor {name!r} truncated")
            out[name] = np.frombuffer(buf, "<f8", count, pos).astype(np.float64).reshape(shape)
            pos += 8 * count
    except (struct.error, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: corrupt checkpoint") from exc
    return out
