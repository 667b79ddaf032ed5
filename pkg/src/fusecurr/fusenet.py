"""Student fusion network, teachers, the frozen feature pyramid and the training losses."""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import micrograd as mg
from .degrade import gaussian_blur
from .errors import DimensionError, ParseError, WeightError
from .filters import box_filter, sobel_magnitude
from .imgio import load_pgm

ENC_WIDTH = 8
PYRAMID_WIDTHS = (8, 16, 32, 32, 32)
PYRAMID_STD = 0.2
# feature taps of a VGG-19 style configuration, one per pyramid stage
PYRAMID_TAPS = ("conv1_1", "conv2_1", "conv3_1", "conv4_2", "conv5_2")

# (name, c_in, c_out) in forward order
_STUDENT_LAYERS = (
    ("enc_vi.0", 1, ENC_WIDTH),
    ("enc_vi.1", ENC_WIDTH, ENC_WIDTH),
    ("enc_ir.0", 1, ENC_WIDTH),
    ("enc_ir.1", ENC_WIDTH, ENC_WIDTH),
    ("dec.0", 2 * ENC_WIDTH, ENC_WIDTH),
    ("dec.1", ENC_WIDTH, 1),
)


class StudentNet:
    """Dual-branch micro fusion network: two 2-layer encoders, concat, 2-layer decoder."""

    prefix = "student."

    def __init__(self, params: mg.Params):
        self.params = params

    @classmethod
    def init(cls, seed: int) -> "StudentNet":
        rng = np.random.default_rng(seed)
        params = {}
        for name, c_in, c_out in _STUDENT_LAYERS:
            fan_in = 9 * c_in
            params[f"{name}.w"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), (c_out, c_in, 3, 3))
            params[f"{name}.b"] = np.zeros(c_out)
        return cls(params)

    @classmethod
    def zeros(cls) -> "StudentNet":
        return cls({
            f"{name}.{k}": np.zeros((c_out, c_in, 3, 3) if k == "w" else c_out)
            for name, c_in, c_out in _STUDENT_LAYERS
            for k in ("w", "b")
        })

    def copy(self) -> "StudentNet":
        return StudentNet({k: v.copy() for k, v in self.params.items()})

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def _conv(self, name, x):
        return mg.conv2d_forward(x, self.params[f"{name}.w"], self.params[f"{name}.b"])

    def forward(self, ir, vi):
        """Returns ``(fused, cache)``; ``fused`` has the input's ``(H, W)`` shape."""
        ir = np.asarray(ir, dtype=np.float64)
        vi = np.asarray(vi, dtype=np.float64)
        if ir.shape != vi.shape:
            raise DimensionError(f"ir {ir.shape} and vi {vi.shape} differ")
        if ir.ndim != 2 or min(ir.shape) < 16 or ir.shape[0] % 2 or ir.shape[1] % 2:
            raise DimensionError(f"student input must be even-sized and at least 16x16, got {ir.shape}")
        cache = {}
        branches = []
        for branch, src in (("enc_vi", vi), ("enc_ir", ir)):
            x0 = src[None]
            z0 = self._conv(f"{branch}.0", x0)
            a0 = mg.relu_forward(z0)
            z1 = self._conv(f"{branch}.1", a0)
            a1 = mg.relu_forward(z1)
            cache[branch] = (x0, z0, a0, z1)
            branches.append(a1)
        cat = mg.concat_channels(*branches)
        z2 = self._conv("dec.0", cat)
        a2 = mg.relu_forward(z2)
        z3 = self._conv("dec.1", a2)
        out = mg.sigmoid_forward(z3)
        cache["dec"] = (cat, z2, a2, out)
        return out[0], cache

    def __call__(self, ir, vi) -> np.ndarray:
        return self.forward(ir, vi)[0]

    def backward(self, grad_fused: np.ndarray, cache) -> mg.Params:
        p = self.params
        grads: mg.Params = {}
        cat, z2, a2, out = cache["dec"]
        g = mg.sigmoid_backward(grad_fused[None], out)
        g, grads["dec.1.w"], grads["dec.1.b"] = mg.conv2d_backward(g, a2, p["dec.1.w"])
        g = mg.relu_backward(g, z2)
        g, grads["dec.0.w"], grads["dec.0.b"] = mg.conv2d_backward(g, cat, p["dec.0.w"])
        g_vi, g_ir = mg.split_channels_grad(g, ENC_WIDTH)
        for branch, gb in (("enc_vi", g_vi), ("enc_ir", g_ir)):
            x0, z0, a0, z1 = cache[branch]
            h = mg.relu_backward(gb, z1)
            h, grads[f"{branch}.1.w"], grads[f"{branch}.1.b"] = mg.conv2d_backward(h, a0, p[f"{branch}.1.w"])
            h = mg.relu_backward(h, z0)
            _, grads[f"{branch}.0.w"], grads[f"{branch}.0.b"] = mg.conv2d_backward(h, x0, p[f"{branch}.0.w"])
        return {k: grads[k] for k in p}

    def state_dict(self) -> mg.Params:
        return {self.prefix + k: v for k, v in self.params.items()}

    @classmethod
    def from_state_dict(cls, tensors: mg.Params) -> "StudentNet":
        n = len(cls.prefix)
        params = {k[n:]: v.copy() for k, v in tensors.items() if k.startswith(cls.prefix)}
        expected = {f"{name}.{k}" for name, _, _ in _STUDENT_LAYERS for k in ("w", "b")}
        if set(params) != expected:
            raise ParseError(f"checkpoint lacks student tensors {sorted(expected - set(params))}")
        return cls(params)


def student_forward(net: StudentNet, ir, vi) -> np.ndarray:
    return net(ir, vi)


# --- teachers --------------------------------------------------------------

# blur strength giving a 5x5 kernel in gaussian_blur
_UNSHARP_D = 2.0 / 3.0


def rule_teacher_fuse(ir, vi) -> np.ndarray:
    """Sobel-saliency weighted average followed by a mild unsharp mask."""
    ir = np.asarray(ir, dtype=np.float64)
    vi = np.asarray(vi, dtype=np.float64)
    if ir.shape != vi.shape:
        raise DimensionError(f"ir {ir.shape} and vi {vi.shape} differ")
    s_ir = box_filter(sobel_magnitude(ir), 5)
    s_vi = box_filter(sobel_magnitude(vi), 5)
    w = s_ir / (s_ir + s_vi + 1e-6)
    fused = w * ir + (1.0 - w) * vi
    sharpened = fused + 0.5 * (fused - gaussian_blur(fused, _UNSHARP_D))
    return np.clip(sharpened, 0.0, 1.0)


class RuleTeacher:
    name = "rule"

    def fuse(self, ir, vi, stem: str | None = None) -> np.ndarray:
        return rule_teacher_fuse(ir, vi)


class FileTeacher:
    """Precomputed teacher fusions: ``<directory>/<stem>.pgm``."""

    def __init__(self, directory):
        self.directory = directory
        self.name = str(directory)

    def fuse(self, ir, vi, stem: str | None = None) -> np.ndarray:
        if stem is None:
            raise ValueError("FileTeacher needs the sample stem")
        img = load_pgm(os.path.join(self.directory, f"{stem}.pgm"))
        if img.shape != np.shape(ir) or np.shape(ir) != np.shape(vi):
            raise DimensionError(f"teacher image for {stem!r} has shape {img.shape}, sources {np.shape(ir)}")
        return img


def make_teacher(source: str):
    return RuleTeacher() if source == "rule" else FileTeacher(source)


# --- frozen feature pyramid --------------------------------------------------


@dataclass
class FeaturePyramid:
    """Five frozen random conv stages with 2x2 average pooling in between."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def init(cls, seed: int = 19) -> "FeaturePyramid":
        rng = np.random.default_rng(seed)
        weights, biases, c_in = [], [], 1
        for c_out in PYRAMID_WIDTHS:
            weights.append(rng.normal(0.0, PYRAMID_STD, (c_out, c_in, 3, 3)))
            biases.append(np.zeros(c_out))
            c_in = c_out
        for arr in weights + biases:
            arr.flags.writeable = False
        return cls(weights, biases)

    def forward(self, img):
        """Returns ``(features, cache)`` with one feature map per stage."""
        img = np.asarray(img, dtype=np.float64)
        h, w = img.shape
        if h % 16 or w % 16:
            raise DimensionError(f"pyramid input must be divisible by 16, got {img.shape}")
        x = img[None]
        feats, cache = [], []
        for i, (k, b) in enumerate(zip(self.weights, self.biases)):
            if i:
                x = mg.avgpool2_forward(x)
            z = mg.conv2d_forward(x, k, b)
            cache.append((x, z))
            x = mg.relu_forward(z)
            feats.append(x)
        return feats, cache

    def features(self, img) -> list[np.ndarray]:
        return self.forward(img)[0]

    def backward(self, feat_grads: list[np.ndarray], cache) -> np.ndarray:
        g_next = None
        for i in reversed(range(len(self.weights))):
            x, z = cache[i]
            g = feat_grads[i] if g_next is None else feat_grads[i] + g_next
            g = mg.relu_backward(g, z)
            g, _, _ = mg.conv2d_backward(g, x, self.weights[i])
            if i:
                g = mg.avgpool2_backward(g)
            g_next = g
        return g_next[0]


def guidance_from_features(pyr: FeaturePyramid, student_fused, teacher_feats) -> tuple[float, np.ndarray]:
    """Teacher-guidance loss with precomputed teacher features."""
    feats, cache = pyr.forward(student_fused)
    loss, grads = 0.0, []
    for fs, ft in zip(feats, teacher_feats):
        diff = fs - ft
        norm = float(np.sqrt(np.sum(diff * diff)))
        loss += norm
        grads.append(diff / norm if norm > 0.0 else np.zeros_like(diff))
    return loss, pyr.backward(grads, cache)


def loss_teacher_guidance(pyr: FeaturePyramid, student_fused, teacher_fused) -> tuple[float, np.ndarray]:
    """Sum over stages of the Euclidean norm of the feature difference.

    The gradient is taken with respect to the student image only.
    """
    if np.shape(student_fused) != np.shape(teacher_fused):
        raise DimensionError(f"{np.shape(student_fused)} vs {np.shape(teacher_fused)}")
    return guidance_from_features(pyr, student_fused, pyr.features(teacher_fused))


def loss_self_learning(fused_original, fused_degraded) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean squared difference; returns gradients for both fusions."""
    if np.shape(fused_original) != np.shape(fused_degraded):
        raise DimensionError(f"{np.shape(fused_original)} vs {np.shape(fused_degraded)}")
    loss, grad = mg.mse_loss(fused_original, fused_degraded)
    return loss, grad, -grad


def check_weights(alpha_t: float, alpha_s: float) -> None:
    if alpha_t < 0.0 or alpha_s < 0.0 or abs(alpha_t + alpha_s - 1.0) > 1e-9:
        raise WeightError(f"loss weights must be non-negative and sum to 1, got {alpha_t}, {alpha_s}")


def loss_total(lt: float, ls: float, alpha_t: float, alpha_s: float) -> float:
    check_weights(alpha_t, alpha_s)
    return alpha_t * lt + alpha_s * ls
