"""Image quality metrics used for agent states, rewards and evaluation."""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Callable, Protocol

import numpy as np

from .errors import DimensionError
from .filters import gaussian_kernel1d, separable, sobel_magnitude
from .imgio import check_same_shape

STATE_METRICS = ("ag", "ei", "vif", "sd", "iqa")
VIF_NOISE_VAR = 2.0
_VAR_FLOOR = 1e-10


def avg_gradient(img) -> float:
    img = np.asarray(img, dtype=np.float64)
    dx = img[:-1, 1:] - img[:-1, :-1]
    dy = img[1:, :-1] - img[:-1, :-1]
    return float(np.mean(np.sqrt((dx * dx + dy * dy) / 2.0)))


def spatial_frequency(img) -> float:
    img = np.asarray(img, dtype=np.float64)
    rf = np.mean((img[:, 1:] - img[:, :-1]) ** 2)
    cf = np.mean((img[1:, :] - img[:-1, :]) ** 2)
    return float(np.sqrt(rf + cf))


def edge_intensity(img) -> float:
    return float(np.mean(sobel_magnitude(np.asarray(img, dtype=np.float64))))


def entropy(img) -> float:
    img = np.asarray(img, dtype=np.float64)
    bins = np.minimum(np.floor(img * 256).astype(np.int64), 255)
    q = np.bincount(bins.ravel(), minlength=256) / bins.size
    q = q[q > 0]
    return float(-np.sum(q * np.log2(q)) + 0.0)


def std_dev(img) -> float:
    img = np.asarray(img, dtype=np.float64)
    # shifting by one sample keeps flat images at exactly 0
    return float(np.std(img - img.flat[0]))


def vif(reference, distorted) -> float:
    """Pixel-domain visual information fidelity over four scales.

    Both images are rescaled to the 0..255 range internally. Filtering uses
    replicate padding so every image of at least 8x8 is accepted.
    """
    ref = np.asarray(reference, dtype=np.float64)
    dist = np.asarray(distorted, dtype=np.float64)
    if ref.shape != dist.shape:
        raise DimensionError(f"vif inputs differ in size: {ref.shape} vs {dist.shape}")
    if np.array_equal(ref, dist) and ref.max() > ref.min():
        # g = 1 and sv = 0 at every location
        return 1.0

    ref = ref * 255.0
    dist = dist * 255.0
    num = den = 0.0
    for scale in range(1, 5):
        n = 2 ** (5 - scale) + 1
        taps = gaussian_kernel1d(n, n / 5.0)
        if scale > 1:
            ref = separable(ref, taps)[::2, ::2]
            dist = separable(dist, taps)[::2, ::2]
        mu1 = separable(ref, taps)
        mu2 = separable(dist, taps)
        var1 = np.maximum(separable(ref * ref, taps) - mu1 * mu1, 0.0)
        var2 = np.maximum(separable(dist * dist, taps) - mu2 * mu2, 0.0)
        cov = separable(ref * dist, taps) - mu1 * mu2
        var1[var1 < _VAR_FLOOR] = 0.0
        var2[var2 < _VAR_FLOOR] = 0.0

        g = np.maximum(cov / (var1 + 1e-10), 0.0)
        g[var1 == 0.0] = 0.0
        sv = np.maximum(var2 - g * cov, 0.0)

        num += np.sum(np.log2(1.0 + g * g * var1 / (sv + VIF_NOISE_VAR)))
        den += np.sum(np.log2(1.0 + var1 / VIF_NOISE_VAR))
    if den == 0.0:
        return 1.0
    return float(num / den)


def viff_fusion(ir, vi, fused) -> float:
    """Symmetric mean of the fused image's fidelity to each source."""
    check_same_shape(ir, vi, fused)
    return 0.5 * (vif(ir, fused) + vif(vi, fused))


class IqaScorer(Protocol):
    def __call__(self, img: np.ndarray) -> float: ...


NOISE_FLOOR = 0.015
NOISE_SCALE = 0.01


def noise_sigma(img) -> float:
    """Robust noise estimate: median |HH| of the finest Haar level / 0.6745."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    a = img[: h // 2 * 2, : w // 2 * 2]
    hh = (a[0::2, 0::2] - a[0::2, 1::2] - a[1::2, 0::2] + a[1::2, 1::2]) / 2.0
    return float(np.median(np.abs(hh)) / 0.6745)


def proxy_iqa(img) -> float:
    """Deterministic stand-in for a prompt-based CLIP-IQA score, in [0, 1).

    Detail and contrast (``0.5*tanh(4*AG) + 0.5*tanh(4*SD)``) attenuated by
    ``exp(-max(sigma - NOISE_FLOOR, 0) / NOISE_SCALE)`` where ``sigma`` is
    the robust noise estimate. Below the floor the attenuation is exactly 1.
    """
    detail = 0.5 * np.tanh(4.0 * avg_gradient(img)) + 0.5 * np.tanh(4.0 * std_dev(img))
    excess = max(noise_sigma(img) - NOISE_FLOOR, 0.0)
    return float(detail * np.exp(-excess / NOISE_SCALE))


_iqa_backend: IqaScorer = proxy_iqa


def set_iqa_backend(scorer: IqaScorer | None) -> IqaScorer:
    """Install a different IQA* scorer (``None`` restores the proxy); returns the old one."""
    global _iqa_backend
    previous = _iqa_backend
    _iqa_backend = proxy_iqa if scorer is None else scorer
    return previous


def iqa_star(img, scorer: Callable[[np.ndarray], float] | None = None) -> float:
    return float((scorer or _iqa_backend)(np.asarray(img, dtype=np.float64)))


@dataclass(frozen=True)
class MetricVector:
    ag: float
    ei: float
    vif: float
    sd: float
    iqa: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)], dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> "MetricVector":
        return cls(*(float(v) for v in values))


def metric_vector(fused, ir, vi, scorer=None) -> MetricVector:
    check_same_shape(fused, ir, vi)
    return MetricVector(
        ag=avg_gradient(fused),
        ei=edge_intensity(fused),
        vif=viff_fusion(ir, vi, fused),
        sd=std_dev(fused),
        iqa=iqa_star(fused, scorer),
    )


class RunningNormalizer:
    """Per-metric running min-max scaling into [0, 1].

    Single writer: callers serialise ``update``; ``scale`` is read-only.
    """

    def __init__(self, size: int = len(STATE_METRICS), eps: float = 1e-6):
        self.eps = eps
        self.lo = np.full(size, np.inf)
        self.hi = np.full(size, -np.inf)

    @property
    def initialised(self) -> bool:
        return bool(np.all(np.isfinite(self.lo)))

    def update(self, values) -> None:
        values = np.asarray(values, dtype=np.float64)
        self.lo = np.minimum(self.lo, values)
        self.hi = np.maximum(self.hi, values)

    def scale(self, values) -> np.ndarray:
        if not self.initialised:
            raise ValueError("normalizer has not observed any values")
        values = np.asarray(values, dtype=np.float64)
        out = (values - self.lo) / (self.hi - self.lo + self.eps)
        return np.clip(out, 0.0, 1.0)

    def normalize(self, values) -> np.ndarray:
        """Fold ``values`` into the running range, then scale them."""
        self.update(values)
        return self.scale(values)

    def copy(self) -> "RunningNormalizer":
        other = RunningNormalizer(len(self.lo), self.eps)
        other.lo = self.lo.copy()
        other.hi = self.hi.copy()
        return other


def normalize(norm: RunningNormalizer, m: MetricVector) -> tuple[MetricVector, RunningNormalizer]:
    """Functional form: returns the scaled vector and an updated copy of ``norm``."""
    updated = norm.copy()
    return MetricVector.from_array(updated.normalize(m.as_array())), updated


def full_report(fused, ir=None, vi=None) -> dict[str, float]:
    """All evaluation metrics for one image; ``viff`` is NaN without sources."""
    fused = np.asarray(fused, dtype=np.float64)
    return {
        "ag": avg_gradient(fused),
        "sf": spatial_frequency(fused),
        "ei": edge_intensity(fused),
        "en": entropy(fused),
        "sd": std_dev(fused),
        "viff": viff_fusion(ir, vi, fused) if ir is not None else float("nan"),
        "iqa": iqa_star(fused),
    }
