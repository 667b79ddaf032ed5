import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fusecurr import metrics as M
from fusecurr.degrade import add_noise, gaussian_blur
from fusecurr.errors import DimensionError


def checkerboard(n=8):
    i, j = np.indices((n, n))
    return ((i + j) % 2).astype(np.float64)


def half_split(n=8):
    img = np.zeros((n, n))
    img[n // 2:] = 1.0
    return img


def brute_sobel(img):
    h, w = img.shape
    kx = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=float)
    out = np.zeros_like(img)
    for i in range(h):
        for j in range(w):
            gx = gy = 0.0
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    v = img[min(max(i + di, 0), h - 1), min(max(j + dj, 0), w - 1)]
                    gx += kx[di + 1, dj + 1] * v
                    gy += kx[dj + 1, di + 1] * v
            out[i, j] = math.hypot(gx, gy)
    return out.mean()


images = arrays(np.float64, st.tuples(st.integers(8, 20), st.integers(8, 20)),
                elements=st.floats(0.0, 1.0, allow_nan=False))


@pytest.mark.parametrize("fn", [M.avg_gradient, M.spatial_frequency, M.edge_intensity,
                                M.entropy, M.std_dev, M.iqa_star])
def test_constant_image_scores_zero(fn):
    assert fn(np.full((8, 8), 0.37)) == 0.0


def test_avg_gradient_ramp():
    ramp = np.tile(np.arange(8) / 7.0, (8, 1))
    assert M.avg_gradient(ramp) == pytest.approx((1 / 7) / math.sqrt(2), abs=1e-9)


def test_avg_gradient_brute_force(rng):
    img = rng.random((9, 11))
    total = 0.0
    for i in range(8):
        for j in range(10):
            dx = img[i, j + 1] - img[i, j]
            dy = img[i + 1, j] - img[i, j]
            total += math.sqrt((dx * dx + dy * dy) / 2)
    assert M.avg_gradient(img) == pytest.approx(total / 80, abs=1e-12)


def test_checkerboard_ag_and_sf():
    cb = checkerboard()
    assert M.avg_gradient(cb) == pytest.approx(1.0, abs=1e-9)
    assert M.spatial_frequency(cb) == pytest.approx(math.sqrt(2), abs=1e-9)


def test_vertical_stripes_sf():
    stripes = np.tile(np.arange(8) % 2, (8, 1)).astype(float)
    assert M.spatial_frequency(stripes) == pytest.approx(1.0, abs=1e-9)


def test_edge_intensity_step():
    # rows 3 and 4 straddle the step and see |Gy| = 4, everything else 0
    img = half_split(8)
    assert M.edge_intensity(img) == pytest.approx(2 * 8 * 4 / 64, abs=1e-9)


def test_edge_intensity_matches_brute_force(rng):
    ramp = np.tile(np.arange(10) / 9.0, (10, 1)).T
    assert M.edge_intensity(ramp) == pytest.approx(brute_sobel(ramp), abs=1e-12)
    img = rng.random((9, 12))
    assert M.edge_intensity(img) == pytest.approx(brute_sobel(img), abs=1e-12)


def test_entropy_examples():
    assert M.entropy(half_split()) == pytest.approx(1.0, abs=1e-12)
    four = np.repeat([0.0, 0.3, 0.6, 0.9], 16).reshape(8, 8)
    assert M.entropy(four) == pytest.approx(2.0, abs=1e-12)
    assert M.entropy(np.ones((8, 8))) == 0.0


def test_std_dev_two_pass(rng):
    img = rng.random((13, 17))
    flat = img.ravel().tolist()
    mean = sum(flat) / len(flat)
    ref = math.sqrt(sum((v - mean) ** 2 for v in flat) / len(flat))
    assert M.std_dev(img) == pytest.approx(ref, abs=1e-12)
    assert M.std_dev(half_split()) == pytest.approx(0.5, abs=1e-12)


@given(images)
@settings(max_examples=40, deadline=None)
def test_zero_iff_constant(img):
    constant = img.max() == img.min()
    for fn in (M.spatial_frequency, M.std_dev, M.edge_intensity):
        assert (fn(img) == 0.0) == constant
    if constant:
        assert M.avg_gradient(img) == 0.0
        assert M.entropy(img) == 0.0


def test_avg_gradient_ignores_far_corner():
    # forward differences never reach the bottom-right pixel
    img = np.zeros((8, 8))
    img[-1, -1] = 1.0
    assert M.avg_gradient(img) == 0.0
    assert M.spatial_frequency(img) > 0.0


@given(images)
@settings(max_examples=40, deadline=None)
def test_metrics_are_deterministic_and_finite(img):
    a = M.full_report(img)
    b = M.full_report(img.copy())
    for key in a:
        if key == "viff":
            continue
        assert a[key] == b[key]
        assert math.isfinite(a[key]) and a[key] >= 0.0
    assert 0.0 <= a["iqa"] < 1.0


def test_vif_identity_is_exact(detailed, rng):
    assert M.vif(detailed, detailed) == 1.0
    x = rng.random((16, 16))
    assert M.vif(x, x) == 1.0


def test_vif_against_constant_is_small(rng):
    x = rng.random((32, 32))
    assert M.vif(x, np.full_like(x, 0.5)) < 0.05


def test_vif_blur_ordering(detailed):
    mild = M.vif(detailed, gaussian_blur(detailed, 0.34))
    strong = M.vif(detailed, gaussian_blur(detailed, 1.0))
    assert strong < mild < 1.0


def test_vif_ordering_preserved_under_joint_scaling(detailed):
    candidates = [gaussian_blur(detailed, d) for d in (0.2, 0.5, 1.0)]
    candidates.append(add_noise(detailed, 0.5, 3))
    base = np.argsort([M.vif(detailed, c) for c in candidates])
    scaled = np.argsort([M.vif(0.6 * detailed, 0.6 * c) for c in candidates])
    np.testing.assert_array_equal(base, scaled)


def test_vif_both_constant_is_one():
    assert M.vif(np.zeros((8, 8)), np.zeros((8, 8))) == 1.0


def test_vif_shape_mismatch():
    with pytest.raises(DimensionError):
        M.vif(np.zeros((8, 8)), np.zeros((8, 9)))
    with pytest.raises(DimensionError):
        M.viff_fusion(np.zeros((8, 8)), np.zeros((8, 8)), np.zeros((9, 8)))


def test_viff_examples(rng, detailed):
    assert M.viff_fusion(detailed, detailed, detailed) == 1.0
    vi = rng.random(detailed.shape)
    expected = 0.5 * (1.0 + M.vif(vi, detailed))
    assert M.viff_fusion(detailed, vi, detailed) == pytest.approx(expected, abs=1e-15)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=15, deadline=None)
def test_viff_symmetric(seed):
    rng = np.random.default_rng(seed)
    ir, vi, fused = rng.random((3, 16, 16))
    assert M.viff_fusion(ir, vi, fused) == M.viff_fusion(vi, ir, fused)


def test_iqa_blur_decreases(detailed):
    assert M.iqa_star(gaussian_blur(detailed, 0.5)) < M.iqa_star(detailed)


def test_iqa_matches_detail_formula_on_clean_images(detailed):
    assert M.noise_sigma(detailed) <= M.NOISE_FLOOR
    base = 0.5 * math.tanh(4 * M.avg_gradient(detailed)) + 0.5 * math.tanh(4 * M.std_dev(detailed))
    assert M.iqa_star(detailed) == pytest.approx(base, abs=1e-15)


def test_iqa_penalises_noise(detailed):
    scores = [M.iqa_star(add_noise(detailed, d, 11)) for d in (0.0, 0.25, 0.5, 0.75, 1.0)]
    assert all(b <= a for a, b in zip(scores, scores[1:]))
    assert scores[-1] < scores[0]


def test_noise_sigma_estimates_white_noise():
    img = np.random.default_rng(5).normal(0.5, 0.05, (128, 128))
    assert M.noise_sigma(img) == pytest.approx(0.05, rel=0.1)


def test_iqa_backend_is_pluggable(detailed):
    previous = M.set_iqa_backend(lambda img: 0.25)
    try:
        assert M.iqa_star(detailed) == 0.25
        assert M.metric_vector(detailed, detailed, detailed).iqa == 0.25
    finally:
        M.set_iqa_backend(previous)
    assert M.iqa_star(detailed) == M.proxy_iqa(detailed)
    assert M.iqa_star(detailed, scorer=lambda img: 0.75) == 0.75


def test_metric_vector_components(rng, detailed):
    ir, vi = rng.random((2,) + detailed.shape)
    mv = M.metric_vector(detailed, ir, vi)
    assert mv.ag == M.avg_gradient(detailed)
    assert mv.ei == M.edge_intensity(detailed)
    assert mv.vif == M.viff_fusion(ir, vi, detailed)
    assert mv.sd == M.std_dev(detailed)
    assert mv.iqa == M.iqa_star(detailed)
    assert M.MetricVector.from_array(mv.as_array()) == mv

    flat = np.full((16, 16), 0.4)
    mv = M.metric_vector(flat, ir[:16, :16], vi[:16, :16])
    assert (mv.ag, mv.ei, mv.sd, mv.iqa) == (0.0, 0.0, 0.0, 0.0)
    assert M.metric_vector(detailed, detailed, detailed).vif == 1.0


def test_normalize_first_call_zero_then_one():
    norm = M.RunningNormalizer()
    first, norm2 = M.normalize(norm, M.MetricVector(1, 2, 3, 4, 5))
    assert not norm.initialised and norm2.initialised
    np.testing.assert_array_equal(first.as_array(), np.zeros(5))
    second, _ = M.normalize(norm2, M.MetricVector(2, 3, 4, 5, 6))
    np.testing.assert_allclose(second.as_array(), 1.0 / (1.0 + 1e-6), rtol=1e-15)


def test_normalizer_requires_observation():
    with pytest.raises(ValueError):
        M.RunningNormalizer().scale(np.zeros(5))


@given(st.lists(arrays(np.float64, 5, elements=st.floats(-1e3, 1e3)), min_size=1, max_size=8))
@settings(max_examples=50, deadline=None)
def test_normalizer_range_and_monotone(batches):
    norm = M.RunningNormalizer()
    for values in batches:
        out = norm.normalize(values)
        assert np.all((out >= 0.0) & (out <= 1.0))
        assert np.all(norm.lo <= norm.hi)
    probe = np.linspace(-2e3, 2e3, 9)
    for k in range(5):
        vals = np.zeros((9, 5))
        vals[:, k] = probe
        scaled = np.array([norm.scale(v)[k] for v in vals])
        assert np.all(np.diff(scaled) >= 0.0)
