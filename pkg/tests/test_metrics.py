import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stormforge.metrics import (
    FeatureExtractionError,
    PyramidExtractor,
    SsimConstants,
    perceptual_distance,
    ssim,
    ssim_loss,
    stage1_margin,
    stage1_weight_reg,
    stage2_hinge,
)

LUMA = (0.299, 0.587, 0.114)


def naive_ssim(a, b, c1=1e-4, c2=9e-4, window=7):
    """Direct sliding-window reference, no vectorized filtering."""
    la = a[:, :, 0] * LUMA[0] + a[:, :, 1] * LUMA[1] + a[:, :, 2] * LUMA[2]
    lb = b[:, :, 0] * LUMA[0] + b[:, :, 1] * LUMA[1] + b[:, :, 2] * LUMA[2]
    h, w = la.shape
    values = []
    for i in range(h - window + 1):
        for j in range(w - window + 1):
            pa = la[i : i + window, j : j + window]
            pb = lb[i : i + window, j : j + window]
            mu_a, mu_b = pa.mean(), pb.mean()
            var_a = (pa * pa).mean() - mu_a * mu_a
            var_b = (pb * pb).mean() - mu_b * mu_b
            cov = (pa * pb).mean() - mu_a * mu_b
            values.append(
                ((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
            )
    return float(np.mean(values))


def test_ssim_self_is_exactly_one(rng):
    img = rng.random((20, 20, 3))
    assert ssim(img, img) == 1.0


def test_ssim_constant_image_analytic_case():
    a = np.full((16, 16, 3), 0.5)
    b = np.full((16, 16, 3), 0.3)
    expected = (2 * 0.5 * 0.3 + 1e-4) * 9e-4 / ((0.25 + 0.09 + 1e-4) * 9e-4)
    value = ssim(a, b)
    assert abs(value - expected) < 1e-12
    assert abs(value - 0.8824) < 1e-4


def test_ssim_matches_naive_reference(rng):
    for _ in range(10):
        a = rng.random((32, 32, 3))
        b = np.clip(a + 0.15 * rng.standard_normal(a.shape), 0.0, 1.0)
        assert abs(ssim(a, b) - naive_ssim(a, b)) < 1e-6


def test_ssim_symmetric(rng):
    a = rng.random((16, 16, 3))
    b = rng.random((16, 16, 3))
    assert abs(ssim(a, b) - ssim(b, a)) < 1e-12


def test_ssim_window_larger_than_image():
    with pytest.raises(ValueError):
        ssim(np.zeros((4, 4, 3)), np.zeros((4, 4, 3)), SsimConstants(window=7))


def test_ssim_dimension_mismatch():
    with pytest.raises(ValueError):
        ssim(np.zeros((8, 8, 3)), np.zeros((9, 8, 3)))


def test_ssim_constants_validation():
    with pytest.raises(ValueError):
        SsimConstants(c1=0.0)
    with pytest.raises(ValueError):
        SsimConstants(window=4)


def test_ssim_loss_identity_and_complement(rng):
    img = rng.random((16, 16, 3))
    assert ssim_loss(img, img) == 0.0
    a = np.full((16, 16, 3), 0.5)
    b = np.full((16, 16, 3), 0.3)
    assert abs(ssim_loss(a, b) - 0.1176) < 1e-4


def test_ssim_loss_symmetric(rng):
    a = rng.random((12, 12, 3))
    b = rng.random((12, 12, 3))
    assert abs(ssim_loss(a, b) - ssim_loss(b, a)) < 1e-12


# --- perceptual distance -----------------------------------------------------


def test_perceptual_zero_on_identical(rng):
    img = rng.random((32, 32, 3))
    assert perceptual_distance(img, img, PyramidExtractor()) == 0.0


def test_perceptual_nonnegative_and_symmetric(rng):
    ex = PyramidExtractor()
    for _ in range(5):
        a = rng.random((32, 32, 3))
        b = rng.random((32, 32, 3))
        d = perceptual_distance(a, b, ex)
        assert d >= 0.0
        assert abs(d - perceptual_distance(b, a, ex)) < 1e-12


def test_perceptual_constant_offset_closed_form(rng):
    ex = PyramidExtractor(levels=4)
    img = np.clip(rng.random((32, 32, 3)) * 0.8, 0.0, 0.85)
    shifted = img + 0.1
    d = perceptual_distance(img, shifted, ex)
    assert abs(d - 0.01 * 4) < 1e-9

    # Verified against an explicit per-level loop.
    fa, fb = ex.extract(img), ex.extract(shifted)
    manual = 0.0
    for va, vb in zip(fa, fb):
        acc = 0.0
        for x, y_val in zip(va, vb):
            acc += (x - y_val) ** 2
        manual += acc / va.size
    assert abs(d - manual) < 1e-9


def test_perceptual_requires_two_levels(rng):
    class OneLevel:
        def extract(self, img):
            return [np.zeros(4)]

    with pytest.raises(FeatureExtractionError):
        perceptual_distance(rng.random((8, 8, 3)), rng.random((8, 8, 3)), OneLevel())


def test_extractor_failure_is_distinct(rng):
    class Broken:
        def extract(self, img):
            raise RuntimeError("backend down")

    with pytest.raises(FeatureExtractionError):
        perceptual_distance(rng.random((8, 8, 3)), rng.random((8, 8, 3)), Broken())


def test_pyramid_extractor_validation():
    with pytest.raises(ValueError):
        PyramidExtractor(levels=1)


# --- margins and regularizer -------------------------------------------------


def test_stage1_margin_direct():
    assert stage1_margin([0.9, 0.7, 0.5], 0) == pytest.approx(0.2)
    assert stage1_margin([0.3, 0.8], 0) == pytest.approx(-0.5)


def test_stage1_margin_single_label_rejected():
    with pytest.raises(ValueError):
        stage1_margin([0.5], 0)


@settings(max_examples=40, deadline=None)
@given(
    shift=st.floats(-5.0, 5.0),
    scores=st.lists(st.floats(-1.0, 1.0), min_size=2, max_size=6),
)
def test_margin_and_hinge_shift_invariant(shift, scores):
    y = 0
    base_margin = stage1_margin(scores, y)
    base_hinge = stage2_hinge(scores, y, 0.1)
    shifted = [s + shift for s in scores]
    assert stage1_margin(shifted, y) == pytest.approx(base_margin, abs=1e-9)
    assert stage2_hinge(shifted, y, 0.1) == pytest.approx(base_hinge, abs=1e-9)


@pytest.mark.parametrize("scores,delta,expected", [
    ([0.3, 0.5], 0.1, 0.0),    # gap +0.2 beats delta
    ([0.45, 0.5], 0.1, 0.05),  # gap +0.05 short by 0.05
    ([0.8, 0.5], 0.1, 0.4),    # gap -0.3
])
def test_stage2_hinge_cases(scores, delta, expected):
    assert stage2_hinge(scores, 0, delta) == pytest.approx(expected)


def test_stage2_hinge_monotone_in_gap():
    previous = np.inf
    for gap in np.linspace(-0.5, 0.5, 11):
        value = stage2_hinge([0.0, gap], 0, 0.1)
        assert value <= previous + 1e-15
        previous = value


def test_stage2_hinge_rejects_negative_margin():
    with pytest.raises(ValueError):
        stage2_hinge([0.1, 0.2], 0, -0.1)


def test_weight_reg_values():
    assert stage1_weight_reg(0.02, 0.02) == 0.0
    assert stage1_weight_reg(0.5, 0.02) == pytest.approx(0.2304)
    assert stage1_weight_reg(0.1, 0.3) == pytest.approx(stage1_weight_reg(0.5, 0.3))


def test_weight_reg_validation():
    with pytest.raises(ValueError):
        stage1_weight_reg(1.5, 0.0)


def test_top_k_indices_orders_best_first():
    from stormforge.metrics import top_k_indices

    values = [0.3, 0.0, 0.2, 0.5, 0.0]
    picked = top_k_indices(values, 3)
    assert list(picked) == [1, 4, 2]  # stable on the tie at 0.0
    # A floor-value candidate always makes the cut.
    assert 1 in top_k_indices(values, 1)
    with pytest.raises(ValueError):
        top_k_indices(values, 0)
    with pytest.raises(ValueError):
        top_k_indices(values, 6)
