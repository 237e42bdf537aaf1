"""Scalar loss ingredients: SSIM, multi-level perceptual distance, attack
margins, and the stage-1 mixing-weight regularizer.

SSIM follows the classic windowed-statistics form with a uniform window on
the luma channel. The perceptual distance is defined against an abstract
multi-level feature extractor; the built-in extractor is a Gaussian pyramid
of smoothed, downsampled intensities, and a remote VGG-backed extractor can
be swapped in without touching any call site.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable

import numpy as np
from scipy import ndimage

from .image import check_image

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


class FeatureExtractionError(Exception):
    """The perceptual feature extractor failed to produce features."""


@dataclass(frozen=True)
class SsimConstants:
    """Stabilizers and window size for the windowed SSIM statistics.

    Defaults are the canonical ``(0.01 * D)^2`` and ``(0.03 * D)^2`` for a
    dynamic range of 1, with a 7-pixel uniform window.
    """

    c1: float = 1e-4
    c2: float = 9e-4
    window: int = 7

    def __post_init__(self):
        if self.c1 <= 0.0 or self.c2 <= 0.0:
            raise ValueError("SSIM stabilizers must be positive")
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 3, got {self.window}")


def luma(img) -> np.ndarray:
    """Rec. 601 luma: 0.299 R + 0.587 G + 0.114 B."""
    return check_image(img) @ LUMA_WEIGHTS


def _window_means(plane: np.ndarray, window: int) -> np.ndarray:
    # uniform_filter is exact for interior pixels; crop to the valid region
    # so every retained value is a true full-window mean.
    m = window // 2
    filtered = ndimage.uniform_filter(plane, size=window, mode="constant")
    return filtered[m : plane.shape[0] - m, m : plane.shape[1] - m]


def ssim(a, b, constants: SsimConstants = SsimConstants()) -> float:
    """Mean structural similarity over all full uniform-window positions.

    Inputs are converted to luma first. Identical inputs score exactly 1.0.
    """
    a = check_image(a)
    b = check_image(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    h, w = a.shape[:2]
    if constants.window > h or constants.window > w:
        raise ValueError(f"window {constants.window} exceeds image size {h}x{w}")

    la, lb = luma(a), luma(b)
    win = constants.window
    mu_a = _window_means(la, win)
    mu_b = _window_means(lb, win)
    m_aa = _window_means(la * la, win)
    m_bb = _window_means(lb * lb, win)
    m_ab = _window_means(la * lb, win)
    var_a = m_aa - mu_a * mu_a
    var_b = m_bb - mu_b * mu_b
    cov = m_ab - mu_a * mu_b

    c1, c2 = constants.c1, constants.c2
    numer = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    denom = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(numer / denom))


def ssim_loss(a, b, constants: SsimConstants = SsimConstants()) -> float:
    """``1 - ssim(a, b)``; zero iff structurally identical under the metric."""
    return 1.0 - ssim(a, b, constants)


@runtime_checkable
class FeatureExtractor(Protocol):
    """Multi-level feature extractor used by the perceptual distance."""

    def extract(self, img) -> list[np.ndarray]:
        """Return one flat feature vector per level, coarsest last."""
        ...


class PyramidExtractor:
    """Gaussian-pyramid intensity features, the built-in perceptual extractor.

    Level 0 is the image itself; each further level is smoothed with a
    Gaussian and downsampled by two. Smoothing has unit DC gain, so a
    constant intensity offset shifts every feature element by that offset.
    """

    def __init__(self, levels: int = 4, sigma: float = 1.0):
        if levels < 2:
            raise ValueError("need at least 2 pyramid levels")
        if sigma <= 0.0:
            raise ValueError("sigma must be positive")
        self.levels = levels
        self.sigma = sigma

    def extract(self, img) -> list[np.ndarray]:
        img = check_image(img)
        feats = []
        current = img
        for _ in range(self.levels):
            feats.append(current.ravel())
            blurred = ndimage.gaussian_filter(
                current, sigma=(self.sigma, self.sigma, 0.0), mode="reflect"
            )
            current = blurred[::2, ::2, :]
            if current.shape[0] < 1 or current.shape[1] < 1:
                raise FeatureExtractionError("image too small for the pyramid depth")
        return feats


def perceptual_distance(a, b, extractor: FeatureExtractor) -> float:
    """Sum over levels of the element-count-normalized squared feature distance."""
    a = check_image(a)
    b = check_image(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    try:
        fa = extractor.extract(a)
        fb = extractor.extract(b)
    except FeatureExtractionError:
        raise
    except Exception as exc:
        raise FeatureExtractionError(f"feature extractor failed: {exc}") from exc
    if len(fa) < 2 or len(fa) != len(fb):
        raise FeatureExtractionError(
            f"extractor must provide matching level sets of >= 2 levels, got {len(fa)}/{len(fb)}"
        )
    total = 0.0
    for va, vb in zip(fa, fb):
        if va.shape != vb.shape:
            raise FeatureExtractionError("per-level feature shapes differ")
        diff = va - vb
        total += float(diff @ diff) / diff.size
    return total


def _split_scores(scores, true_index: int) -> tuple[float, float]:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size < 2:
        raise ValueError("need a score vector with at least two labels")
    if not 0 <= true_index < scores.size:
        raise ValueError(f"label index {true_index} out of range for {scores.size} labels")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    others = np.delete(scores, true_index)
    return float(scores[true_index]), float(others.max())


def stage1_margin(scores, true_index: int) -> float:
    """True-label similarity minus the best competing similarity.

    Positive means the true label still wins; minimizing this erodes the
    decision margin.
    """
    s_true, s_rival = _split_scores(scores, true_index)
    return s_true - s_rival


def stage2_hinge(scores, true_index: int, margin: float = 0.05) -> float:
    """Hinge requiring the best wrong label to beat the true one by ``margin``."""
    if margin < 0.0:
        raise ValueError(f"margin must be >= 0, got {margin}")
    s_true, s_rival = _split_scores(scores, true_index)
    return max(0.0, margin - (s_rival - s_true))


def stage1_weight_reg(weight: float, anchor: float) -> float:
    """Quadratic pull of the mixing weight toward its anchor value."""
    for name, value in (("weight", weight), ("anchor", anchor)):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {value}")
    return (weight - anchor) ** 2


def top_k_indices(values: Sequence[float], k: int) -> np.ndarray:
    """Indices of the k smallest values, ordered best-first, stable on ties."""
    values = np.asarray(values, dtype=np.float64)
    if k < 1 or k > values.size:
        raise ValueError(f"k must lie in [1, {values.size}], got {k}")
    return np.argsort(values, kind="stable")[:k]
