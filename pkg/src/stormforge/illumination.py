"""Multi-source Gaussian illumination fields and the gain-map statistics
feeding the stage-2 brightness regularizers.

Light sources live in normalized [0, 1]^2 coordinates so the same parameters
describe the same lighting at any resolution. The field is the plain sum of
isotropic Gaussians; the gain map is its affine modulation toward neutral
brightness. Overlapping sources are left unnormalized; runaway amplification
is handled by the max-gain hinge penalty, not by rescaling.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .image import check_gray

STRENGTH_BOUNDS = (0.0, 2.0)
RADIUS_BOUNDS = (0.05, 0.6)


@dataclass(frozen=True)
class LightSource:
    """One Gaussian light source: center, peak strength, and radius."""

    x: float
    y: float
    strength: float
    radius: float

    def __post_init__(self):
        if not 0.0 <= self.x <= 1.0 or not 0.0 <= self.y <= 1.0:
            raise ValueError(f"source center must lie in [0,1]^2, got ({self.x}, {self.y})")
        lo, hi = STRENGTH_BOUNDS
        if not lo <= self.strength <= hi:
            raise ValueError(f"strength must lie in [{lo}, {hi}], got {self.strength}")
        lo, hi = RADIUS_BOUNDS
        if not lo <= self.radius <= hi:
            raise ValueError(f"radius must lie in [{lo}, {hi}], got {self.radius}")


@dataclass(frozen=True)
class IlluminationParams:
    """Source list plus modulation strength and the regularizer anchors.

    ``mix`` in [0, 1] controls how strongly the field modulates brightness
    (0 leaves the image untouched). ``gain_ref`` is the reference mean-gain
    level and ``gain_threshold`` the hinge bound on the maximum gain.
    """

    sources: tuple[LightSource, ...] = field(
        default_factory=lambda: (LightSource(0.5, 0.5, 1.0, 0.3),)
    )
    mix: float = 0.5
    gain_ref: float = 1.0
    gain_threshold: float = 1.5

    def __post_init__(self):
        sources = tuple(self.sources)
        if not sources:
            raise ValueError("at least one light source is required")
        if not 0.0 <= self.mix <= 1.0:
            raise ValueError(f"mix must lie in [0, 1], got {self.mix}")
        if not np.isfinite(self.gain_ref) or not np.isfinite(self.gain_threshold):
            raise ValueError("gain_ref and gain_threshold must be finite")
        if not self.gain_threshold > self.gain_ref > 0.0:
            raise ValueError(
                f"need gain_threshold > gain_ref > 0, got {self.gain_threshold}, {self.gain_ref}"
            )
        object.__setattr__(self, "sources", sources)

    def replace(self, **kwargs) -> "IlluminationParams":
        return dataclasses.replace(self, **kwargs)


def eval_field(params: IlluminationParams, height: int, width: int) -> np.ndarray:
    """Evaluate the summed Gaussian field on the normalized pixel-center grid."""
    if height < 1 or width < 1:
        raise ValueError("canvas has zero area")
    ys = (np.arange(height) + 0.5) / height
    xs = (np.arange(width) + 0.5) / width
    gx, gy = np.meshgrid(xs, ys)
    out = np.zeros((height, width))
    for src in params.sources:
        d2 = (gx - src.x) ** 2 + (gy - src.y) ** 2
        out += src.strength * np.exp(-d2 / (2.0 * src.radius**2))
    return out


def gain_map(params: IlluminationParams, height: int, width: int) -> np.ndarray:
    """Affine gain map ``mix * field + (1 - mix)``; clamping happens on apply."""
    return params.mix * eval_field(params, height, width) + (1.0 - params.mix)


def gain_stats(gain) -> tuple[float, float]:
    """Arithmetic mean and maximum of a gain map."""
    gain = check_gray(gain)
    return float(gain.mean()), float(gain.max())


def illumination_penalties(stats: tuple[float, float], gain_ref: float,
                           gain_threshold: float) -> tuple[float, float]:
    """Unweighted regularizer terms: squared mean deviation, max-gain hinge.

    Objective assemblers apply their own weights to the returned pair.
    """
    mean_gain, max_gain = stats
    if not (np.isfinite(mean_gain) and np.isfinite(max_gain)):
        raise ValueError("gain statistics must be finite")
    global_term = (mean_gain - gain_ref) ** 2
    range_term = max(0.0, max_gain - gain_threshold)
    return float(global_term), float(range_term)
