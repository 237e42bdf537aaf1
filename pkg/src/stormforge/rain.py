"""Parametric rain streak synthesis with multi-scale superposition.

A rain layer is controlled by six physical quantities: brightness
contribution, drop density per megapixel, streak length and width, streak
direction, and a motion-blur kernel size. Streaks are rendered per scale
factor and summed over the scale set, so one parameter vector perturbs both
fine local texture and mid-scale structure. Rendering is a pure function of
(parameters, canvas size): the seed fully determines drop placement, so
repeated calls are bit-identical.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .image import check_gray

DEFAULT_SCALES = (1.0, 0.5, 0.25)

#: Per-drop randomization, fixed so the search space stays six-dimensional.
ANGLE_JITTER_DEG = 3.0
LENGTH_JITTER_FRAC = 0.2

MIN_CANVAS = 8


@dataclass(frozen=True)
class RainParams:
    """Rain control vector plus the scale set and RNG seed.

    ``intensity`` is the streak brightness contribution in [0, 1];
    ``density`` the expected drop count per megapixel (scaled per render by
    canvas area and scale factor); ``length``/``width`` the streak geometry
    in pixels at scale 1.0; ``direction`` the streak angle in degrees from
    vertical, in [-45, 45]; ``blur_size`` an odd motion-blur kernel size.
    These component boxes double as the stage-2 search bounds.
    """

    intensity: float = 0.6
    density: float = 400.0
    length: float = 12.0
    width: float = 1.2
    direction: float = -15.0
    blur_size: int = 3
    seed: int = 0
    scales: tuple[float, ...] = DEFAULT_SCALES

    def __post_init__(self):
        if not 0.0 <= self.intensity <= 1.0:
            raise ValueError(f"intensity must lie in [0, 1], got {self.intensity}")
        if self.density < 0.0:
            raise ValueError(f"density must be >= 0, got {self.density}")
        if self.length < 1.0:
            raise ValueError(f"length must be >= 1, got {self.length}")
        if self.width < 0.5:
            raise ValueError(f"width must be >= 0.5, got {self.width}")
        if not -45.0 <= self.direction <= 45.0:
            raise ValueError(f"direction must lie in [-45, 45], got {self.direction}")
        if self.blur_size < 1 or self.blur_size % 2 == 0:
            raise ValueError(f"blur_size must be odd and >= 1, got {self.blur_size}")
        scales = tuple(float(s) for s in self.scales)
        if not scales:
            raise ValueError("scale set must be nonempty")
        if scales[0] != 1.0:
            raise ValueError("first scale must be 1.0")
        if any(s2 >= s1 for s1, s2 in zip(scales, scales[1:])):
            raise ValueError("scales must be strictly decreasing")
        if scales[-1] <= 0.0:
            raise ValueError("scales must be positive")
        object.__setattr__(self, "scales", scales)

    def replace(self, **kwargs) -> "RainParams":
        return dataclasses.replace(self, **kwargs)


def _scale_rng(seed: int, scale: float) -> np.random.Generator:
    # Seed derived from (seed, scale) so per-scale layers are independent
    # streams but deterministic regardless of render order.
    entropy = (int(seed) & 0xFFFFFFFFFFFFFFFF, int(round(scale * 1e9)))
    return np.random.default_rng(np.random.SeedSequence(entropy))


def _stamp_segment(layer: np.ndarray, cx: float, cy: float, angle_deg: float,
                   length: float, width: float, value: float) -> None:
    """Max-compose one anti-aliased streak of the given brightness into layer."""
    h, w = layer.shape
    theta = math.radians(angle_deg)
    # Angle measured from vertical; positive angles lean toward +x.
    dx = math.sin(theta) * length / 2.0
    dy = math.cos(theta) * length / 2.0
    x0, y0, x1, y1 = cx - dx, cy - dy, cx + dx, cy + dy

    margin = width / 2.0 + 1.0
    col_lo = max(int(math.floor(min(x0, x1) - margin)), 0)
    col_hi = min(int(math.ceil(max(x0, x1) + margin)) + 1, w)
    row_lo = max(int(math.floor(min(y0, y1) - margin)), 0)
    row_hi = min(int(math.ceil(max(y0, y1) + margin)) + 1, h)
    if col_lo >= col_hi or row_lo >= row_hi:
        return

    ys, xs = np.mgrid[row_lo:row_hi, col_lo:col_hi]
    px = xs + 0.5
    py = ys + 0.5
    vx, vy = x1 - x0, y1 - y0
    seg_len_sq = vx * vx + vy * vy
    if seg_len_sq == 0.0:
        dist = np.hypot(px - x0, py - y0)
    else:
        t = np.clip(((px - x0) * vx + (py - y0) * vy) / seg_len_sq, 0.0, 1.0)
        dist = np.hypot(px - (x0 + t * vx), py - (y0 + t * vy))
    coverage = np.clip(width / 2.0 + 0.5 - dist, 0.0, 1.0)
    region = layer[row_lo:row_hi, col_lo:col_hi]
    np.maximum(region, coverage * value, out=region)


def motion_kernel(size: int, angle_deg: float) -> np.ndarray:
    """Normalized line kernel through the center, aligned to the streak angle."""
    if size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be odd and >= 1, got {size}")
    if size == 1:
        return np.ones((1, 1))
    kernel = np.zeros((size, size))
    c = (size - 1) / 2.0
    _stamp_segment(kernel, c + 0.5, c + 0.5, angle_deg, float(size - 1), 1.0, 1.0)
    total = kernel.sum()
    if total <= 0.0:
        kernel[int(c), int(c)] = 1.0
        total = 1.0
    return kernel / total


def render_scale_layer(params: RainParams, scale: float, height: int, width: int) -> np.ndarray:
    """Render the streak layer for one scale factor of the scale set.

    The drop count is a Poisson draw with mean ``density * (h*w / 1e6) * scale``
    seeded by (seed, scale); each drop is a jittered line segment stamped at
    the configured brightness and blurred with the direction-aligned kernel.
    """
    if scale not in params.scales:
        raise ValueError(f"scale {scale} is not in the configured scale set")
    if height < MIN_CANVAS or width < MIN_CANVAS:
        raise ValueError(f"canvas must be at least {MIN_CANVAS}x{MIN_CANVAS}, got {height}x{width}")

    rng = _scale_rng(params.seed, scale)
    mean_drops = params.density * (height * width / 1e6) * scale
    n_drops = int(rng.poisson(mean_drops))

    layer = np.zeros((height, width))
    for _ in range(n_drops):
        cx = rng.uniform(0.0, width)
        cy = rng.uniform(0.0, height)
        angle = params.direction + rng.uniform(-ANGLE_JITTER_DEG, ANGLE_JITTER_DEG)
        length = params.length * scale * (1.0 + rng.uniform(-LENGTH_JITTER_FRAC, LENGTH_JITTER_FRAC))
        _stamp_segment(layer, cx, cy, angle, length, params.width * scale, params.intensity)

    if params.blur_size > 1 and n_drops > 0:
        kernel = motion_kernel(params.blur_size, params.direction)
        layer = ndimage.convolve(layer, kernel, mode="constant", cval=0.0)
    return layer


def render_rain(params: RainParams, height: int, width: int) -> np.ndarray:
    """Sum the per-scale layers over the whole scale set, clamped to [0, 1]."""
    total = np.zeros((height, width))
    for scale in params.scales:
        total += render_scale_layer(params, scale, height, width)
    return np.clip(total, 0.0, 1.0)


def rain_to_image(layer) -> np.ndarray:
    """Broadcast a gray rain layer into all three channels, clamped to [0, 1]."""
    layer = check_gray(layer)
    return np.repeat(np.clip(layer, 0.0, 1.0)[:, :, None], 3, axis=2)
