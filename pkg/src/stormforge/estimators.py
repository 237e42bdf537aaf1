"""Scikit-learn compatible wrappers around the synthesis and attack engines.

``RainyWeatherTransform`` is a stateless transformer that applies one fixed
rain + illumination composition to a batch of images; it slots into
pipelines and grid searches through the standard ``get_params`` surface.
``TwoStageRainAttack`` runs the per-image two-stage optimization in ``fit``
and exposes the adversarial images and predicted labels afterwards.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .attack import (
    Stage1Config,
    Stage2Config,
    adversarial_image,
    run_attack,
)
from .illumination import IlluminationParams, LightSource, gain_map
from .image import apply_gain, blend, check_image
from .rain import RainParams, rain_to_image, render_rain
from .scorer import LabelSet, ToyScorer


def check_image_batch(X) -> list[np.ndarray]:
    """Validate a batch: an (n, h, w, 3) array or a sequence of (h, w, 3) images."""
    if isinstance(X, np.ndarray) and X.ndim == 4:
        return [check_image(X[i]) for i in range(X.shape[0])]
    if isinstance(X, (list, tuple)):
        return [check_image(x) for x in X]
    raise ValueError(
        "expected an (n, h, w, 3) array or a sequence of (h, w, 3) images"
    )


class RainyWeatherTransform(BaseEstimator, TransformerMixin):
    """Apply a fixed parametric rain layer and illumination gain to images.

    Parameters mirror the physical controls: streak ``intensity``,
    ``density`` per megapixel, ``length``/``width``/``direction`` geometry,
    ``blur_size``, the blend ``mix_weight``, and a list of
    ``(x, y, strength, radius)`` light source tuples modulated by
    ``light_mix``.
    """

    def __init__(self, intensity=0.6, density=1200.0, length=12.0, width=1.2,
                 direction=-15.0, blur_size=3, scales=(1.0, 0.5, 0.25),
                 mix_weight=0.3, light_sources=((0.3, 0.25, 1.2, 0.3),),
                 light_mix=0.5, seed=0):
        self.intensity = intensity
        self.density = density
        self.length = length
        self.width = width
        self.direction = direction
        self.blur_size = blur_size
        self.scales = scales
        self.mix_weight = mix_weight
        self.light_sources = light_sources
        self.light_mix = light_mix
        self.seed = seed

    def _params(self) -> tuple[RainParams, IlluminationParams]:
        rain = RainParams(
            intensity=self.intensity, density=self.density, length=self.length,
            width=self.width, direction=self.direction, blur_size=self.blur_size,
            seed=self.seed, scales=tuple(self.scales),
        )
        sources = tuple(LightSource(*src) for src in self.light_sources)
        light = IlluminationParams(sources=sources, mix=self.light_mix)
        return rain, light

    def fit(self, X, y=None):
        check_image_batch(X)
        self._params()
        return self

    def transform(self, X) -> list[np.ndarray]:
        images = check_image_batch(X)
        rain, light = self._params()
        out = []
        for img in images:
            h, w = img.shape[:2]
            rained = blend(img, rain_to_image(render_rain(rain, h, w)), self.mix_weight)
            out.append(apply_gain(rained, gain_map(light, h, w)))
        return out


class TwoStageRainAttack(BaseEstimator):
    """Per-image two-stage adversarial optimization as an estimator.

    ``fit(X, y)`` attacks each image against the configured scorer and
    stores the results; ``transform()`` returns the adversarial images and
    ``predict()`` the victim's labels for them. The optimization is
    per-sample, so ``transform``/``predict`` answer for the fitted batch.
    """

    def __init__(self, labels=None, scorer=None, scorer_seed=0,
                 stage1: Stage1Config | None = None,
                 stage2: Stage2Config | None = None, seed=0):
        self.labels = labels
        self.scorer = scorer
        self.scorer_seed = scorer_seed
        self.stage1 = stage1
        self.stage2 = stage2
        self.seed = seed

    def _resolve(self):
        if self.labels is None:
            raise ValueError("labels is required: pass a LabelSet or list of strings")
        labels = self.labels if isinstance(self.labels, LabelSet) else LabelSet.from_labels(self.labels)
        scorer = self.scorer if self.scorer is not None else ToyScorer(labels, seed=self.scorer_seed)
        return labels, scorer, self.stage1 or Stage1Config(), self.stage2 or Stage2Config()

    def fit(self, X, y):
        images = check_image_batch(X)
        y = np.asarray(y, dtype=int)
        if y.shape != (len(images),):
            raise ValueError(f"y must have one label index per image, got shape {y.shape}")
        labels, scorer, stage1, stage2 = self._resolve()
        results = []
        adversarial = []
        for i, (img, true_index) in enumerate(zip(images, y)):
            result = run_attack(
                img, int(true_index), scorer, labels,
                stage1=stage1, stage2=stage2,
                image_id=f"{i:04d}", seed=self.seed + i,
            )
            results.append(result)
            adversarial.append(adversarial_image(img, result, stage1, stage2))
        self.labels_ = labels
        self.results_ = results
        self.adversarial_images_ = adversarial
        self.n_features_in_ = len(images)
        return self

    def transform(self, X=None) -> list[np.ndarray]:
        check_is_fitted(self, "results_")
        return list(self.adversarial_images_)

    def fit_transform(self, X, y) -> list[np.ndarray]:
        return self.fit(X, y).transform()

    def predict(self, X=None) -> np.ndarray:
        check_is_fitted(self, "results_")
        return np.array([r.final_prediction for r in self.results_], dtype=int)

    @property
    def success_rate_(self) -> float:
        check_is_fitted(self, "results_")
        return float(np.mean([r.success for r in self.results_]))
