"""stormforge: physically parameterized rainy-weather black-box attacks on
image-text similarity models.

The public surface follows the scikit-learn estimator idiom where it fits:
``RainyWeatherTransform`` for pure weather synthesis and
``TwoStageRainAttack`` for the optimization loop. The functional core
(image ops, rain rendering, illumination fields, metrics, CMA-ES, attack
stages) is importable from the submodules.
"""

from .attack import (
    AttackResult,
    Stage1Config,
    Stage2Config,
    adversarial_image,
    run_attack,
    run_stage1,
    stage2_compose,
)
from .cmaes import CmaEs, CmaesConfig, CmaesResult, minimize
from .estimators import RainyWeatherTransform, TwoStageRainAttack, check_image_batch
from .illumination import IlluminationParams, LightSource, eval_field, gain_map, gain_stats
from .image import apply_gain, blend, check_gray, check_image, load_png, save_png
from .metrics import (
    PyramidExtractor,
    SsimConstants,
    perceptual_distance,
    ssim,
    ssim_loss,
    stage1_margin,
    stage2_hinge,
)
from .rain import RainParams, rain_to_image, render_rain, render_scale_layer
from .scorer import LabelSet, RemoteScorer, ToyScorer, predict

__version__ = "0.1.0"

__all__ = [
    "AttackResult",
    "CmaEs",
    "CmaesConfig",
    "CmaesResult",
    "IlluminationParams",
    "LabelSet",
    "LightSource",
    "PyramidExtractor",
    "RainParams",
    "RainyWeatherTransform",
    "RemoteScorer",
    "SsimConstants",
    "Stage1Config",
    "Stage2Config",
    "ToyScorer",
    "TwoStageRainAttack",
    "adversarial_image",
    "apply_gain",
    "blend",
    "check_gray",
    "check_image",
    "check_image_batch",
    "eval_field",
    "gain_map",
    "gain_stats",
    "load_png",
    "minimize",
    "perceptual_distance",
    "predict",
    "rain_to_image",
    "render_rain",
    "render_scale_layer",
    "run_attack",
    "run_stage1",
    "save_png",
    "ssim",
    "ssim_loss",
    "stage1_margin",
    "stage2_compose",
    "stage2_hinge",
]
