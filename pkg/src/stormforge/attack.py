"""Two-stage attack orchestration.

Stage 1 searches a single bounded mixing weight that blends a fixed rain
layer into the image, eroding the decision margin under perceptual and
quadratic regularization. The best weight is then frozen and stage 2 runs
CMA-ES jointly over the six rain parameters and the Gaussian light sources,
driven by a hinge margin plus structural, perceptual, and illumination
penalties. The expensive feature-level perceptual term is charged only to
the top-ranked candidates of each generation.

Every attack is a pure function of (image, configs, seed): reruns produce
byte-identical serialized results. Wall time is kept out of the serialized
record for exactly that reason.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

from .cmaes import CmaEs, CmaesConfig
from .illumination import (
    IlluminationParams,
    LightSource,
    gain_map,
    gain_stats,
    illumination_penalties,
)
from .image import apply_gain, blend, check_image
from .metrics import (
    PyramidExtractor,
    SsimConstants,
    perceptual_distance,
    ssim_loss,
    stage1_margin,
    stage1_weight_reg,
    stage2_hinge,
)
from .rain import RainParams, rain_to_image, render_rain
from .scorer import LabelSet, Scorer, ScorerError, predict

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

W_P_BOUNDS = (0.02, 0.7)

#: Default stage-2 search box for the six rain parameters.
RAIN_BOUNDS = {
    "intensity": (0.0, 1.0),
    "density": (0.0, 3000.0),
    "length": (1.0, 30.0),
    "width": (0.5, 3.0),
    "direction": (-45.0, 45.0),
    "blur_size": (1.0, 9.0),
}

#: Default per-source search box (x, y, strength, radius).
LIGHT_BOUNDS = {
    "x": (0.0, 1.0),
    "y": (0.0, 1.0),
    "strength": (0.0, 2.0),
    "radius": (0.05, 0.6),
}


@dataclass(frozen=True)
class Stage1Config:
    """Bounded scalar mixing search: grid plus golden-section refinement."""

    bounds: tuple[float, float] = W_P_BOUNDS
    perceptual_weight: float = 1e-2
    reg_weight: float = 1e-1
    anchor: float = 0.02
    rain: RainParams = field(default_factory=lambda: RainParams(
        intensity=0.8, density=3000.0, length=14.0, width=1.2,
        direction=-15.0, blur_size=3, seed=1234,
    ))
    budget: int = 32
    grid_points: int = 9

    def __post_init__(self):
        lo, hi = self.bounds
        if not 0.0 <= lo < hi <= 1.0:
            raise ValueError(f"bounds must be ordered within [0, 1], got {self.bounds}")
        if self.perceptual_weight < 0.0 or self.reg_weight < 0.0:
            raise ValueError("loss weights must be >= 0")
        if not lo <= self.anchor <= hi:
            raise ValueError("anchor must lie inside the bounds")
        if self.budget < 10:
            raise ValueError(f"budget must be >= 10 evaluations, got {self.budget}")
        if self.grid_points < 3:
            raise ValueError("need at least 3 grid points")


@dataclass(frozen=True)
class Stage2Config:
    """Joint rain + illumination search settings."""

    margin: float = 0.05
    perceptual_weight: float = 1e-2
    realism_weight: float = 1e-1
    light_weight: float = 1e-1
    range_weight: float = 1e-1
    top_k: int = 5
    n_sources: int = 3
    light_mix: float = 0.5
    gain_ref: float = 1.0
    gain_threshold: float = 1.5
    scales: tuple[float, ...] = (1.0, 0.5, 0.25)
    rain_bounds: dict = field(default_factory=lambda: dict(RAIN_BOUNDS))
    light_bounds: dict = field(default_factory=lambda: dict(LIGHT_BOUNDS))
    population: int = 15
    generations: int = 60
    sigma0: float | None = None
    early_stop: bool = True
    penalty_tol: float = 1e-3
    ssim: SsimConstants = field(default_factory=SsimConstants)

    def __post_init__(self):
        if self.margin < 0.0:
            raise ValueError("margin must be >= 0")
        for name in ("perceptual_weight", "realism_weight", "light_weight", "range_weight"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")
        if not 1 <= self.top_k <= self.population:
            raise ValueError(f"top_k must lie in [1, population], got {self.top_k}")
        if self.n_sources < 1:
            raise ValueError("need at least one light source")
        if not 0.0 <= self.light_mix <= 1.0:
            raise ValueError("light_mix must lie in [0, 1]")

    @property
    def dimension(self) -> int:
        return 6 + 4 * self.n_sources

    def box(self) -> tuple[np.ndarray, np.ndarray]:
        rb, lb = self.rain_bounds, self.light_bounds
        lower = [rb[k][0] for k in ("intensity", "density", "length", "width", "direction", "blur_size")]
        upper = [rb[k][1] for k in ("intensity", "density", "length", "width", "direction", "blur_size")]
        for _ in range(self.n_sources):
            for key in ("x", "y", "strength", "radius"):
                lower.append(lb[key][0])
                upper.append(lb[key][1])
        return np.asarray(lower), np.asarray(upper)


def nearest_odd(value: float) -> int:
    """Nearest odd integer >= 1 (the blur size lives on a continuous axis)."""
    return max(1, 2 * int(round((value - 1.0) / 2.0)) + 1)


def decode_candidate(vector, cfg: Stage2Config, rain_seed: int) -> tuple[RainParams, IlluminationParams]:
    """Split an encoded search vector into rain and illumination parameters."""
    vector = np.asarray(vector, dtype=np.float64)
    if vector.shape != (cfg.dimension,):
        raise ValueError(f"expected a {cfg.dimension}-dim vector, got shape {vector.shape}")
    rain = RainParams(
        intensity=float(vector[0]),
        density=float(vector[1]),
        length=float(vector[2]),
        width=float(vector[3]),
        direction=float(vector[4]),
        blur_size=nearest_odd(float(vector[5])),
        seed=rain_seed,
        scales=cfg.scales,
    )
    sources = []
    for i in range(cfg.n_sources):
        x, y, strength, radius = vector[6 + 4 * i : 10 + 4 * i]
        sources.append(LightSource(float(x), float(y), float(strength), float(radius)))
    light = IlluminationParams(
        sources=tuple(sources),
        mix=cfg.light_mix,
        gain_ref=cfg.gain_ref,
        gain_threshold=cfg.gain_threshold,
    )
    return rain, light


def stage1_objective(w_p: float, img, rain_img, scorer: Scorer, true_index: int,
                     cfg: Stage1Config, extractor=None) -> float:
    """Margin plus weighted perceptual and mixing-weight terms at one weight."""
    total, _, _ = _stage1_eval(w_p, img, rain_img, scorer, true_index, cfg,
                               extractor or PyramidExtractor())
    return total


def _stage1_eval(w_p, img, rain_img, scorer, true_index, cfg, extractor):
    lo, hi = cfg.bounds
    if not lo <= w_p <= hi:
        raise ValueError(f"mixing weight {w_p} outside bounds {cfg.bounds}")
    mixed = blend(img, rain_img, w_p)
    scores = scorer.score(mixed)
    margin = stage1_margin(scores, true_index)
    perc = perceptual_distance(mixed, img, extractor) if cfg.perceptual_weight > 0.0 else 0.0
    reg = stage1_weight_reg(w_p, cfg.anchor)
    parts = {
        "margin": float(margin),
        "perceptual": float(perc),
        "reg": float(reg),
    }
    total = margin + cfg.perceptual_weight * perc + cfg.reg_weight * reg
    return float(total), parts, scores


@dataclass
class Stage1Report:
    best_weight: float
    best_loss: float
    best_parts: dict
    best_scores: np.ndarray | None
    evaluations: list[tuple[float, float]]
    queries: int
    failed: bool = False
    failure: str | None = None


def run_stage1(img, scorer: Scorer, true_index: int, cfg: Stage1Config,
               extractor=None) -> tuple[float, Stage1Report]:
    """Uniform grid then golden-section refinement of the mixing weight.

    On scorer failure the stage is marked failed and the anchor weight is
    returned as a conservative fallback.
    """
    img = check_image(img)
    extractor = extractor or PyramidExtractor()
    h, w = img.shape[:2]
    rain_img = rain_to_image(render_rain(cfg.rain, h, w))
    lo, hi = cfg.bounds

    evaluated: list[tuple[float, float]] = []
    cache: dict[float, tuple[float, dict, np.ndarray]] = {}

    def evaluate(w_p: float):
        w_p = float(w_p)
        if w_p not in cache:
            cache[w_p] = _stage1_eval(w_p, img, rain_img, scorer, true_index, cfg, extractor)
            evaluated.append((w_p, cache[w_p][0]))
        return cache[w_p][0]

    try:
        grid = np.linspace(lo, hi, cfg.grid_points)
        for w_p in grid:
            evaluate(w_p)
        best_idx = int(np.argmin([cache[float(w_p)][0] for w_p in grid]))
        a = grid[max(best_idx - 1, 0)]
        b = grid[min(best_idx + 1, len(grid) - 1)]

        # Golden-section refinement inside the winning bracket.
        x1 = b - GOLDEN * (b - a)
        x2 = a + GOLDEN * (b - a)
        f1, f2 = evaluate(x1), evaluate(x2)
        while len(evaluated) < cfg.budget and (b - a) > 1e-12:
            if f1 <= f2:
                b, x2, f2 = x2, x1, f1
                x1 = b - GOLDEN * (b - a)
                f1 = evaluate(x1)
            else:
                a, x1, f1 = x1, x2, f2
                x2 = a + GOLDEN * (b - a)
                f2 = evaluate(x2)
    except ScorerError as exc:
        report = Stage1Report(
            best_weight=cfg.anchor, best_loss=math.inf, best_parts={},
            best_scores=None, evaluations=evaluated, queries=len(evaluated),
            failed=True, failure=str(exc),
        )
        return cfg.anchor, report

    best_w = min(cache, key=lambda w_p: cache[w_p][0])
    total, parts, scores = cache[best_w]
    report = Stage1Report(
        best_weight=float(best_w), best_loss=total, best_parts=parts,
        best_scores=scores, evaluations=evaluated, queries=len(evaluated),
    )
    return float(best_w), report


def stage2_compose(img, w_star: float, rain_params: RainParams,
                   light_params: IlluminationParams) -> np.ndarray:
    """Rain blend at the frozen stage-1 weight, then multiplicative gain."""
    img = check_image(img)
    h, w = img.shape[:2]
    rained = blend(img, rain_to_image(render_rain(rain_params, h, w)), w_star)
    return apply_gain(rained, gain_map(light_params, h, w))


@dataclass
class _CandidateEval:
    vector: np.ndarray
    image: np.ndarray | None
    scores: np.ndarray | None
    parts: dict
    phase_a: float
    final: float
    failed: bool = False


def stage2_objective(vector, context: "Stage2Context") -> tuple[float, _CandidateEval]:
    """Phase-A value (hinge + structural + illumination terms) for one candidate.

    The perceptual term is deferred: the returned record is finalized by the
    caller once the generation has been ranked and the top-K chosen.
    """
    cfg = context.config
    rain_params, light_params = decode_candidate(vector, cfg, context.rain_seed)
    adv = stage2_compose(context.image, context.w_star, rain_params, light_params)
    scores = context.scorer.score(adv)
    hinge = stage2_hinge(scores, context.true_index, cfg.margin)
    realism = ssim_loss(adv, context.image, cfg.ssim) if cfg.realism_weight > 0.0 else 0.0
    stats = gain_stats(gain_map(light_params, *context.image.shape[:2]))
    light_term, range_term = illumination_penalties(stats, cfg.gain_ref, cfg.gain_threshold)
    parts = {
        "hinge": float(hinge),
        "ssim": float(realism),
        "light_global": float(light_term),
        "light_range": float(range_term),
        "perceptual": 0.0,
    }
    phase_a = (
        hinge
        + cfg.realism_weight * realism
        + cfg.light_weight * light_term
        + cfg.range_weight * range_term
    )
    record = _CandidateEval(
        vector=np.asarray(vector, dtype=np.float64), image=adv, scores=scores,
        parts=parts, phase_a=float(phase_a), final=float(phase_a),
    )
    return float(phase_a), record


@dataclass
class Stage2Context:
    image: np.ndarray
    w_star: float
    scorer: Scorer
    true_index: int
    config: Stage2Config
    rain_seed: int
    extractor: object


def evaluate_generation(candidates, context: Stage2Context) -> list[_CandidateEval]:
    """Score one population: phase A for all, perceptual for the top-K only.

    Failed candidates are kept but ranked strictly after every evaluated one;
    if every candidate fails the returned records are all failed and the
    caller aborts the stage.
    """
    cfg = context.config
    records: list[_CandidateEval] = []
    for vec in candidates:
        try:
            _, record = stage2_objective(vec, context)
        except ScorerError as exc:
            logger.warning("candidate scoring failed, excluded: %s", exc)
            record = _CandidateEval(
                vector=np.asarray(vec), image=None, scores=None,
                parts={"failure": str(exc)}, phase_a=math.inf,
                final=math.inf, failed=True,
            )
        records.append(record)

    finite = [r.phase_a for r in records if not r.failed]
    if not finite:
        return records
    sentinel = max(finite) + 1.0
    for record in records:
        if record.failed:
            record.phase_a = sentinel
            record.final = sentinel

    order = np.argsort([r.phase_a for r in records], kind="stable")
    for idx in order[: cfg.top_k]:
        record = records[idx]
        if record.failed or cfg.perceptual_weight == 0.0:
            continue
        perc = perceptual_distance(record.image, context.image, context.extractor)
        record.parts["perceptual"] = float(perc)
        record.final = record.phase_a + cfg.perceptual_weight * perc
    return records


@dataclass
class AttackResult:
    """Per-image record of both stage outcomes; serializes deterministically."""

    image_id: str
    true_index: int
    clean_prediction: int
    clean_margin: float
    clean_correct: bool
    stage1: dict
    stage2: dict
    final_prediction: int
    success: bool
    query_count: int
    seed: int
    history: list[dict]
    failed: bool = False
    failure: str | None = None
    wall_time_s: float = 0.0

    def to_dict(self) -> dict:
        # wall_time_s stays out: serialized records must be byte-identical
        # across reruns with the same seed.
        record = dataclasses.asdict(self)
        record.pop("wall_time_s")
        return record

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def _json_safe(value):
    if isinstance(value, np.ndarray):
        return [float(v) for v in value]
    if isinstance(value, (np.floating, float)):
        return float(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def run_attack(img, true_index: int, scorer: Scorer, labels: LabelSet,
               stage1: Stage1Config | None = None,
               stage2: Stage2Config | None = None,
               *, image_id: str = "image", seed: int = 0,
               extractor=None) -> AttackResult:
    """Full two-stage attack on one image; failures are recorded, not raised."""
    img = check_image(img)
    stage1 = stage1 or Stage1Config()
    stage2 = stage2 or Stage2Config()
    extractor = extractor or PyramidExtractor()
    if not 0 <= true_index < len(labels):
        raise ValueError(f"true label index {true_index} out of range")

    started = time.monotonic()
    queries_before = scorer.query_count
    rain_seed = int(np.random.SeedSequence((seed, 0xA11CE)).generate_state(1)[0])
    cma_seed = int(np.random.SeedSequence((seed, 0xBEE5)).generate_state(1)[0])

    def finish(result: AttackResult) -> AttackResult:
        result.query_count = scorer.query_count - queries_before
        result.wall_time_s = time.monotonic() - started
        return result

    try:
        clean_scores = scorer.score(img)
    except ScorerError as exc:
        return finish(AttackResult(
            image_id=image_id, true_index=true_index, clean_prediction=-1,
            clean_margin=math.nan, clean_correct=False, stage1={}, stage2={},
            final_prediction=-1, success=False, query_count=0, seed=seed,
            history=[], failed=True, failure=f"clean scoring failed: {exc}",
        ))
    clean_pred = predict(clean_scores)
    clean_margin = stage1_margin(clean_scores, true_index)

    w_star, s1_report = run_stage1(img, scorer, true_index, stage1, extractor)
    stage1_record = {
        "w_star": float(w_star),
        "loss": _json_safe(s1_report.best_loss),
        "parts": _json_safe(s1_report.best_parts),
        "queries": s1_report.queries,
        "evaluations": _json_safe(s1_report.evaluations),
        "failed": s1_report.failed,
    }
    if s1_report.failed:
        return finish(AttackResult(
            image_id=image_id, true_index=true_index, clean_prediction=clean_pred,
            clean_margin=float(clean_margin), clean_correct=clean_pred == true_index,
            stage1=stage1_record, stage2={}, final_prediction=clean_pred,
            success=clean_pred != true_index, query_count=0, seed=seed,
            history=[], failed=True, failure=s1_report.failure,
        ))

    stage1_hinge = stage2_hinge(s1_report.best_scores, true_index, stage2.margin)
    stage1_record["hinge"] = float(stage1_hinge)

    context = Stage2Context(
        image=img, w_star=w_star, scorer=scorer, true_index=true_index,
        config=stage2, rain_seed=rain_seed, extractor=extractor,
    )

    history: list[dict] = []
    best: _CandidateEval | None = None
    best_flip: _CandidateEval | None = None  # best candidate that changes the label
    flip_candidates = 0
    best_hinge = float(stage1_hinge)
    early_stop = None

    # Generation 0: the stage-1 image may already satisfy the margin.
    if stage2.early_stop and stage1_hinge <= 0.0:
        early_stop = "already_adversarial"
        mixed = blend(img, rain_to_image(render_rain(stage1.rain, *img.shape[:2])), w_star)
        realism = ssim_loss(mixed, img, stage2.ssim)
        parts = {
            "hinge": float(stage1_hinge), "ssim": float(realism),
            "light_global": 0.0, "light_range": 0.0, "perceptual": 0.0,
        }
        value = float(stage1_hinge + stage2.realism_weight * realism)
        best = _CandidateEval(
            vector=np.zeros(0), image=mixed, scores=s1_report.best_scores,
            parts=parts, phase_a=value, final=value,
        )
    else:
        lower, upper = stage2.box()
        es = CmaEs(CmaesConfig(
            lower=lower, upper=upper, population=stage2.population,
            sigma0=stage2.sigma0, max_generations=stage2.generations,
            seed=cma_seed,
        ))
        for _ in range(stage2.generations):
            candidates = es.ask()
            records = evaluate_generation(candidates, context)
            if all(record.failed for record in records):
                logger.warning("%s: every candidate failed, aborting stage 2", image_id)
                early_stop = "scorer_failed"
                break

            es.tell(candidates, [r.final for r in records])

            gen_best = records[int(np.argmin([r.final for r in records]))]
            if best is None or gen_best.final < best.final:
                best = gen_best
            for record in records:
                if record.failed or record.scores is None:
                    continue
                if predict(record.scores) != true_index:
                    flip_candidates += 1
                    if best_flip is None or record.final < best_flip.final:
                        best_flip = record
            best_hinge = min(best_hinge, *(r.parts.get("hinge", math.inf) for r in records))
            history.append({
                "generation": es.generation,
                "best": float(gen_best.final),
                "best_so_far": float(best.final),
                "mean_phase_a": float(np.mean([r.phase_a for r in records])),
                "sigma": float(es.sigma),
                "best_hinge": float(best_hinge),
            })
            if (
                stage2.early_stop
                and gen_best.parts.get("hinge", math.inf) <= 0.0
                and _penalties_below(gen_best.parts, stage2, stage2.penalty_tol)
            ):
                early_stop = "converged"
                break

    # The returned adversarial image is the best label-changing candidate when
    # one was found, otherwise the optimizer's best-by-objective candidate.
    returned = best_flip if best_flip is not None else best
    if returned is None or returned.scores is None:
        final_pred = clean_pred
        stage2_record = {"failed": True, "early_stop": early_stop}
        failed = True
    else:
        final_pred = predict(returned.scores)
        stage2_record = {
            "best_vector": _json_safe(returned.vector),
            "parts": _json_safe(returned.parts),
            "objective": _json_safe(returned.final),
            "optimizer_best_objective": _json_safe(best.final if best else returned.final),
            "best_hinge": float(best_hinge),
            "flip_candidates": flip_candidates,
            "generations": len(history),
            "early_stop": early_stop,
            "w_star": float(w_star),
            "failed": False,
        }
        failed = False

    return finish(AttackResult(
        image_id=image_id, true_index=true_index, clean_prediction=clean_pred,
        clean_margin=float(clean_margin), clean_correct=clean_pred == true_index,
        stage1=stage1_record, stage2=stage2_record,
        final_prediction=final_pred, success=final_pred != true_index,
        query_count=0, seed=seed, history=_json_safe(history),
        failed=failed, failure=None if not failed else "stage 2 produced no candidate",
    ))


def _penalties_below(parts: dict, cfg: Stage2Config, tol: float) -> bool:
    weighted = (
        cfg.realism_weight * parts.get("ssim", 0.0),
        cfg.light_weight * parts.get("light_global", 0.0),
        cfg.range_weight * parts.get("light_range", 0.0),
        cfg.perceptual_weight * parts.get("perceptual", 0.0),
    )
    return all(term < tol for term in weighted)


def adversarial_image(img, result: AttackResult, stage1: Stage1Config,
                      stage2: Stage2Config) -> np.ndarray:
    """Recompose the final adversarial image from a serialized result."""
    img = check_image(img)
    if result.stage2.get("failed", True):
        w_star = result.stage1.get("w_star")
        if w_star is None:
            return img.copy()
        h, w = img.shape[:2]
        return blend(img, rain_to_image(render_rain(stage1.rain, h, w)), w_star)
    vector = np.asarray(result.stage2["best_vector"], dtype=np.float64)
    if vector.size == 0:
        h, w = img.shape[:2]
        return blend(img, rain_to_image(render_rain(stage1.rain, h, w)),
                     result.stage1["w_star"])
    rain_seed = int(np.random.SeedSequence((result.seed, 0xA11CE)).generate_state(1)[0])
    rain_params, light_params = decode_candidate(vector, stage2, rain_seed)
    return stage2_compose(img, result.stage1["w_star"], rain_params, light_params)
