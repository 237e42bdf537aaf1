import json

import numpy as np
import pytest

from stormforge.attack import (
    Stage1Config,
    Stage2Config,
    Stage2Context,
    adversarial_image,
    decode_candidate,
    nearest_odd,
    run_attack,
    run_stage1,
    stage1_objective,
    stage2_compose,
    stage2_objective,
)
from stormforge.illumination import IlluminationParams, LightSource, gain_map
from stormforge.image import apply_gain, blend
from stormforge.metrics import PyramidExtractor, stage1_margin
from stormforge.rain import RainParams, rain_to_image, render_rain
from stormforge.scorer import LabelSet, ScorerTransportError, ToyScorer


class StubScorer:
    """Scores derived from the mean intensity of the submitted image.

    With an all-ones base image and an all-black rain layer, the blend
    weight w satisfies w = 1 - mean, which lets tests shape the stage-1
    objective into any function of w.
    """

    def __init__(self, fn, n_labels=2):
        self.fn = fn
        self.n_labels = n_labels
        self.labels = LabelSet.from_labels([f"l{i}" for i in range(n_labels)])
        self._count = 0

    def score(self, img):
        self._count += 1
        return np.asarray(self.fn(float(img.mean())), dtype=np.float64)

    @property
    def query_count(self):
        return self._count


class FailingScorer:
    labels = LabelSet.from_labels(["a", "b"])

    def __init__(self):
        self._count = 0

    def score(self, img):
        raise ScorerTransportError("down")

    @property
    def query_count(self):
        return self._count


def black_rain_config(**kwargs):
    # Density 0 renders an all-black rain layer.
    rain = RainParams(intensity=0.0, density=0.0, seed=0)
    return Stage1Config(rain=rain, **kwargs)


def test_nearest_odd():
    assert nearest_odd(1.0) == 1
    assert nearest_odd(2.2) == 3
    assert nearest_odd(4.9) == 5
    assert nearest_odd(0.2) == 1
    assert nearest_odd(8.7) == 9


def test_decode_candidate_roundtrip():
    cfg = Stage2Config()
    lower, upper = cfg.box()
    assert lower.shape == (18,)
    vec = (lower + upper) / 2.0
    rain, light = decode_candidate(vec, cfg, rain_seed=5)
    assert rain.seed == 5
    assert rain.scales == cfg.scales
    assert len(light.sources) == 3
    assert light.mix == cfg.light_mix
    with pytest.raises(ValueError):
        decode_candidate(vec[:-1], cfg, rain_seed=5)


def test_stage1_objective_identity_blend():
    # w = 0 leaves the image untouched: margin is the clean margin, the
    # perceptual term vanishes, and only the anchor penalty remains.
    img = np.full((16, 16, 3), 0.8)
    cfg = black_rain_config(bounds=(0.0, 0.7), anchor=0.02,
                            perceptual_weight=1.0, reg_weight=0.5)
    scorer = StubScorer(lambda mean: [mean, 0.1])
    rain_img = np.zeros((16, 16, 3))
    value = stage1_objective(0.0, img, rain_img, scorer, 0, cfg)
    clean_margin = 0.8 - 0.1
    assert value == pytest.approx(clean_margin + 0.5 * 0.02**2, abs=1e-12)


def test_stage1_objective_weight_zeroing():
    img = np.full((16, 16, 3), 0.6)
    cfg = black_rain_config(bounds=(0.0, 0.7), perceptual_weight=0.0, reg_weight=0.0)
    scorer = StubScorer(lambda mean: [mean, 0.25])
    rain_img = np.zeros((16, 16, 3))
    value = stage1_objective(0.3, img, rain_img, scorer, 0, cfg)
    mixed_mean = 0.6 * 0.7
    assert value == pytest.approx(mixed_mean - 0.25, abs=1e-12)


def test_run_stage1_finds_quadratic_minimum():
    # Objective reduces to (w - 0.3)^2 through the stub.
    img = np.ones((16, 16, 3))
    cfg = black_rain_config(perceptual_weight=0.0, reg_weight=0.0, budget=40)
    scorer = StubScorer(lambda mean: [((1.0 - mean) - 0.3) ** 2, 0.0])
    w_star, report = run_stage1(img, scorer, 0, cfg)
    assert abs(w_star - 0.3) < 1e-3
    assert not report.failed
    assert report.queries <= 40


def test_run_stage1_monotone_objective_hits_upper_bound():
    img = np.ones((16, 16, 3))
    cfg = black_rain_config(perceptual_weight=0.0, reg_weight=0.0, budget=24)
    scorer = StubScorer(lambda mean: [mean, 0.0])  # decreasing in w
    w_star, report = run_stage1(img, scorer, 0, cfg)
    assert w_star == pytest.approx(0.7, abs=1e-9)


def test_run_stage1_result_within_bounds(rng):
    img = rng.random((16, 16, 3))
    cfg = black_rain_config(budget=16)
    scorer = StubScorer(lambda mean: [np.sin(37 * mean), np.cos(11 * mean)])
    w_star, _ = run_stage1(img, scorer, 0, cfg)
    assert 0.02 <= w_star <= 0.7


def test_stage1_heavier_rain_beats_light_rain_on_fixture_image_one():
    # Pinned fixture property: for bundled image #1 the margin drop from a
    # heavy mix outweighs the anchor penalty, so the objective decreases.
    from stormforge.fixtures import build_synthetic_dataset

    dataset = build_synthetic_dataset()
    scorer = ToyScorer(dataset.labels, seed=dataset.scorer_seed)
    cfg = Stage1Config()
    img, y = dataset.images[1], dataset.true_indices[1]
    rain_img = rain_to_image(render_rain(cfg.rain, *img.shape[:2]))
    heavy = stage1_objective(0.7, img, rain_img, scorer, y, cfg)
    light = stage1_objective(0.02, img, rain_img, scorer, y, cfg)
    assert heavy < light


def test_run_stage1_scorer_failure_falls_back_to_anchor():
    img = np.ones((16, 16, 3))
    cfg = black_rain_config(anchor=0.02)
    w_star, report = run_stage1(img, FailingScorer(), 0, cfg)
    assert w_star == 0.02
    assert report.failed


def test_stage2_compose_matches_manual_composition(rng):
    img = rng.random((32, 32, 3))
    rain = RainParams(intensity=0.0, density=500.0, seed=3)
    light = IlluminationParams(
        sources=(LightSource(0.5, 0.5, 0.0, 0.3),), mix=0.5,
    )
    # Zero-intensity rain renders black; zero-strength light gives G = 0.5.
    out = stage2_compose(img, 0.4, rain, light)
    manual = apply_gain(
        blend(img, rain_to_image(render_rain(rain, 32, 32)), 0.4),
        gain_map(light, 32, 32),
    )
    assert np.array_equal(out, manual)
    assert np.allclose(out, 0.6 * img * 0.5, atol=1e-12)


def test_stage2_compose_double_identity(rng):
    img = rng.random((16, 16, 3))
    rain = RainParams(intensity=0.5, density=800.0, seed=1)
    light = IlluminationParams(sources=(LightSource(0.5, 0.5, 1.0, 0.3),), mix=0.0)
    out = stage2_compose(img, 0.0, rain, light)
    assert np.array_equal(out, img)


def test_stage2_compose_deterministic(rng):
    img = rng.random((16, 16, 3))
    rain = RainParams(intensity=0.7, density=1200.0, seed=9)
    light = IlluminationParams(sources=(LightSource(0.3, 0.4, 1.1, 0.2),), mix=0.5)
    assert np.array_equal(
        stage2_compose(img, 0.3, rain, light), stage2_compose(img, 0.3, rain, light)
    )


def make_context(img, scorer, cfg, w_star=0.2):
    return Stage2Context(
        image=img, w_star=w_star, scorer=scorer, true_index=0,
        config=cfg, rain_seed=7, extractor=PyramidExtractor(),
    )


def test_stage2_objective_floor_case(rng):
    # Wrong label ahead by more than the margin, identity gain, zero rain
    # blend: every term sits at its floor.
    img = rng.random((16, 16, 3))
    cfg = Stage2Config(light_mix=0.0)
    scorer = StubScorer(lambda mean: [0.1, 0.9])
    context = make_context(img, scorer, cfg, w_star=0.0)
    vec = np.concatenate([[0.0, 0.0, 1.0, 0.5, 0.0, 1.0], np.tile([0.5, 0.5, 0.0, 0.3], 3)])
    value, record = stage2_objective(vec, context)
    assert value == 0.0
    assert record.parts["hinge"] == 0.0
    assert record.parts["ssim"] == pytest.approx(0.0, abs=1e-12)
    assert record.parts["light_global"] == 0.0
    assert record.parts["light_range"] == 0.0


def test_stage2_objective_perceptual_weight_zero_keeps_phase_a_ranking(rng):
    img = np.clip(rng.random((16, 16, 3)), 0.0, 1.0)
    cfg = Stage2Config(perceptual_weight=0.0, population=4, top_k=2)
    scorer = ToyScorer(LabelSet.from_labels(["a", "b"]), seed=0)
    context = make_context(img, scorer, cfg)
    lower, upper = cfg.box()
    gen = np.random.default_rng(5)
    for _ in range(4):
        vec = gen.uniform(lower, upper)
        value, record = stage2_objective(vec, context)
        assert record.final == record.phase_a == value


def test_top_k_equal_to_population_matches_full_perceptual(rng):
    # One generation evaluated with K = population must equal charging the
    # perceptual term to every candidate, with no gating at all.
    from stormforge.attack import evaluate_generation
    from stormforge.metrics import perceptual_distance

    img = np.clip(rng.random((16, 16, 3)), 0.0, 1.0)
    cfg = Stage2Config(population=4, top_k=4)
    lower, upper = cfg.box()
    gen = np.random.default_rng(8)
    vectors = [gen.uniform(lower, upper) for _ in range(4)]

    scorer = ToyScorer(LabelSet.from_labels(["a", "b"]), seed=3)
    records = evaluate_generation(vectors, make_context(img, scorer, cfg))

    extractor = PyramidExtractor()
    manual = []
    for vec in vectors:
        value, record = stage2_objective(
            vec, make_context(img, ToyScorer(LabelSet.from_labels(["a", "b"]), seed=3), cfg)
        )
        manual.append(
            value + cfg.perceptual_weight * perceptual_distance(record.image, img, extractor)
        )
    assert np.allclose([r.final for r in records], manual, atol=0.0)
    assert all(r.parts["perceptual"] > 0.0 for r in records)


def test_top_k_gating_charges_only_k_candidates(rng):
    from stormforge.attack import evaluate_generation

    img = np.clip(rng.random((16, 16, 3)), 0.0, 1.0)
    cfg = Stage2Config(population=6, top_k=2)
    lower, upper = cfg.box()
    gen = np.random.default_rng(4)
    vectors = [gen.uniform(lower, upper) for _ in range(6)]
    scorer = ToyScorer(LabelSet.from_labels(["a", "b"]), seed=3)
    records = evaluate_generation(vectors, make_context(img, scorer, cfg))

    charged = [r for r in records if r.parts["perceptual"] > 0.0]
    uncharged = [r for r in records if r.parts["perceptual"] == 0.0]
    assert len(charged) == 2
    # The charged pair is exactly the phase-A top-2.
    threshold = sorted(r.phase_a for r in records)[1]
    assert all(r.phase_a <= threshold for r in charged)
    assert all(r.final == r.phase_a for r in uncharged)


# --- run_attack end to end ----------------------------------------------------


def small_stage2(**kwargs):
    defaults = dict(population=6, generations=4, top_k=2)
    defaults.update(kwargs)
    return Stage2Config(**defaults)


def test_run_attack_records_and_accounts_queries(rng):
    labels = LabelSet.from_labels(["a", "b", "c"])
    scorer = ToyScorer(labels, seed=0)
    img = np.clip(rng.random((16, 16, 3)), 0.0, 1.0)
    s1 = black_rain_config(budget=12)
    s2 = small_stage2(early_stop=False)
    before = scorer.query_count
    result = run_attack(img, 0, scorer, labels, stage1=s1, stage2=s2,
                        image_id="t0", seed=3)
    delta = scorer.query_count - before
    assert result.query_count == delta
    assert delta == 1 + result.stage1["queries"] + s2.population * result.stage2["generations"]
    assert result.stage2["w_star"] == result.stage1["w_star"]
    assert result.success == (result.final_prediction != 0)


def test_run_attack_already_adversarial_stops_at_generation_zero(rng):
    labels = LabelSet.from_labels(["a", "b", "c"])
    scorer = ToyScorer(labels, seed=0)
    img = np.clip(rng.random((16, 16, 3)), 0.0, 1.0)
    clean_pred = int(np.argmax(scorer.score(img)))
    wrong = (clean_pred + 1) % 3  # attack an image that is already misclassified
    s2 = small_stage2(margin=0.0)
    result = run_attack(img, wrong, scorer, labels, stage1=black_rain_config(budget=10),
                        stage2=s2, image_id="t1", seed=5)
    assert result.clean_margin < 0.0
    assert result.stage2["early_stop"] == "already_adversarial"
    assert result.stage2["generations"] == 0
    assert result.success


def test_run_attack_best_so_far_monotone(rng):
    labels = LabelSet.from_labels(["a", "b", "c"])
    scorer = ToyScorer(labels, seed=0)
    img = np.clip(rng.random((16, 16, 3)), 0.0, 1.0)
    result = run_attack(img, 0, scorer, labels, stage1=black_rain_config(budget=10),
                        stage2=small_stage2(generations=8, early_stop=False),
                        image_id="mono", seed=2)
    trail = [h["best_so_far"] for h in result.history]
    assert trail == sorted(trail, reverse=True)


def test_run_attack_deterministic_json(rng):
    labels = LabelSet.from_labels(["a", "b", "c"])
    img = np.clip(rng.random((16, 16, 3)), 0.0, 1.0)
    s1 = black_rain_config(budget=11)
    s2 = small_stage2()

    def once():
        scorer = ToyScorer(labels, seed=0)
        return run_attack(img, 0, scorer, labels, stage1=s1, stage2=s2,
                          image_id="t2", seed=9).to_json()

    assert once() == once()


def test_run_attack_scorer_failure_is_recorded_not_raised():
    result = run_attack(np.full((16, 16, 3), 0.5), 0, FailingScorer(),
                        LabelSet.from_labels(["a", "b"]),
                        stage1=black_rain_config(), stage2=small_stage2(),
                        image_id="t3", seed=0)
    assert result.failed
    assert "clean scoring failed" in result.failure
    assert result.query_count == 0


def test_run_attack_wall_time_not_serialized(rng):
    labels = LabelSet.from_labels(["a", "b"])
    scorer = ToyScorer(labels, seed=0)
    img = np.clip(rng.random((16, 16, 3)), 0.0, 1.0)
    result = run_attack(img, 0, scorer, labels, stage1=black_rain_config(budget=10),
                        stage2=small_stage2(generations=1), image_id="t4", seed=0)
    assert result.wall_time_s > 0.0
    assert "wall_time_s" not in json.loads(result.to_json())


def test_adversarial_image_recomposition_matches_seed(rng):
    labels = LabelSet.from_labels(["a", "b", "c"])
    img = np.clip(rng.random((16, 16, 3)), 0.0, 1.0)
    s1 = black_rain_config(budget=10)
    s2 = small_stage2(early_stop=False)
    scorer = ToyScorer(labels, seed=0)
    result = run_attack(img, 0, scorer, labels, stage1=s1, stage2=s2,
                        image_id="t5", seed=21)
    adv_a = adversarial_image(img, result, s1, s2)
    adv_b = adversarial_image(img, result, s1, s2)
    assert np.array_equal(adv_a, adv_b)
    assert adv_a.shape == img.shape


def test_run_attack_over_live_remote_scorer(stub_scorer_server, rng):
    # Full attack loop over HTTP: the stub's fixed [0.1, 0.2] vector makes
    # label 0 permanently misclassified, so the attack short-circuits.
    from stormforge.scorer import RemoteScorer

    labels = LabelSet.from_labels(["a", "b"])
    scorer = RemoteScorer(stub_scorer_server.endpoint, labels, backoff=0.01)
    img = np.clip(rng.random((16, 16, 3)), 0.0, 1.0)
    result = run_attack(img, 0, scorer, labels, stage1=black_rain_config(budget=10),
                        stage2=small_stage2(), image_id="remote", seed=1)
    assert result.success
    assert result.stage2["early_stop"] == "already_adversarial"
    assert result.query_count == scorer.query_count
    assert result.query_count == 1 + result.stage1["queries"]


def test_ablation_toggles_change_only_their_path(rng):
    img = np.clip(rng.random((32, 32, 3)), 0.0, 1.0)
    rain = RainParams(intensity=0.8, density=1500.0, seed=4, scales=(1.0, 0.5, 0.25))
    single_scale = rain.replace(scales=(1.0,))
    light = IlluminationParams(sources=(LightSource(0.4, 0.4, 1.5, 0.3),), mix=0.5)
    no_light = light.replace(mix=0.0)

    # Disabling illumination: output equals the pure rain blend.
    with_light = stage2_compose(img, 0.3, rain, light)
    without_light = stage2_compose(img, 0.3, rain, no_light)
    rain_only = blend(img, rain_to_image(render_rain(rain, 32, 32)), 0.3)
    assert np.array_equal(without_light, rain_only)
    assert not np.array_equal(with_light, without_light)

    # Disabling multi-scale: composition uses exactly the base-scale layer.
    single = stage2_compose(img, 0.3, single_scale, no_light)
    manual = blend(img, rain_to_image(np.clip(
        render_rain(single_scale, 32, 32), 0.0, 1.0)), 0.3)
    assert np.array_equal(single, manual)
