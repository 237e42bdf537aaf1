"""Run configuration: JSON parsing, field-precise validation, snapshots.

A run config fully determines a dataset attack: dataset location, scorer
choice, both stage configurations, worker count, output directory, and the
global seed. The resolved snapshot written next to the results is sufficient
to reproduce a toy run bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .attack import Stage1Config, Stage2Config
from .metrics import SsimConstants
from .rain import RainParams

SEED_ENV_VAR = "STORMFORGE_SEED"


class ConfigError(Exception):
    """A run configuration failed validation; message names the field."""


@dataclass
class ScorerChoice:
    kind: str = "toy"
    seed: int = 0
    endpoint: str | None = None
    prompt_template: str = "a photo of a {}"

    def to_dict(self) -> dict:
        return {
            "type": self.kind,
            "seed": self.seed,
            "endpoint": self.endpoint,
            "prompt_template": self.prompt_template,
        }


@dataclass
class RunConfig:
    dataset: Path
    output: Path
    labels_file: Path
    scorer: ScorerChoice = field(default_factory=ScorerChoice)
    stage1: Stage1Config = field(default_factory=Stage1Config)
    stage2: Stage2Config = field(default_factory=Stage2Config)
    workers: int = 1
    seed: int = 0

    def job_seed(self, image_id: str) -> int:
        digest = hashlib.sha256(f"{self.seed}:{image_id}".encode()).digest()
        return int.from_bytes(digest[:8], "big")


def _require(mapping: dict, key: str, kind, where: str):
    if key not in mapping:
        raise ConfigError(f"{where}: missing required field {key!r}")
    value = mapping[key]
    if not isinstance(value, kind):
        raise ConfigError(
            f"{where}.{key}: expected {getattr(kind, '__name__', kind)}, got {type(value).__name__}"
        )
    return value


def _take(mapping: dict, where: str, converters: dict) -> dict:
    unknown = set(mapping) - set(converters)
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {sorted(unknown)!r}")
    out = {}
    for key, value in mapping.items():
        try:
            out[key] = converters[key](value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}.{key}: {exc}") from exc
    return out


def _rain_params(raw: dict, where: str) -> RainParams:
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected an object")
    fields = {
        "intensity": float, "density": float, "length": float, "width": float,
        "direction": float, "blur_size": int, "seed": int,
        "scales": lambda v: tuple(float(s) for s in v),
    }
    try:
        return RainParams(**_take(raw, where, fields))
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _bounds_pair(value) -> tuple[float, float]:
    lo, hi = value
    return (float(lo), float(hi))


def _bounds_map(raw, where: str) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected an object of [lo, hi] pairs")
    return {key: _bounds_pair(value) for key, value in raw.items()}


def _stage1(raw: dict, where: str) -> Stage1Config:
    fields = {
        "bounds": _bounds_pair,
        "perceptual_weight": float,
        "reg_weight": float,
        "anchor": float,
        "budget": int,
        "grid_points": int,
        "rain": lambda v: _rain_params(v, f"{where}.rain"),
    }
    try:
        return Stage1Config(**_take(raw, where, fields))
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _stage2(raw: dict, where: str) -> Stage2Config:
    fields = {
        "margin": float,
        "perceptual_weight": float,
        "realism_weight": float,
        "light_weight": float,
        "range_weight": float,
        "top_k": int,
        "n_sources": int,
        "light_mix": float,
        "gain_ref": float,
        "gain_threshold": float,
        "scales": lambda v: tuple(float(s) for s in v),
        "rain_bounds": lambda v: _bounds_map(v, f"{where}.rain_bounds"),
        "light_bounds": lambda v: _bounds_map(v, f"{where}.light_bounds"),
        "population": int,
        "generations": int,
        "sigma0": lambda v: None if v is None else float(v),
        "early_stop": bool,
        "penalty_tol": float,
        "ssim": lambda v: SsimConstants(
            c1=float(v.get("c1", 1e-4)), c2=float(v.get("c2", 9e-4)),
            window=int(v.get("window", 7)),
        ),
    }
    try:
        return Stage2Config(**_take(raw, where, fields))
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _scorer(raw: dict, where: str) -> ScorerChoice:
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected an object")
    kind = raw.get("type", "toy")
    if kind not in ("toy", "remote"):
        raise ConfigError(f"{where}.type: must be 'toy' or 'remote', got {kind!r}")
    choice = ScorerChoice(kind=kind)
    if "seed" in raw:
        choice.seed = int(raw["seed"])
    if "prompt_template" in raw:
        choice.prompt_template = str(raw["prompt_template"])
    if kind == "remote":
        choice.endpoint = _require(raw, "endpoint", str, where)
    unknown = set(raw) - {"type", "seed", "endpoint", "prompt_template"}
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {sorted(unknown)!r}")
    return choice


def load_run_config(path, overrides: dict | None = None) -> RunConfig:
    """Parse and validate a run config file; overrides beat file fields.

    The ``STORMFORGE_SEED`` environment variable beats both.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    overrides = overrides or {}

    dataset = Path(overrides.get("dataset") or _require(raw, "dataset", str, "config"))
    if not dataset.is_absolute():
        dataset = (path.parent / dataset).resolve()
    if not dataset.is_dir():
        raise ConfigError(f"config.dataset: directory {dataset} does not exist")

    output = Path(overrides.get("output") or _require(raw, "output", str, "config"))
    if not output.is_absolute():
        output = (path.parent / output).resolve()

    labels_raw = raw.get("labels_file")
    labels_file = Path(labels_raw) if labels_raw else dataset / "labels.json"
    if not labels_file.is_absolute():
        labels_file = (path.parent / labels_file).resolve()
    if not labels_file.is_file():
        raise ConfigError(f"config.labels_file: file {labels_file} does not exist")

    config = RunConfig(
        dataset=dataset,
        output=output,
        labels_file=labels_file,
        scorer=_scorer(raw.get("scorer", {}), "config.scorer"),
        stage1=_stage1(raw.get("stage1", {}), "config.stage1"),
        stage2=_stage2(raw.get("stage2", {}), "config.stage2"),
        workers=int(raw.get("workers", 1)),
        seed=int(raw.get("seed", 0)),
    )
    if config.workers < 1:
        raise ConfigError("config.workers: must be >= 1")
    if "workers" in overrides:
        config.workers = int(overrides["workers"])
    if "seed" in overrides:
        config.seed = int(overrides["seed"])
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            config.seed = int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {env_seed!r}") from exc
    return config


def snapshot(config: RunConfig) -> dict:
    """Fully resolved config as a JSON-compatible dict."""
    s1, s2 = config.stage1, config.stage2
    return {
        "dataset": str(config.dataset),
        "output": str(config.output),
        "labels_file": str(config.labels_file),
        "scorer": config.scorer.to_dict(),
        "stage1": {
            "bounds": list(s1.bounds),
            "perceptual_weight": s1.perceptual_weight,
            "reg_weight": s1.reg_weight,
            "anchor": s1.anchor,
            "budget": s1.budget,
            "grid_points": s1.grid_points,
            "rain": {
                "intensity": s1.rain.intensity,
                "density": s1.rain.density,
                "length": s1.rain.length,
                "width": s1.rain.width,
                "direction": s1.rain.direction,
                "blur_size": s1.rain.blur_size,
                "seed": s1.rain.seed,
                "scales": list(s1.rain.scales),
            },
        },
        "stage2": {
            "margin": s2.margin,
            "perceptual_weight": s2.perceptual_weight,
            "realism_weight": s2.realism_weight,
            "light_weight": s2.light_weight,
            "range_weight": s2.range_weight,
            "top_k": s2.top_k,
            "n_sources": s2.n_sources,
            "light_mix": s2.light_mix,
            "gain_ref": s2.gain_ref,
            "gain_threshold": s2.gain_threshold,
            "scales": list(s2.scales),
            "rain_bounds": {k: list(v) for k, v in s2.rain_bounds.items()},
            "light_bounds": {k: list(v) for k, v in s2.light_bounds.items()},
            "population": s2.population,
            "generations": s2.generations,
            "sigma0": s2.sigma0,
            "early_stop": s2.early_stop,
            "penalty_tol": s2.penalty_tol,
            "ssim": {"c1": s2.ssim.c1, "c2": s2.ssim.c2, "window": s2.ssim.window},
        },
        "workers": config.workers,
        "seed": config.seed,
    }
