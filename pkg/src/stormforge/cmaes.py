"""Covariance matrix adaptation evolution strategy for bounded black-box
minimization.

The strategy itself runs in an unconstrained internal space; candidates are
mapped into the configured box through a smooth logistic transform, so every
sample handed to the objective lies strictly inside its bounds and no penalty
term ever distorts the rank signal. Selection is purely rank-based: applying
any strictly increasing function to the objective values leaves the state
update bit-identical. All sampling is driven by one seeded generator, making
runs fully reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

EIGENVALUE_FLOOR = 1e-14
_LOGIT_EPS = 1e-12


class InvalidObjectiveError(Exception):
    """An objective value handed to ``tell`` was NaN or infinite."""


@dataclass
class CmaesConfig:
    """Search box, population sizing, and stopping controls.

    ``sigma0`` is the initial step size in external units; it defaults to
    0.3 of the mean box width. ``x0`` defaults to the box center.
    """

    lower: np.ndarray
    upper: np.ndarray
    population: int = 15
    parents: int | None = None
    sigma0: float | None = None
    x0: np.ndarray | None = None
    max_generations: int = 60
    target_value: float | None = None
    seed: int = 0

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=np.float64)
        self.upper = np.asarray(self.upper, dtype=np.float64)
        if self.lower.ndim != 1 or self.lower.shape != self.upper.shape:
            raise ValueError("lower and upper must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
            raise ValueError("bounds must be finite")
        if not np.all(self.lower < self.upper):
            raise ValueError("need lower < upper in every dimension")
        if self.population < 4:
            raise ValueError(f"population must be >= 4, got {self.population}")
        if self.parents is None:
            self.parents = self.population // 2
        if not 1 <= self.parents <= self.population // 2:
            raise ValueError(
                f"parents must lie in [1, population/2], got {self.parents}"
            )
        if self.sigma0 is not None and self.sigma0 <= 0.0:
            raise ValueError("sigma0 must be positive")
        if self.x0 is not None:
            self.x0 = np.asarray(self.x0, dtype=np.float64)
            if self.x0.shape != self.lower.shape:
                raise ValueError("x0 dimension does not match bounds")
            if not np.all((self.x0 > self.lower) & (self.x0 < self.upper)):
                raise ValueError("x0 must lie strictly inside the box")
        if self.max_generations < 1:
            raise ValueError("max_generations must be >= 1")

    @property
    def dimension(self) -> int:
        return self.lower.size


@dataclass
class CmaesResult:
    x: np.ndarray
    value: float
    evaluations: int
    generations: int
    stop_reason: str
    history: list[dict]
    events: list[str]
    strategy: dict


class CmaEs:
    """ask/tell optimizer; one ``ask`` must be answered by one ``tell``."""

    def __init__(self, config: CmaesConfig):
        self.config = config
        n = config.dimension
        lam = config.population
        mu = config.parents

        raw = np.log((lam + 1) / 2.0) - np.log(np.arange(1, mu + 1))
        self.weights = raw / raw.sum()
        self.mu_eff = 1.0 / np.sum(self.weights**2)

        self.c_sigma = (self.mu_eff + 2.0) / (n + self.mu_eff + 5.0)
        self.d_sigma = (
            1.0
            + 2.0 * max(0.0, np.sqrt((self.mu_eff - 1.0) / (n + 1.0)) - 1.0)
            + self.c_sigma
        )
        self.c_c = (4.0 + self.mu_eff / n) / (n + 4.0 + 2.0 * self.mu_eff / n)
        self.c_1 = 2.0 / ((n + 1.3) ** 2 + self.mu_eff)
        self.c_mu = min(
            1.0 - self.c_1,
            2.0 * (self.mu_eff - 2.0 + 1.0 / self.mu_eff) / ((n + 2.0) ** 2 + self.mu_eff),
        )
        self.chi_n = np.sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n**2))

        x0 = config.x0 if config.x0 is not None else 0.5 * (config.lower + config.upper)
        self.mean = self._from_box(x0)
        width = config.upper - config.lower
        sigma0 = config.sigma0 if config.sigma0 is not None else 0.3 * float(width.mean())
        p0 = (x0 - config.lower) / width
        slope = float(np.mean(width * p0 * (1.0 - p0)))
        self.sigma = sigma0 / slope

        self.cov = np.eye(n)
        self.p_sigma = np.zeros(n)
        self.p_c = np.zeros(n)
        self.generation = 0
        self.best_point: np.ndarray | None = None
        self.best_value = np.inf
        self.events: list[str] = []
        self._rng = np.random.default_rng(config.seed)
        self._pending: tuple[np.ndarray, np.ndarray] | None = None  # (internal, external)
        self._basis = np.eye(n)
        self._scale = np.ones(n)

    # --- box transform ---------------------------------------------------

    def _to_box(self, t: np.ndarray) -> np.ndarray:
        cfg = self.config
        return cfg.lower + (cfg.upper - cfg.lower) * expit(t)

    def _from_box(self, x: np.ndarray) -> np.ndarray:
        cfg = self.config
        p = np.clip((x - cfg.lower) / (cfg.upper - cfg.lower), _LOGIT_EPS, 1.0 - _LOGIT_EPS)
        return np.log(p / (1.0 - p))

    # --- ask / tell --------------------------------------------------------

    def _decompose(self) -> None:
        cov = 0.5 * (self.cov + self.cov.T)
        if not np.all(np.isfinite(cov)):
            self.events.append(f"gen {self.generation}: non-finite covariance, reset to identity")
            cov = np.eye(self.config.dimension)
            self.cov = cov.copy()
        try:
            eigenvalues, basis = np.linalg.eigh(cov)
        except np.linalg.LinAlgError:
            self.events.append(f"gen {self.generation}: eigendecomposition failed, reset to identity")
            self.cov = np.eye(self.config.dimension)
            eigenvalues, basis = np.linalg.eigh(self.cov)
        if eigenvalues.min() < EIGENVALUE_FLOOR:
            self.events.append(
                f"gen {self.generation}: eigenvalue floored at {EIGENVALUE_FLOOR}"
            )
            eigenvalues = np.maximum(eigenvalues, EIGENVALUE_FLOOR)
        self._basis = basis
        self._scale = np.sqrt(eigenvalues)

    def ask(self) -> list[np.ndarray]:
        """Sample one population of candidates, mapped into the box."""
        if self._pending is not None:
            raise RuntimeError("ask called twice without an intervening tell")
        self._decompose()
        lam = self.config.population
        z = self._rng.standard_normal((lam, self.config.dimension))
        steps = (z * self._scale) @ self._basis.T
        internal = self.mean + self.sigma * steps
        external = self._to_box(internal)
        self._pending = (internal, external)
        return [external[i].copy() for i in range(lam)]

    def tell(self, candidates, values) -> None:
        """Rank-based distribution update from one evaluated population."""
        if self._pending is None:
            raise RuntimeError("tell called without a pending ask")
        internal, external = self._pending
        lam = self.config.population
        if len(candidates) != lam or len(values) != lam:
            raise ValueError(f"expected {lam} candidates and values")
        for i, cand in enumerate(candidates):
            if not np.array_equal(np.asarray(cand, dtype=np.float64), external[i]):
                raise ValueError(f"candidate {i} does not match the pending ask")
        values = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(values)):
            raise InvalidObjectiveError("objective values must be finite")
        self._pending = None

        n = self.config.dimension
        mu = self.config.parents
        order = np.argsort(values, kind="stable")
        selected = internal[order[:mu]]

        old_mean = self.mean
        self.mean = self.weights @ selected
        shift = (self.mean - old_mean) / self.sigma

        inv_sqrt_shift = self._basis @ ((self._basis.T @ shift) / self._scale)
        self.p_sigma = (1.0 - self.c_sigma) * self.p_sigma + np.sqrt(
            self.c_sigma * (2.0 - self.c_sigma) * self.mu_eff
        ) * inv_sqrt_shift

        norm_ps = float(np.linalg.norm(self.p_sigma))
        expected = np.sqrt(
            1.0 - (1.0 - self.c_sigma) ** (2.0 * (self.generation + 1))
        )
        h_sigma = 1.0 if norm_ps / expected < (1.4 + 2.0 / (n + 1.0)) * self.chi_n else 0.0

        self.p_c = (1.0 - self.c_c) * self.p_c + h_sigma * np.sqrt(
            self.c_c * (2.0 - self.c_c) * self.mu_eff
        ) * shift

        deviations = (selected - old_mean) / self.sigma
        rank_mu = deviations.T @ (deviations * self.weights[:, None])
        rank_one = np.outer(self.p_c, self.p_c)
        correction = (1.0 - h_sigma) * self.c_c * (2.0 - self.c_c) * self.cov
        self.cov = (
            (1.0 - self.c_1 - self.c_mu) * self.cov
            + self.c_1 * (rank_one + correction)
            + self.c_mu * rank_mu
        )
        self.cov = 0.5 * (self.cov + self.cov.T)

        self.sigma *= float(
            np.exp((self.c_sigma / self.d_sigma) * (norm_ps / self.chi_n - 1.0))
        )

        best_idx = int(order[0])
        if values[best_idx] < self.best_value:
            self.best_value = float(values[best_idx])
            self.best_point = external[best_idx].copy()
        self.generation += 1

    @property
    def strategy(self) -> dict:
        """Read-only strategy constants, for run metadata."""
        return {
            "population": self.config.population,
            "parents": self.config.parents,
            "mu_eff": float(self.mu_eff),
            "c_sigma": float(self.c_sigma),
            "d_sigma": float(self.d_sigma),
            "c_c": float(self.c_c),
            "c_1": float(self.c_1),
            "c_mu": float(self.c_mu),
            "weights": [float(w) for w in self.weights],
        }


def minimize(objective, config: CmaesConfig) -> CmaesResult:
    """Run ask/tell until the generation budget or target value is hit."""
    es = CmaEs(config)
    history: list[dict] = []
    evaluations = 0
    stop_reason = "max_generations"
    for _ in range(config.max_generations):
        candidates = es.ask()
        values = [float(objective(x)) for x in candidates]
        es.tell(candidates, values)
        evaluations += len(candidates)
        history.append(
            {
                "generation": es.generation,
                "best": float(np.min(values)),
                "best_so_far": float(es.best_value),
                "mean": float(np.mean(values)),
                "sigma": float(es.sigma),
            }
        )
        if config.target_value is not None and es.best_value <= config.target_value:
            stop_reason = "target_value"
            break
    assert es.best_point is not None
    return CmaesResult(
        x=es.best_point,
        value=es.best_value,
        evaluations=evaluations,
        generations=es.generation,
        stop_reason=stop_reason,
        history=history,
        events=list(es.events),
        strategy=es.strategy,
    )
