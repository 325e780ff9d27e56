"""Univariate tree-structured Parzen estimator search."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

GAMMA = 0.25
N_CANDIDATES = 24
FAILED_SCORE = -1.0


@dataclass(frozen=True)
class IntParam:
    low: int
    high: int


@dataclass(frozen=True)
class FloatParam:
    low: float
    high: float


@dataclass(frozen=True)
class CategoricalParam:
    choices: tuple


@dataclass(frozen=True)
class SearchSpace:
    params: dict[str, IntParam | FloatParam | CategoricalParam]
    budget: int = 40
    seed: int = 0

    def __post_init__(self) -> None:
        if self.budget < 1:
            raise ValueError("search budget must be >= 1")
        if not self.params:
            raise ValueError("search space is empty")
        for name, p in self.params.items():
            if isinstance(p, CategoricalParam):
                if not p.choices:
                    raise ValueError(f"{name}: no choices")
            elif p.low > p.high:
                raise ValueError(f"{name}: empty range [{p.low}, {p.high}]")


@dataclass
class Trial:
    number: int
    params: dict[str, Any]
    score: float
    sampler: str
    error: str | None = None


@dataclass
class SearchResult:
    best_params: dict[str, Any]
    best_score: float
    trials: list[Trial] = field(default_factory=list)

    def log(self) -> list[dict]:
        return [
            {"number": t.number, "params": t.params, "score": t.score, "sampler": t.sampler, "error": t.error}
            for t in self.trials
        ]


def _sample_uniform(space: SearchSpace, rng: np.random.Generator) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for name, p in space.params.items():
        if isinstance(p, CategoricalParam):
            out[name] = p.choices[int(rng.integers(len(p.choices)))]
        elif isinstance(p, IntParam):
            out[name] = int(rng.integers(p.low, p.high + 1))
        else:
            out[name] = float(rng.uniform(p.low, p.high))
    return out


class _NumericKde:
    """Gaussian KDE with Silverman-style bandwidth 1.06 * sigma * n^(-1/5)."""

    def __init__(self, values: np.ndarray, low: float, high: float) -> None:
        self.values = np.asarray(values, dtype=np.float64)
        width = float(high - low)
        n = len(self.values)
        sigma = float(self.values.std())
        if n < 2 or sigma == 0.0:
            bw = 0.1 * width
        else:
            bw = max(1.06 * sigma * n ** (-0.2), 0.01 * width)
        self.bw = bw if bw > 0 else 1.0
        self.low, self.high = low, high

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        centers = self.values[rng.integers(len(self.values), size=size)]
        return np.clip(centers + rng.normal(0.0, self.bw, size=size), self.low, self.high)

    def log_pdf(self, x: np.ndarray) -> np.ndarray:
        z = (np.asarray(x, dtype=np.float64)[:, None] - self.values[None, :]) / self.bw
        dens = np.exp(-0.5 * z * z).mean(axis=1) / (self.bw * math.sqrt(2 * math.pi))
        return np.log(np.maximum(dens, 1e-300))


class _CategoricalModel:
    """Choice frequencies with +1 smoothing."""

    def __init__(self, values: Sequence, choices: tuple) -> None:
        self.choices = choices
        counts = np.array([sum(1 for v in values if v == c) for c in choices], dtype=np.float64)
        self.probs = (counts + 1.0) / (counts.sum() + len(choices))

    def sample(self, rng: np.random.Generator, size: int) -> list:
        picks = rng.choice(len(self.choices), size=size, p=self.probs)
        return [self.choices[i] for i in picks]

    def log_pdf(self, values: Sequence) -> np.ndarray:
        return np.log(np.array([self.probs[self.choices.index(v)] for v in values]))


def _models(space: SearchSpace, trials: Sequence[Trial]) -> dict:
    out = {}
    for name, p in space.params.items():
        vals = [t.params[name] for t in trials]
        if isinstance(p, CategoricalParam):
            out[name] = _CategoricalModel(vals, p.choices)
        else:
            out[name] = _NumericKde(np.array(vals, dtype=np.float64), p.low, p.high)
    return out


def _sample_tpe(space: SearchSpace, history: Sequence[Trial], rng: np.random.Generator) -> dict[str, Any]:
    ranked = sorted(history, key=lambda t: (-t.score, t.number))
    n_good = max(1, int(math.ceil(GAMMA * len(ranked))))
    good, bad = ranked[:n_good], ranked[n_good:]
    if not bad:
        return _sample_uniform(space, rng)
    l_models, g_models = _models(space, good), _models(space, bad)

    candidates: dict[str, list] = {}
    for name, p in space.params.items():
        draws = l_models[name].sample(rng, N_CANDIDATES)
        if isinstance(p, IntParam):
            candidates[name] = [int(v) for v in np.floor(np.asarray(draws) + 0.5)]
        elif isinstance(p, FloatParam):
            candidates[name] = [float(v) for v in draws]
        else:
            candidates[name] = list(draws)

    log_ratio = np.zeros(N_CANDIDATES)
    for name in space.params:
        log_ratio += l_models[name].log_pdf(candidates[name]) - g_models[name].log_pdf(candidates[name])
    best = int(np.argmax(log_ratio))
    return {name: candidates[name][best] for name in space.params}


def hyperparam_search(space: SearchSpace, objective: Callable[[dict[str, Any]], float]) -> SearchResult:
    """Maximize ``objective`` (validation F1) over ``space``.

    The first ``ceil(budget / 4)`` trials are uniform random draws; each later
    trial splits the history at the top-25% score quantile, fits per-parameter
    densities to the good and bad groups, draws 24 candidates from the good
    density and evaluates the one with the largest good/bad density ratio.
    An objective that raises is recorded with score -1.
    """
    rng = np.random.default_rng(space.seed)
    n_startup = int(math.ceil(space.budget / 4))
    trials: list[Trial] = []
    for number in range(space.budget):
        if number < n_startup:
            params, sampler = _sample_uniform(space, rng), "random"
        else:
            params, sampler = _sample_tpe(space, trials, rng), "tpe"
        try:
            score, error = float(objective(params)), None
            if not math.isfinite(score):
                score, error = FAILED_SCORE, "non-finite objective"
        except Exception as exc:  # noqa: BLE001 - a failed trial must not end the search
            logger.warning("trial %d failed: %s", number, exc)
            score, error = FAILED_SCORE, f"{type(exc).__name__}: {exc}"
        trials.append(Trial(number, params, score, sampler, error))
        logger.debug("trial %d %s -> %.5f", number, params, score)
    best = max(trials, key=lambda t: (t.score, -t.number))
    return SearchResult(dict(best.params), best.score, trials)
