"""Tree-structured Parzen Estimator over the unit hypercube.

A small, dependency-light TPE for bounded continuous search: observed trials
are split into a "good" and a "bad" set by objective quantile, each set is
modelled per dimension by a mixture of truncated Gaussians, and the next
point is the candidate (drawn from the good density) with the largest
density ratio ``l(x) / g(x)``.

The optimizer maximizes. Randomness comes from numpy's PCG64 generator; the
stream used at iteration ``i`` is derived from ``SeedSequence(seed,
spawn_key=(i,))`` so that every iteration is reproducible on its own and
batch evaluation of startup points cannot shift the sequence.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import ArgumentError, EvaluationError

_LOG_TINY = 1e-300


@dataclass(frozen=True)
class TpeConfig:
    gamma: float = 0.25
    n_startup: int = 20
    n_candidates: int = 24
    bandwidth_floor: float = 0.01
    bandwidth_ceiling: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ArgumentError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.n_startup < 1 or self.n_candidates < 1:
            raise ArgumentError("n_startup and n_candidates must be positive")
        if not 0.0 < self.bandwidth_floor <= self.bandwidth_ceiling:
            raise ArgumentError(
                f"need 0 < bandwidth_floor <= bandwidth_ceiling, got "
                f"{self.bandwidth_floor}, {self.bandwidth_ceiling}"
            )


@dataclass(frozen=True, eq=False)
class Trial:
    point: np.ndarray
    objective: float

    def __post_init__(self):
        p = np.asarray(self.point, dtype=np.float64).reshape(-1)
        if np.any(p < 0.0) or np.any(p > 1.0):
            raise ArgumentError(f"trial point {p.tolist()} leaves the unit hypercube")
        p.setflags(write=False)
        object.__setattr__(self, "point", p)


@dataclass
class TrialHistory:
    """Ordered observations sharing one dimension."""

    dim: int
    trials: list[Trial] = field(default_factory=list)

    def __post_init__(self):
        if self.dim < 1:
            raise ArgumentError("dimension must be positive")
        for t in self.trials:
            self._check(t)

    def _check(self, trial: Trial) -> None:
        if trial.point.size != self.dim:
            raise ArgumentError(
                f"trial of dimension {trial.point.size} in a {self.dim}-d history"
            )

    def append(self, trial: Trial) -> None:
        self._check(trial)
        self.trials.append(trial)

    def __len__(self) -> int:
        return len(self.trials)

    def __iter__(self) -> Iterator[Trial]:
        return iter(self.trials)

    def points(self) -> np.ndarray:
        if not self.trials:
            return np.empty((0, self.dim))
        return np.stack([t.point for t in self.trials])

    def objectives(self) -> np.ndarray:
        return np.array([t.objective for t in self.trials], dtype=np.float64)

    def best(self) -> Trial:
        if not self.trials:
            raise ArgumentError("empty history has no best trial")
        # first occurrence wins ties
        return self.trials[int(np.argmax(self.objectives()))]


def split_history(history: TrialHistory, gamma: float) -> tuple[TrialHistory, TrialHistory]:
    """Split into the ``ceil(gamma * n)`` best trials and the rest."""
    n = len(history)
    if n == 0:
        raise ArgumentError("cannot split an empty history")
    n_good = max(1, math.ceil(gamma * n))
    # stable sort on the negated objective keeps earlier trials ahead on ties
    order = np.argsort(-history.objectives(), kind="stable")
    good_idx = set(order[:n_good].tolist())
    good = [t for i, t in enumerate(history.trials) if i in good_idx]
    bad = [t for i, t in enumerate(history.trials) if i not in good_idx]
    return TrialHistory(history.dim, good), TrialHistory(history.dim, bad)


def adaptive_bandwidths(coords, floor: float, ceiling: float) -> np.ndarray:
    """Kernel width per point: the larger gap to its neighbours.

    The interval ends 0 and 1 act as virtual neighbours of the extreme
    points. Widths are clipped to ``[floor, ceiling]``.
    """
    c = np.asarray(coords, dtype=np.float64).reshape(-1)
    if c.size == 0:
        raise ArgumentError("need at least one coordinate")
    if np.any(np.diff(c) < 0):
        raise ArgumentError("coordinates must be sorted ascending")
    padded = np.concatenate(([0.0], c, [1.0]))
    left = c - padded[:-2]
    right = padded[2:] - c
    return np.clip(np.maximum(left, right), floor, ceiling)


def _kernel_mass(mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    return ndtr((1.0 - mu) / sigma) - ndtr(-mu / sigma)


def parzen_density(coords, bandwidths, x):
    """Equal-weight mixture of Gaussians truncated to [0, 1].

    With no kernels the density is uniform (1.0). ``x`` may be a scalar or
    an array; points outside [0, 1] have density 0.
    """
    mu = np.asarray(coords, dtype=np.float64).reshape(-1)
    sigma = np.asarray(bandwidths, dtype=np.float64).reshape(-1)
    if mu.shape != sigma.shape:
        raise ArgumentError("coords and bandwidths differ in length")
    if np.any(sigma <= 0):
        raise ArgumentError("bandwidths must be positive")
    xs = np.asarray(x, dtype=np.float64)
    inside = (xs >= 0.0) & (xs <= 1.0)
    if mu.size == 0:
        out = np.where(inside, 1.0, 0.0)
    else:
        z = (xs[..., None] - mu) / sigma
        pdf = np.exp(-0.5 * z * z) / (math.sqrt(2.0 * math.pi) * sigma)
        out = np.mean(pdf / _kernel_mass(mu, sigma), axis=-1)
        out = np.where(inside, out, 0.0)
    return float(out) if np.ndim(out) == 0 else out


class _Parzen1D:
    def __init__(self, coords: np.ndarray, config: TpeConfig):
        self.mu = np.sort(coords)
        self.sigma = (
            adaptive_bandwidths(self.mu, config.bandwidth_floor, config.bandwidth_ceiling)
            if self.mu.size
            else self.mu
        )

    def log_pdf(self, x: np.ndarray) -> np.ndarray:
        return np.log(np.maximum(parzen_density(self.mu, self.sigma, x), _LOG_TINY))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        k = rng.integers(0, self.mu.size, size=n)
        u = rng.random(n)
        mu, sigma = self.mu[k], self.sigma[k]
        lo = ndtr(-mu / sigma)
        hi = ndtr((1.0 - mu) / sigma)
        return np.clip(mu + sigma * ndtri(lo + u * (hi - lo)), 0.0, 1.0)


def tpe_suggest(history: TrialHistory, config: TpeConfig, rng: np.random.Generator) -> np.ndarray:
    """Propose the next point in ``[0, 1]^dim``."""
    d = history.dim
    if len(history) < config.n_startup:
        return rng.random(d)
    good, bad = split_history(history, config.gamma)
    gp, bp = good.points(), bad.points()
    cands = np.empty((config.n_candidates, d))
    score = np.zeros(config.n_candidates)
    for j in range(d):
        l_est = _Parzen1D(gp[:, j], config)
        g_est = _Parzen1D(bp[:, j], config)
        cands[:, j] = l_est.sample(rng, config.n_candidates)
        score += l_est.log_pdf(cands[:, j]) - g_est.log_pdf(cands[:, j])
    return cands[int(np.argmax(score))]


def iteration_rng(seed: int, iteration: int) -> np.random.Generator:
    """Independent generator for one optimizer iteration."""
    if seed < 0:
        raise ArgumentError(f"seed must be non-negative, got {seed}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(iteration,))))


@dataclass(frozen=True)
class TpeResult:
    best_point: np.ndarray
    best_objective: float
    history: TrialHistory


def tpe_maximize(
    objective: Callable[[np.ndarray], float],
    dim: int,
    steps: int,
    seed: int = 0,
    config: TpeConfig | None = None,
    initial_points: Iterable[Sequence[float]] = (),
    n_jobs: int = 1,
) -> TpeResult:
    """Run ``steps`` suggest/evaluate/append rounds and return the best trial.

    ``initial_points`` are evaluated first and count against ``steps``.
    Points of the startup phase do not depend on the history, so with
    ``n_jobs > 1`` they are evaluated concurrently and appended in order.
    """
    config = config or TpeConfig()
    if steps < 1:
        raise ArgumentError(f"steps must be positive, got {steps}")
    queued = [np.asarray(p, dtype=np.float64).reshape(-1) for p in initial_points]
    for p in queued:
        if p.size != dim:
            raise ArgumentError(f"initial point {p.tolist()} is not {dim}-dimensional")

    history = TrialHistory(dim)

    def evaluate(point: np.ndarray) -> float:
        value = float(objective(point))
        if not math.isfinite(value):
            raise EvaluationError(f"objective returned {value!r} at point {point.tolist()}")
        return value

    # before n_startup trials exist, tpe_suggest is a plain uniform draw
    n_batch = min(steps, max(len(queued), config.n_startup))
    batch = [
        queued[i] if i < len(queued) else iteration_rng(seed, i).random(dim)
        for i in range(n_batch)
    ]
    if n_jobs > 1 and n_batch > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            values = list(pool.map(evaluate, batch))
    else:
        values = [evaluate(p) for p in batch]
    for p, v in zip(batch, values):
        history.append(Trial(p, v))

    for i in range(n_batch, steps):
        p = tpe_suggest(history, config, iteration_rng(seed, i))
        history.append(Trial(p, evaluate(p)))

    best = history.best()
    return TpeResult(best.point, best.objective, history)
