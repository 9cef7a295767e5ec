"""Chunk-size tuning: Bayesian optimization plus grid and random baselines."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import norm

Objective = Callable[[float], float]

SQRT5 = math.sqrt(5.0)


class TunerError(RuntimeError):
    pass


def matern52(a: np.ndarray, b: np.ndarray, length_scale: float, variance: float) -> np.ndarray:
    """Matern nu=5/2 covariance between two 1-D point sets."""
    r = np.abs(np.subtract.outer(np.asarray(a, float), np.asarray(b, float))) / length_scale
    return variance * (1.0 + SQRT5 * r + 5.0 / 3.0 * r * r) * np.exp(-SQRT5 * r)


@dataclass
class BOState:
    """Observations and surrogate settings of one tuning run.

    ``length_scale``, ``signal_variance`` and ``noise_variance`` default to
    data-driven values (0.2 of the interval width, the sample variance, and
    1e-6 of it) when left as ``None``.
    """

    search_lo: float
    search_hi: float
    budget: int = 8
    xi: float = 0.1
    length_scale: Optional[float] = None
    signal_variance: Optional[float] = None
    noise_variance: Optional[float] = None
    candidates: int = 512
    samples: List[Tuple[float, float]] = field(default_factory=list)

    def __post_init__(self):
        if not (self.search_hi > self.search_lo >= 0):
            raise TunerError(f"bad search interval ({self.search_lo}, {self.search_hi}]")
        if self.budget < 1:
            raise TunerError("budget must be at least 1")

    @property
    def width(self) -> float:
        return self.search_hi - self.search_lo

    def observe(self, x: float, y: float) -> None:
        if not (self.search_lo < x <= self.search_hi):
            raise TunerError(f"sample {x} outside ({self.search_lo}, {self.search_hi}]")
        self.samples.append((float(x), float(y)))

    def hyperparameters(self) -> Tuple[float, float, float, float]:
        """``(prior_mean, length_scale, signal_variance, noise_variance)``."""
        ys = np.array([y for _, y in self.samples], float)
        mean = float(ys.mean())
        ls = self.length_scale if self.length_scale is not None else 0.2 * self.width
        sv = self.signal_variance
        if sv is None:
            sv = float(ys.var()) if len(ys) > 1 else 0.0
            if not sv > 0:
                # constant data: any positive scale gives the same posterior mean
                sv = max(mean * mean, 1.0) * 1e-6
        nv = self.noise_variance if self.noise_variance is not None else 1e-6 * sv
        return mean, ls, sv, nv

    def grid(self) -> np.ndarray:
        return self.search_lo + self.width * np.arange(1, self.candidates + 1) / self.candidates


def gp_posterior(state: BOState, query: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance of the observed function at ``query``.

    Noise is the observation noise, so the returned variance is that of the
    latent function. Jitter is escalated tenfold up to five times before the
    kernel matrix is declared singular.
    """
    if not state.samples:
        raise TunerError("posterior needs at least one sample")
    mean0, ls, sv, nv = state.hyperparameters()
    xs = np.array([x for x, _ in state.samples], float)
    ys = np.array([y for _, y in state.samples], float) - mean0
    q = np.atleast_1d(np.asarray(query, float))
    K = matern52(xs, xs, ls, sv)
    jitter = nv
    for _ in range(6):
        try:
            chol = np.linalg.cholesky(K + max(jitter, 0.0) * np.eye(len(xs)))
            break
        except np.linalg.LinAlgError:
            jitter = max(jitter * 10.0, 1e-12 * sv)
    else:
        raise TunerError("kernel matrix is singular even after jitter")
    alpha = np.linalg.solve(chol.T, np.linalg.solve(chol, ys))
    Ks = matern52(q, xs, ls, sv)
    mu = mean0 + Ks @ alpha
    v = np.linalg.solve(chol, Ks.T)
    var = np.maximum(sv - np.sum(v * v, axis=0), 0.0)
    return mu, var


def confidence_interval(mean, variance, z: float = 1.96):
    sd = np.sqrt(variance)
    return mean - z * sd, mean + z * sd


def ei_acquisition(mean, variance, best: float, xi: float):
    """Expected improvement below ``best`` (minimization) with offset ``xi``."""
    mean = np.asarray(mean, float)
    sigma = np.sqrt(np.maximum(np.asarray(variance, float), 0.0))
    gain = best - mean - xi
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sigma > 0, gain / np.where(sigma > 0, sigma, 1.0), 0.0)
        ei = gain * norm.cdf(z) + sigma * norm.pdf(z)
    ei = np.where(sigma > 0, ei, np.maximum(gain, 0.0))
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei


class SampleRow(NamedTuple):
    round: int
    sp_bytes: float
    observed_us: float
    incumbent_us: float


class TuneResult(NamedTuple):
    best_sp: float
    best_time: float
    log: List[SampleRow]


def bo_tune(objective: Objective, state: BOState, seed: int = 0) -> TuneResult:
    """Minimize ``objective`` over the state's interval with GP + EI.

    The first sample is drawn uniformly; each later one maximizes EI over
    the candidate grid (ties go to the smallest chunk). ``xi`` is expressed
    relative to the spread of the observations so that it is unit-free.
    """
    rng = np.random.default_rng(seed)
    log: List[SampleRow] = []
    best = math.inf

    def record(x: float) -> None:
        nonlocal best
        y = float(objective(x))
        state.observe(x, y)
        best = min(best, y)
        log.append(SampleRow(len(log) + 1, x, y, best))

    record(_uniform(rng, state.search_lo, state.search_hi))
    grid = state.grid()
    while len(state.samples) < state.budget:
        mu, var = gp_posterior(state, grid)
        _, _, sv, _ = state.hyperparameters()
        ei = ei_acquisition(mu, var, best, state.xi * math.sqrt(sv))
        seen = {x for x, _ in state.samples}
        order = np.argsort(-ei, kind="stable")
        pick = next((grid[i] for i in order if grid[i] not in seen), None)
        if pick is None:
            break
        record(float(pick))
    x_best, y_best = min(state.samples, key=lambda s: (s[1], s[0]))
    return TuneResult(x_best, y_best, log)


def _uniform(rng: np.random.Generator, lo: float, hi: float) -> float:
    # (lo, hi]
    return float(hi - rng.random() * (hi - lo))


def grid_tune(objective: Objective, state: BOState, points: int = 8) -> Tuple[float, float]:
    """Evaluate ``points`` equally spaced chunk sizes; ties keep the smallest."""
    xs = state.search_lo + state.width * np.arange(1, points + 1) / points
    results = [(float(objective(float(x))), float(x)) for x in xs]
    y, x = min(results)
    return x, y


def random_tune(
    objective: Objective, state: BOState, draws: int = 8, seed: int = 0
) -> Tuple[float, float]:
    rng = np.random.default_rng(seed)
    results = []
    for _ in range(draws):
        x = _uniform(rng, state.search_lo, state.search_hi)
        results.append((float(objective(x)), x))
    y, x = min(results)
    return x, y


def retune_trigger(current: float, predicted_best: float, delta: float = 0.1) -> bool:
    """True when the iteration time drifted more than ``delta`` from the tuned value."""
    if not predicted_best > 0 or not delta > 0:
        raise TunerError("predicted time and threshold must be positive")
    return abs(current - predicted_best) / predicted_best > delta


def noisy(objective: Objective, rel_sd: float, seed: int = 0, repeats: int = 10) -> Objective:
    """Wrap a deterministic objective with seeded multiplicative noise.

    Each call averages ``repeats`` noisy measurements, like timing several
    training iterations per sample.
    """
    rng = np.random.default_rng(seed)

    def measured(x: float) -> float:
        base = objective(x)
        return float(np.mean(base * (1.0 + rel_sd * rng.standard_normal(repeats))))

    return measured
