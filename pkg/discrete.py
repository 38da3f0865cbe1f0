"""Discrete surplus process theta_k = xi_k + theta_{k-1} * rho_k on the grid k / n."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import partial
from typing import Any

import numpy as np
from scipy import stats

from distributions import require_central_moment
from errors import DomainError, UndefinedMomentError
from rescale import RescaledScheme
from rng import StreamBlock, StreamKey, map_paths, stream_id

logger = logging.getLogger(__name__)

MIN_PATHS = 100
MAX_EXACT_ORDER = 6
_Z95 = float(stats.norm.ppf(0.975))

RUIN_PROB = "ruin_prob_by_T"
PENALTY = "discounted_penalty"
MOMENT = "moment"
TERMINAL = "terminal"
FUNCTIONALS = (RUIN_PROB, PENALTY, MOMENT, TERMINAL)


def grid_steps(n: int, T: float) -> int:
    """floor(n T), tolerant of T values that are a rounding error below a grid point."""
    return int(math.floor(n * T + 1e-9))


# ---------------------------------------------------------------------------
# Paths
# ---------------------------------------------------------------------------


@dataclass
class SurplusPath:
    n: int
    T: float
    y0: float
    values: np.ndarray
    xi: np.ndarray | None = None
    rho: np.ndarray | None = None

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.values.size) / self.n


@dataclass(frozen=True)
class RuinOutcome:
    ruined: bool
    time: float | None = None
    index: int | None = None

    @property
    def censored(self) -> bool:
        return not self.ruined


def recursion(y0: float, xi: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Unroll theta_k = xi_k + theta_{k-1} rho_k, returning theta_0..theta_K."""
    xi = np.asarray(xi, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if xi.shape != rho.shape:
        raise DomainError("xi and rho must have equal length")
    values = np.empty(xi.size + 1)
    values[0] = y0
    for k in range(xi.size):
        values[k + 1] = xi[k] + values[k] * rho[k]
    return values


def explicit_solution(y0: float, xi: np.ndarray, rho: np.ndarray) -> float:
    """y0 prod(rho) + sum_i xi_i prod_{j > i} rho_j. Empty products are 1."""
    xi = np.asarray(xi, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if xi.shape != rho.shape:
        raise DomainError("xi and rho must have equal length")
    if xi.size == 0:
        return float(y0)
    tail = np.cumprod(rho[::-1])[::-1]
    after = np.append(tail[1:], 1.0)
    return float(y0 * tail[0] + np.sum(xi * after))


def simulate_path(scheme: RescaledScheme, y0: float, T: float, key: StreamKey) -> SurplusPath:
    if y0 < 0 or T <= 0:
        raise DomainError(f"need y0 >= 0 and T > 0, got y0={y0}, T={T}")
    steps = grid_steps(scheme.n, T)
    block = StreamBlock(key.seed, [key.stream_id])
    xi = np.empty(steps)
    rho = np.empty(steps)
    for k in range(steps):
        x, r = scheme.draw(block)
        xi[k], rho[k] = x[0], r[0]
    return SurplusPath(n=scheme.n, T=T, y0=y0, values=recursion(y0, xi, rho), xi=xi, rho=rho)


def ruin_scan(path: SurplusPath) -> RuinOutcome:
    """First grid time with a strictly negative value. Touching 0 is not ruin."""
    below = np.flatnonzero(path.values < 0)
    if below.size == 0:
        return RuinOutcome(ruined=False)
    k = int(below[0])
    return RuinOutcome(ruined=True, time=k / path.n, index=k)


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Functional:
    kind: str
    T: float = 1.0
    alpha: float | None = None
    p: int | None = None
    barrier: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in FUNCTIONALS:
            raise DomainError(f"functional must be one of {FUNCTIONALS}, got {self.kind!r}")
        if self.T <= 0:
            raise DomainError(f"horizon must be > 0, got {self.T}")
        if self.kind == PENALTY and not (self.alpha is not None and self.alpha > 0):
            raise DomainError(f"discounted penalty needs alpha > 0, got {self.alpha}")
        if self.kind == MOMENT and not (self.p is not None and self.p >= 0):
            raise DomainError(f"moment functional needs p >= 0, got {self.p}")

    @property
    def horizon(self) -> float:
        return 1.0 if self.kind == MOMENT else self.T

    @property
    def stops_at_ruin(self) -> bool:
        return self.kind in (RUIN_PROB, PENALTY)


@dataclass
class EstimatorResult:
    mean: float
    stderr: float
    ci_lo: float
    ci_hi: float
    n_paths: int
    seed: int
    namespace: int = 0
    extras: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_samples(cls, samples: np.ndarray, seed: int, namespace: int = 0, **extras: Any) -> "EstimatorResult":
        samples = np.asarray(samples, dtype=float)
        mean = float(np.mean(samples))
        stderr = float(np.std(samples, ddof=1) / math.sqrt(samples.size)) if samples.size > 1 else math.inf
        return cls(
            mean=mean,
            stderr=stderr,
            ci_lo=mean - _Z95 * stderr,
            ci_hi=mean + _Z95 * stderr,
            n_paths=int(samples.size),
            seed=seed,
            namespace=namespace,
            extras=extras,
        )

    def as_dict(self) -> dict[str, Any]:
        out = {
            "mean": self.mean,
            "stderr": self.stderr,
            "ci_lo": self.ci_lo,
            "ci_hi": self.ci_hi,
            "n_paths": self.n_paths,
            "seed": self.seed,
        }
        out.update(self.extras)
        return out


def check_moment_support(scheme: RescaledScheme, p: int) -> None:
    """Raise unless E|xi|^p and E[rho^p] are finite for the scheme's step laws."""
    for order in range(1, p + 1):
        require_central_moment(scheme.loss_base, order)
    if p > 0 and not scheme.return_base.has_mgf():
        raise UndefinedMomentError(f"{scheme.return_base.name} log-returns give rho no finite moment of order {p}")


def run_functional(scheme: RescaledScheme, functional: Functional, y0: float, block: StreamBlock) -> np.ndarray:
    """Per-lane samples of `functional` for the lanes of `block`, in lane order."""
    steps = grid_steps(scheme.n, functional.horizon)
    out = np.zeros(block.size)
    theta = np.full(block.size, float(y0))
    alive = np.arange(block.size)
    for k in range(1, steps + 1):
        xi, rho = scheme.draw(block)
        theta = xi + theta * rho
        if not functional.stops_at_ruin:
            continue
        ruined = theta < 0
        if ruined.any():
            if functional.kind == PENALTY:
                out[alive[ruined]] = math.exp(-functional.alpha * k / scheme.n)
            else:
                out[alive[ruined]] = 1.0
        done = ruined
        if functional.barrier is not None:
            done = done | (theta >= functional.barrier)
        if done.any():
            keep = ~done
            block.compact(keep)
            theta = theta[keep]
            alive = alive[keep]
            if alive.size == 0:
                break
    if functional.kind == MOMENT:
        return theta ** functional.p
    if functional.kind == TERMINAL:
        return theta
    return out


@dataclass(frozen=True)
class _DiscreteJob:
    scheme: RescaledScheme
    functional: Functional
    y0: float
    seed: int
    namespace: int


def _run_chunk(job: _DiscreteJob, start: int, stop: int) -> np.ndarray:
    ids = [stream_id(job.namespace, i) for i in range(start, stop)]
    return run_functional(job.scheme, job.functional, job.y0, StreamBlock(job.seed, ids))


def sample_functional(
    scheme: RescaledScheme,
    functional: Functional,
    y0: float,
    n_paths: int,
    seed: int,
    namespace: int = 0,
    workers: int = 1,
) -> np.ndarray:
    """Per-path samples; path i uses stream (seed, namespace << 40 | i)."""
    if y0 < 0:
        raise DomainError(f"initial capital must be >= 0, got {y0}")
    if functional.kind == MOMENT:
        check_moment_support(scheme, functional.p)
    job = _DiscreteJob(scheme, functional, float(y0), seed, namespace)
    return map_paths(partial(_run_chunk, job), n_paths, workers)


def estimate(
    scheme: RescaledScheme,
    functional: Functional,
    y0: float,
    n_paths: int,
    seed: int,
    namespace: int = 0,
    workers: int = 1,
) -> EstimatorResult:
    if n_paths < MIN_PATHS:
        raise DomainError(f"estimators need at least {MIN_PATHS} paths, got {n_paths}")
    samples = sample_functional(scheme, functional, y0, n_paths, seed, namespace, workers)
    extras: dict[str, Any] = {"functional": functional.kind, "n": scheme.n, "T": functional.horizon}
    result = EstimatorResult.from_samples(samples, seed, namespace, **extras)
    if functional.kind == PENALTY:
        bound = math.exp(-functional.alpha * functional.T)
        result.extras["truncation_bound"] = bound
        if bound > 0.1 * result.stderr:
            logger.warning("penalty truncation bound %.3g exceeds 0.1 * stderr (%.3g); lengthen the horizon", bound, result.stderr)
    if functional.barrier is not None:
        result.extras["barrier"] = functional.barrier
    logger.info("%s n=%d: %.6g +/- %.3g over %d paths", functional.kind, scheme.n, result.mean, result.stderr, n_paths)
    return result


# ---------------------------------------------------------------------------
# Exact moments
# ---------------------------------------------------------------------------


def exact_moment(scheme: RescaledScheme, y0: float, p: int, t: float = 1.0) -> float:
    """E[theta_n(t) ** p] by iterating the binomial moment recursion over floor(n t) steps.

    Relies on xi_k, rho_k and theta_{k-1} being independent.
    """
    if not 0 <= p <= MAX_EXACT_ORDER:
        raise DomainError(f"exact moments are supported for 0 <= p <= {MAX_EXACT_ORDER}, got {p}")
    if p == 0:
        return 1.0
    check_moment_support(scheme, p)
    xi_m = [scheme.loss_raw_moment(j) for j in range(p + 1)]
    rho_m = [scheme.return_moment(j) for j in range(p + 1)]
    theta = [float(y0) ** j for j in range(p + 1)]
    for _ in range(grid_steps(scheme.n, t)):
        theta = [
            sum(math.comb(q, j) * xi_m[q - j] * rho_m[j] * theta[j] for j in range(q + 1))
            for q in range(p + 1)
        ]
    return theta[p]
