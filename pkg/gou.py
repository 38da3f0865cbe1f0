"""Generalised Ornstein-Uhlenbeck limit Y_t = e^{R_t} (y + int e^{-R_{s-}} dX_s).

Three discretisations on a grid of step h:

    euler-sde     Y += (mu_xi + kappa_rho Y) h + sigma_xi sqrt(h) G1 + sigma_rho Y sqrt(h) G2
    exponential   Y  = exp(dR) (Y + dX),  dX = mu_xi h + sigma_xi sqrt(h) G1,  dR = mu_rho h + sigma_rho sqrt(h) G2
    stable-euler  exponential form with strictly stable increments h^(1/a) S for either driver

G1 (for X) is always drawn before G2 (for R).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import partial
from typing import Any

import numpy as np

from discrete import MIN_PATHS, MOMENT, PENALTY, TERMINAL, EstimatorResult, Functional, RuinOutcome
from distributions import Degenerate, HeavyAlpha, NegPareto, chambers_mallows_stuck, stable_constant_c_alpha
from errors import DomainError
from rescale import RescaledScheme
from rng import StreamBlock, StreamKey, map_paths, stream_id

logger = logging.getLogger(__name__)

EULER_SDE = "euler-sde"
EXPONENTIAL = "exponential"
STABLE_EULER = "stable-euler"
SCHEMES = (EULER_SDE, EXPONENTIAL, STABLE_EULER)
MAX_STEP = 1e-2


@dataclass(frozen=True)
class StableDriver:
    """Strictly stable Levy driver with unit-time law S(index, skew, dispersion)."""

    index: float
    skew: float
    dispersion: float = 1.0

    def __post_init__(self) -> None:
        if not 1.0 < self.index < 2.0:
            raise DomainError(f"stable driver index must lie in (1, 2), got {self.index}")
        if not -1.0 <= self.skew <= 1.0:
            raise DomainError(f"stable driver skew must lie in [-1, 1], got {self.skew}")
        if self.dispersion < 0:
            raise DomainError(f"stable driver dispersion must be >= 0, got {self.dispersion}")

    def increment(self, h: float, block: StreamBlock) -> np.ndarray:
        noise = chambers_mallows_stuck(self.index, self.skew, block)
        return (self.dispersion * h) ** (1.0 / self.index) * noise


@dataclass(frozen=True)
class GouParams:
    mu_xi: float
    sigma_xi: float
    mu_rho: float
    sigma_rho: float
    x_driver: StableDriver | None = None
    r_driver: StableDriver | None = None

    def __post_init__(self) -> None:
        if self.sigma_xi < 0 or self.sigma_rho < 0:
            raise DomainError(f"volatilities must be >= 0, got sigma_xi={self.sigma_xi}, sigma_rho={self.sigma_rho}")

    @property
    def kappa_rho(self) -> float:
        return self.mu_rho + 0.5 * self.sigma_rho ** 2

    @property
    def is_diffusion(self) -> bool:
        return self.x_driver is None and self.r_driver is None

    @property
    def has_noise(self) -> bool:
        return not self.is_diffusion or self.sigma_xi > 0 or self.sigma_rho > 0

    def as_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "mu_xi": self.mu_xi,
            "sigma_xi": self.sigma_xi,
            "mu_rho": self.mu_rho,
            "sigma_rho": self.sigma_rho,
            "kappa_rho": self.kappa_rho,
        }
        for name in ("x_driver", "r_driver"):
            driver = getattr(self, name)
            if driver is not None:
                out[name] = {"index": driver.index, "skew": driver.skew, "dispersion": driver.dispersion}
        return out


def limit_params(scheme: RescaledScheme) -> GouParams:
    """Parameters of the weak limit of the rescaled scheme.

    Square-integrable bases give Brownian parts with the base variances.
    Negative Pareto losses give a totally left-skewed stable driver; dividing
    by the c_alpha constant leaves it with dispersion c_alpha^(1 - alpha).
    """
    loss, ret = scheme.loss_base, scheme.return_base
    x_driver = r_driver = None
    sigma_xi = sigma_rho = 0.0
    loss_tail = loss.classify()
    if isinstance(loss_tail, HeavyAlpha):
        if isinstance(loss.family, NegPareto):
            c = stable_constant_c_alpha(loss_tail.alpha)
            x_driver = StableDriver(loss_tail.alpha, -1.0, c ** (1.0 - loss_tail.alpha))
        else:
            x_driver = StableDriver(loss_tail.alpha, loss.family.beta, loss.family.c)
    elif not isinstance(loss.family, Degenerate):
        sigma_xi = math.sqrt(loss.variance())
    ret_tail = ret.classify()
    if isinstance(ret_tail, HeavyAlpha):
        if isinstance(ret.family, NegPareto):
            c = stable_constant_c_alpha(ret_tail.alpha)
            r_driver = StableDriver(ret_tail.alpha, -1.0, c ** (1.0 - ret_tail.alpha))
        else:
            r_driver = StableDriver(ret_tail.alpha, ret.family.beta, ret.family.c)
    elif not isinstance(ret.family, Degenerate):
        sigma_rho = math.sqrt(ret.variance())
    return GouParams(loss.mean(), sigma_xi, ret.mean(), sigma_rho, x_driver, r_driver)


def default_scheme(params: GouParams, requested: str = EULER_SDE) -> str:
    """Stable drivers can only run on the exponential form."""
    if not params.is_diffusion:
        return STABLE_EULER
    return requested


# ---------------------------------------------------------------------------
# Stepping
# ---------------------------------------------------------------------------


def grid_steps(T: float, h: float) -> int:
    if h <= 0:
        raise DomainError(f"step h must be > 0, got {h}")
    steps = int(round(T / h))
    if abs(steps * h - T) > 1e-9 * max(1.0, T):
        raise DomainError(f"horizon T={T} is not a multiple of h={h}")
    if h > MAX_STEP:
        logger.warning("step h=%g is coarser than %g; first-passage bias grows with h", h, MAX_STEP)
    return steps


def _check_scheme(params: GouParams, scheme: str) -> None:
    if scheme not in SCHEMES:
        raise DomainError(f"scheme must be one of {SCHEMES}, got {scheme!r}")
    if scheme != STABLE_EULER and not params.is_diffusion:
        raise DomainError(f"stable drivers need the {STABLE_EULER} scheme, got {scheme!r}")


def step(params: GouParams, scheme: str, y: np.ndarray, h: float, block: StreamBlock) -> np.ndarray:
    """Advance every lane of `y` by one grid step."""
    if scheme == EULER_SDE:
        g1 = block.next_gaussian()
        g2 = block.next_gaussian()
        root = math.sqrt(h)
        return y + (params.mu_xi + params.kappa_rho * y) * h + params.sigma_xi * root * g1 + params.sigma_rho * root * y * g2
    if params.x_driver is not None:
        dx = params.mu_xi * h + params.x_driver.increment(h, block)
    else:
        dx = params.mu_xi * h + params.sigma_xi * math.sqrt(h) * block.next_gaussian()
    if params.r_driver is not None:
        dr = params.mu_rho * h + params.r_driver.increment(h, block)
    else:
        dr = params.mu_rho * h + params.sigma_rho * math.sqrt(h) * block.next_gaussian()
    return np.exp(dr) * (y + dx)


@dataclass
class GouPath:
    h: float
    T: float
    values: np.ndarray
    scheme: str

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.values.size) * self.h


def _simulate(params: GouParams, y: float, T: float, h: float, scheme: str, key: StreamKey) -> GouPath:
    _check_scheme(params, scheme)
    steps = grid_steps(T, h)
    block = StreamBlock(key.seed, [key.stream_id])
    values = np.empty(steps + 1)
    values[0] = y
    current = np.array([float(y)])
    for k in range(1, steps + 1):
        current = step(params, scheme, current, h, block)
        values[k] = current[0]
    return GouPath(h=h, T=T, values=values, scheme=scheme)


def simulate_diffusion(params: GouParams, y: float, T: float, h: float, scheme: str, key: StreamKey) -> GouPath:
    if scheme == STABLE_EULER:
        raise DomainError("simulate_diffusion takes euler-sde or exponential; use simulate_stable")
    return _simulate(params, y, T, h, scheme, key)


def simulate_stable(params: GouParams, y: float, T: float, h: float, key: StreamKey) -> GouPath:
    if params.is_diffusion:
        raise DomainError("simulate_stable needs at least one stable driver")
    return _simulate(params, y, T, h, STABLE_EULER, key)


def first_passage(path: GouPath) -> RuinOutcome:
    below = np.flatnonzero(path.values < 0)
    if below.size == 0:
        return RuinOutcome(ruined=False)
    k = int(below[0])
    return RuinOutcome(ruined=True, time=k * path.h, index=k)


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------


def run_functional(
    params: GouParams, scheme: str, functional: Functional, y: float, h: float, block: StreamBlock
) -> np.ndarray:
    steps = grid_steps(functional.horizon, h)
    out = np.zeros(block.size)
    current = np.full(block.size, float(y))
    alive = np.arange(block.size)
    for k in range(1, steps + 1):
        current = step(params, scheme, current, h, block)
        if not functional.stops_at_ruin:
            continue
        ruined = current < 0
        if ruined.any():
            out[alive[ruined]] = math.exp(-functional.alpha * k * h) if functional.kind == PENALTY else 1.0
        done = ruined
        if functional.barrier is not None:
            done = done | (current >= functional.barrier)
        if done.any():
            keep = ~done
            block.compact(keep)
            current = current[keep]
            alive = alive[keep]
            if alive.size == 0:
                break
    if functional.kind == MOMENT:
        return current ** functional.p
    if functional.kind == TERMINAL:
        return current
    return out


@dataclass(frozen=True)
class _GouJob:
    params: GouParams
    scheme: str
    functional: Functional
    y: float
    h: float
    seed: int
    namespace: int


def _run_chunk(job: _GouJob, start: int, stop: int) -> np.ndarray:
    ids = [stream_id(job.namespace, i) for i in range(start, stop)]
    return run_functional(job.params, job.scheme, job.functional, job.y, job.h, StreamBlock(job.seed, ids))


def sample_functional(
    params: GouParams,
    functional: Functional,
    y: float,
    h: float,
    n_paths: int,
    seed: int,
    scheme: str = EULER_SDE,
    namespace: int = 0,
    workers: int = 1,
) -> np.ndarray:
    _check_scheme(params, scheme)
    if functional.stops_at_ruin and not params.has_noise:
        logger.warning("noise-free GOU parameters: first passage is deterministic")
    job = _GouJob(params, scheme, functional, float(y), h, seed, namespace)
    return map_paths(partial(_run_chunk, job), n_paths, workers)


def estimate(
    params: GouParams,
    functional: Functional,
    y: float,
    h: float,
    n_paths: int,
    seed: int,
    scheme: str = EULER_SDE,
    namespace: int = 0,
    workers: int = 1,
) -> EstimatorResult:
    if n_paths < MIN_PATHS:
        raise DomainError(f"estimators need at least {MIN_PATHS} paths, got {n_paths}")
    samples = sample_functional(params, functional, y, h, n_paths, seed, scheme, namespace, workers)
    result = EstimatorResult.from_samples(
        samples, seed, namespace, functional=functional.kind, h=h, T=functional.horizon, scheme=scheme
    )
    if functional.kind == PENALTY:
        result.extras["truncation_bound"] = math.exp(-functional.alpha * functional.T)
    if functional.barrier is not None:
        result.extras["barrier"] = functional.barrier
    logger.info("gou %s h=%g: %.6g +/- %.3g", functional.kind, h, result.mean, result.stderr)
    return result
