"""Base step laws for losses (xi) and log-returns (ln rho).

Each family is a small frozen dataclass that knows its moments, its
cumulant-generating function where one exists, its tail class and how to
draw from a `rng.StreamBlock`. `StepLaw` pairs a family with a role.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Union

import numpy as np
from scipy import special

from errors import DomainError, UndefinedMomentError, UnsupportedFamilyError
from rng import Stream, StreamBlock

logger = logging.getLogger(__name__)

MAX_MOMENT_ORDER = 8


class Role(str, Enum):
    LOSS = "loss"
    LOGRETURN = "logreturn"


# ---------------------------------------------------------------------------
# Tail classes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HeavyAlpha:
    """Regularly varying tails of index alpha in (1, 2): stable domain of attraction."""

    alpha: float
    k1: float
    k2: float

    def __post_init__(self) -> None:
        if not 1.0 < self.alpha < 2.0:
            raise DomainError(f"heavy-tail index must lie in (1, 2), got {self.alpha}")
        if self.k1 < 0 or self.k2 < 0 or self.k1 + self.k2 <= 0:
            raise DomainError("tail constants need k1, k2 >= 0 with k1 + k2 > 0")


@dataclass(frozen=True)
class SquareIntegrable:
    variance: float

    def __post_init__(self) -> None:
        if not (self.variance > 0 and math.isfinite(self.variance)):
            raise DomainError(f"square-integrable class needs 0 < variance < inf, got {self.variance}")


@dataclass(frozen=True)
class NonConforming:
    """Admitted for testing only; satisfies neither tail assumption."""

    reason: str


TailClass = Union[HeavyAlpha, SquareIntegrable, NonConforming]


# ---------------------------------------------------------------------------
# Closed forms
# ---------------------------------------------------------------------------


def pareto_moments(alpha: float) -> tuple[float, float]:
    """(mean, variance) of the negative of a Pareto(alpha) law on [1, inf)."""
    if not alpha > 1:
        raise DomainError(f"NegPareto needs alpha > 1 for a finite mean, got {alpha}")
    mean = -alpha / (alpha - 1.0)
    if alpha <= 2:
        return mean, math.inf
    return mean, alpha / ((alpha - 1.0) ** 2 * (alpha - 2.0))


def _check_nig(alpha: float, beta: float, delta: float) -> float:
    if not (delta > 0 and 0 <= abs(beta) < alpha):
        raise DomainError(f"NIG needs 0 <= |beta| < alpha and delta > 0, got alpha={alpha}, beta={beta}, delta={delta}")
    return math.sqrt(alpha * alpha - beta * beta)


def nig_moments(alpha: float, beta: float, delta: float, mu: float) -> tuple[float, float]:
    lam = _check_nig(alpha, beta, delta)
    return mu + beta * delta / lam, delta * alpha * alpha / lam ** 3


def nig_log_mgf(u: float, alpha: float, beta: float, delta: float, mu: float) -> float:
    lam = _check_nig(alpha, beta, delta)
    if not abs(beta + u) < alpha:
        raise DomainError(f"NIG mgf needs |beta + u| < alpha; got |{beta} + {u}| >= {alpha}")
    return mu * u + delta * (lam - math.sqrt(alpha * alpha - (beta + u) ** 2))


def nig_mgf(u: float, alpha: float, beta: float, delta: float, mu: float) -> float:
    return math.exp(nig_log_mgf(u, alpha, beta, delta, mu))


def _falling(x: float, k: int) -> float:
    return math.prod(x - i for i in range(k))


def nig_cumulant(order: int, alpha: float, beta: float, delta: float, mu: float) -> float:
    """order-th cumulant, analytic derivative of the log-mgf at 0.

    h(x) = sqrt(alpha^2 - x^2) = (alpha - x)^(1/2) (alpha + x)^(1/2); Leibniz on the product.
    """
    _check_nig(alpha, beta, delta)
    if order < 1:
        raise DomainError("cumulant order starts at 1")
    a, b = alpha - beta, alpha + beta
    h_k = 0.0
    for j in range(order + 1):
        left = (-1) ** j * _falling(0.5, j) * a ** (0.5 - j)
        right = _falling(0.5, order - j) * b ** (0.5 - order + j)
        h_k += math.comb(order, j) * left * right
    return (mu if order == 1 else 0.0) - delta * h_k


def central_from_cumulants(cumulants: list[float], order: int) -> float:
    """Central moment from cumulants k_2..k_order (cumulants[k] is k_k; index 0, 1 ignored)."""
    m = [1.0, 0.0]
    for n in range(2, order + 1):
        m.append(sum(math.comb(n - 1, k - 1) * cumulants[k] * m[n - k] for k in range(2, n + 1)))
    return m[order]


def stable_constant_c_alpha(alpha: float) -> float:
    """Normalising constant of n^(1/alpha)-scaled sums of negative Pareto losses."""
    if not 1.0 < alpha < 2.0:
        raise DomainError(f"c_alpha is defined for 1 < alpha < 2, got {alpha}")
    return math.pi / (2.0 * special.gamma(alpha) * math.sin(alpha * math.pi / 2.0))


# ---------------------------------------------------------------------------
# Families
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NegPareto:
    alpha: float

    def __post_init__(self) -> None:
        pareto_moments(self.alpha)

    def mean(self) -> float:
        return pareto_moments(self.alpha)[0]

    def variance(self) -> float:
        return pareto_moments(self.alpha)[1]

    def central_moment(self, order: int) -> float | None:
        if order >= self.alpha:
            return None
        # E[P^k] = alpha / (alpha - k) for the Pareto part; Z = -P flips odd orders.
        mean_p = -self.mean()
        total = 0.0
        for j in range(order + 1):
            raw = self.alpha / (self.alpha - j)
            total += math.comb(order, j) * raw * (-mean_p) ** (order - j)
        return (-1) ** order * total

    def log_mgf(self, u: float) -> float:
        raise UnsupportedFamilyError("NegPareto has no closed-form mgf; it cannot drive log-returns here")

    def classify(self) -> TailClass:
        if self.alpha < 2:
            return HeavyAlpha(self.alpha, k1=1.0, k2=0.0)
        if self.alpha == 2:
            return NonConforming("NegPareto with alpha = 2 has infinite variance but no stable index in (1, 2)")
        return SquareIntegrable(self.variance())

    def draw(self, block: StreamBlock) -> np.ndarray:
        return -np.power(block.next_uniform(), -1.0 / self.alpha)


@dataclass(frozen=True)
class Normal:
    mu: float
    sigma2: float

    def __post_init__(self) -> None:
        if not self.sigma2 > 0:
            raise DomainError(f"Normal needs sigma2 > 0, got {self.sigma2} (use a degenerate law for zero)")

    def mean(self) -> float:
        return self.mu

    def variance(self) -> float:
        return self.sigma2

    def central_moment(self, order: int) -> float:
        if order % 2:
            return 0.0
        return self.sigma2 ** (order // 2) * math.prod(range(order - 1, 0, -2))

    def log_mgf(self, u: float) -> float:
        return self.mu * u + 0.5 * self.sigma2 * u * u

    def cumulant(self, order: int) -> float:
        return {1: self.mu, 2: self.sigma2}.get(order, 0.0)

    def classify(self) -> TailClass:
        return SquareIntegrable(self.sigma2)

    def draw(self, block: StreamBlock) -> np.ndarray:
        return self.mu + math.sqrt(self.sigma2) * block.next_gaussian()


@dataclass(frozen=True)
class NIG:
    alpha: float
    beta: float
    delta: float
    mu: float

    def __post_init__(self) -> None:
        _check_nig(self.alpha, self.beta, self.delta)

    @property
    def lam(self) -> float:
        return math.sqrt(self.alpha ** 2 - self.beta ** 2)

    def mean(self) -> float:
        return nig_moments(self.alpha, self.beta, self.delta, self.mu)[0]

    def variance(self) -> float:
        return nig_moments(self.alpha, self.beta, self.delta, self.mu)[1]

    def cumulant(self, order: int) -> float:
        return nig_cumulant(order, self.alpha, self.beta, self.delta, self.mu)

    def central_moment(self, order: int) -> float:
        cumulants = [0.0, 0.0] + [self.cumulant(k) for k in range(2, order + 1)]
        return central_from_cumulants(cumulants, order)

    def log_mgf(self, u: float) -> float:
        return nig_log_mgf(u, self.alpha, self.beta, self.delta, self.mu)

    def mgf_domain(self) -> tuple[float, float]:
        """Open interval of u where the mgf is finite."""
        return -self.alpha - self.beta, self.alpha - self.beta

    def classify(self) -> TailClass:
        return SquareIntegrable(self.variance())

    def draw(self, block: StreamBlock) -> np.ndarray:
        # Michael-Schucany-Haas inverse Gaussian with mean delta/lam and shape delta^2.
        m = self.delta / self.lam
        shape = self.delta ** 2
        y = block.next_gaussian() ** 2
        x = m + m * m * y / (2 * shape) - (m / (2 * shape)) * np.sqrt(4 * m * shape * y + (m * y) ** 2)
        u = block.next_uniform()
        v = np.where(u <= m / (m + x), x, m * m / x)
        return self.mu + self.beta * v + np.sqrt(v) * block.next_gaussian()


@dataclass(frozen=True)
class Stable:
    """Strictly stable law, characteristic function exp(-c|u|^a (1 - i b sign(u) tan(pi a / 2)))."""

    alpha: float
    beta: float
    c: float = 1.0

    def __post_init__(self) -> None:
        if not 1.0 < self.alpha < 2.0:
            raise DomainError(f"Stable index must lie in (1, 2), got {self.alpha}")
        if not -1.0 <= self.beta <= 1.0:
            raise DomainError(f"Stable skewness must lie in [-1, 1], got {self.beta}")
        if not self.c > 0:
            raise DomainError(f"Stable dispersion must be > 0, got {self.c}")

    def mean(self) -> float:
        return 0.0

    def variance(self) -> float:
        return math.inf

    def central_moment(self, order: int) -> float | None:
        return 0.0 if order == 1 else None

    def log_mgf(self, u: float) -> float:
        raise UnsupportedFamilyError("Stable laws have no finite mgf on both sides of 0")

    def characteristic(self, u: np.ndarray | float) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        z = math.tan(math.pi * self.alpha / 2)
        return np.exp(-self.c * np.abs(u) ** self.alpha * (1 - 1j * self.beta * np.sign(u) * z))

    def classify(self) -> TailClass:
        return HeavyAlpha(self.alpha, k1=(1 - self.beta) / 2, k2=(1 + self.beta) / 2)

    def draw(self, block: StreamBlock) -> np.ndarray:
        return chambers_mallows_stuck(self.alpha, self.beta, block) * self.c ** (1.0 / self.alpha)


@dataclass(frozen=True)
class Degenerate:
    value: float

    def mean(self) -> float:
        return self.value

    def variance(self) -> float:
        return 0.0

    def central_moment(self, order: int) -> float:
        return 1.0 if order == 0 else 0.0

    def log_mgf(self, u: float) -> float:
        return self.value * u

    def cumulant(self, order: int) -> float:
        return self.value if order == 1 else 0.0

    def classify(self) -> TailClass:
        return NonConforming("degenerate law has variance 0; testing only")

    def draw(self, block: StreamBlock) -> np.ndarray:
        return np.full(block.size, float(self.value))


Family = Union[NegPareto, Normal, NIG, Stable, Degenerate]


def chambers_mallows_stuck(alpha: float, beta: float, block: StreamBlock) -> np.ndarray:
    """Unit-dispersion stable variates, alpha != 1. Draws one uniform then one exponential per lane."""
    v = math.pi * (block.next_uniform() - 0.5)
    w = block.next_exponential()
    t = beta * math.tan(math.pi * alpha / 2)
    shift = math.atan(t) / alpha
    scale = (1 + t * t) ** (1 / (2 * alpha))
    arg = alpha * (v + shift)
    return (
        scale
        * np.sin(arg)
        / np.cos(v) ** (1 / alpha)
        * (np.cos(v - arg) / w) ** ((1 - alpha) / alpha)
    )


# ---------------------------------------------------------------------------
# Step law
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StepLaw:
    family: Family
    role: Role = Role.LOSS

    @property
    def name(self) -> str:
        return type(self.family).__name__

    def mean(self) -> float:
        return self.family.mean()

    def variance(self) -> float:
        return self.family.variance()

    def classify(self) -> TailClass:
        return self.family.classify()

    def log_mgf(self, u: float) -> float:
        return self.family.log_mgf(u)

    def mgf(self, u: float) -> float:
        return math.exp(self.family.log_mgf(u))

    def has_mgf(self) -> bool:
        return isinstance(self.family, (Normal, NIG, Degenerate))

    def moment_exists(self, order: int) -> bool:
        return central_moment(self, order) is not None

    def draw(self, block: StreamBlock) -> np.ndarray:
        return self.family.draw(block)


def classify(law: StepLaw) -> TailClass:
    return law.classify()


def central_moment(law: StepLaw, order: int) -> float | None:
    """Exact central moment, or None when it does not exist."""
    if not 0 <= order <= MAX_MOMENT_ORDER:
        raise DomainError(f"moment order must lie in [0, {MAX_MOMENT_ORDER}], got {order}")
    if order == 0:
        return 1.0
    return law.family.central_moment(order)


def require_central_moment(law: StepLaw, order: int) -> float:
    value = central_moment(law, order)
    if value is None:
        raise UndefinedMomentError(f"{law.name} has no finite moment of order {order}")
    return value


def sample(law: StepLaw, state: Stream | StreamBlock) -> float | np.ndarray:
    """One variate per lane. A scalar `Stream` yields a float."""
    if isinstance(state, Stream):
        return float(law.draw(state.block)[0])
    return law.draw(state)
