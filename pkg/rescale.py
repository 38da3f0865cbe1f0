"""Re-normalised step laws for a scheme with n steps per unit time.

    xi_n    = mu_xi / n  + (xi    - mu_xi)  / (c_a n^(1/a))
    gamma_n = mu_rho / n + (ln rho - mu_rho) / (c_b n^(1/b))

Square-integrable bases use index 2 and constant 1. Negative Pareto losses
with index in (1, 2) use the stable-CLT constant; stable bases use 1.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from distributions import (
    Degenerate,
    HeavyAlpha,
    NegPareto,
    NIG,
    NonConforming,
    StepLaw,
    require_central_moment,
    stable_constant_c_alpha,
)
from errors import DomainError, UnsupportedFamilyError
from rng import StreamBlock

logger = logging.getLogger(__name__)


def normalization(law: StepLaw) -> tuple[float, float]:
    """(index, constant) used to rescale centred draws of `law`."""
    tail = law.classify()
    if isinstance(tail, HeavyAlpha):
        if isinstance(law.family, NegPareto):
            return tail.alpha, stable_constant_c_alpha(tail.alpha)
        return tail.alpha, 1.0
    if isinstance(tail, NonConforming) and not isinstance(law.family, Degenerate):
        raise DomainError(f"{law.name} cannot be rescaled: {tail.reason}")
    return 2.0, 1.0


def step_scale(law: StepLaw, n: int) -> float:
    index, const = normalization(law)
    return 1.0 / (const * n ** (1.0 / index))


def rescaled_loss(base: StepLaw, n: int, raw: float | np.ndarray) -> float | np.ndarray:
    mu = base.mean()
    return mu / n + (raw - mu) * step_scale(base, n)


def rescaled_logreturn(base: StepLaw, n: int, raw: float | np.ndarray) -> float | np.ndarray:
    mu = base.mean()
    return mu / n + (raw - mu) * step_scale(base, n)


def rescaled_log_mgf(base: StepLaw, n: int, u: float) -> float:
    """log E[exp(u * gamma_n)] for one rescaled step, from the base log-mgf."""
    mu = base.mean()
    s = step_scale(base, n)
    return u * mu * (1.0 / n - s) + base.log_mgf(u * s)


def _mgf_admissible(base: StepLaw, v: float) -> bool:
    fam = base.family
    if isinstance(fam, NIG):
        lo, hi = fam.mgf_domain()
        return lo < v < hi
    return True


def _require_mgf(base: StepLaw) -> None:
    if not base.has_mgf():
        raise UnsupportedFamilyError(f"{base.name} log-returns have no mgf; the exponential-moment conditions need one")


# ---------------------------------------------------------------------------
# Scheme
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RescaledScheme:
    n: int
    loss_base: StepLaw
    return_base: StepLaw

    def __post_init__(self) -> None:
        if self.n < 1:
            raise DomainError(f"steps per unit time must be >= 1, got {self.n}")
        normalization(self.loss_base)
        normalization(self.return_base)

    @property
    def alpha(self) -> float:
        return normalization(self.loss_base)[0]

    @property
    def beta(self) -> float:
        return normalization(self.return_base)[0]

    @property
    def c_alpha(self) -> float:
        return normalization(self.loss_base)[1]

    @property
    def c_beta(self) -> float:
        return normalization(self.return_base)[1]

    @property
    def loss_scale(self) -> float:
        return step_scale(self.loss_base, self.n)

    @property
    def return_scale(self) -> float:
        return step_scale(self.return_base, self.n)

    def loss(self, raw: float | np.ndarray) -> float | np.ndarray:
        return rescaled_loss(self.loss_base, self.n, raw)

    def logreturn(self, raw: float | np.ndarray) -> float | np.ndarray:
        return rescaled_logreturn(self.return_base, self.n, raw)

    def draw(self, block: StreamBlock) -> tuple[np.ndarray, np.ndarray]:
        """One (xi_n, rho_n) pair per lane. Loss is drawn before return."""
        xi = self.loss(self.loss_base.draw(block))
        gamma = self.logreturn(self.return_base.draw(block))
        return xi, np.exp(gamma)

    def loss_raw_moment(self, order: int) -> float:
        """E[xi_n ** order] from the base central moments."""
        a = self.loss_base.mean() / self.n
        s = self.loss_scale
        return sum(
            math.comb(order, i) * a ** (order - i) * s ** i * require_central_moment(self.loss_base, i)
            for i in range(order + 1)
        )

    def return_moment(self, order: int) -> float:
        """E[rho_n ** order]."""
        if order == 0:
            return 1.0
        _require_mgf(self.return_base)
        return math.exp(rescaled_log_mgf(self.return_base, self.n, float(order)))


# ---------------------------------------------------------------------------
# Exponential-moment conditions
# ---------------------------------------------------------------------------


@dataclass
class ConditionResult:
    """Grid evaluation of sup_n E[exp(u * gamma_n)]^n for a fixed u."""

    u: float
    table: list[dict[str, Any]]
    limit: float
    sup_estimate: float
    first_admissible_n: int | None
    satisfied: bool = False
    n0: int | None = None
    printed_limit: float | None = None
    diagnostics: dict[str, Any] = field(default_factory=dict)

    @property
    def C(self) -> float:
        return max(self.sup_estimate, self.limit)

    @property
    def bounded(self) -> bool:
        return self.first_admissible_n is not None and math.isfinite(self.C)

    def as_dict(self) -> dict[str, Any]:
        return {
            "u": self.u,
            "satisfied": self.satisfied,
            "bounded": self.bounded,
            "C": self.C,
            "n0": self.n0,
            "sup_estimate": self.sup_estimate,
            "limit": self.limit,
            "printed_limit": self.printed_limit,
            "first_admissible_n": self.first_admissible_n,
            "diagnostics": self.diagnostics,
            "table": self.table,
        }


def _power_table(base: StepLaw, u: float, n_max: int) -> ConditionResult:
    _require_mgf(base)
    if n_max < 1:
        raise DomainError(f"n_max must be >= 1, got {n_max}")
    table: list[dict[str, Any]] = []
    first = None
    for n in range(1, n_max + 1):
        v = u * step_scale(base, n)
        if not _mgf_admissible(base, v):
            table.append({"n": n, "value": None, "admissible": False})
            continue
        if first is None:
            first = n
        value = math.exp(n * rescaled_log_mgf(base, n, u))
        table.append({"n": n, "value": value, "admissible": True})
    # Second-order expansion of n * log E[exp(u gamma_n)] as n grows.
    limit = math.exp(u * base.mean() + 0.5 * u * u * base.variance())
    values = [row["value"] for row in table if row["admissible"]]
    sup = max(values) if values else math.inf
    if first is None:
        logger.warning("no n <= %d keeps u * scale inside the mgf domain of %s", n_max, base.name)
    return ConditionResult(u=u, table=table, limit=limit, sup_estimate=sup, first_admissible_n=first)


def check_condition_9(return_base: StepLaw, n_max: int = 200) -> ConditionResult:
    """sup_{n >= n0} E[exp(-2 gamma_n)]^n <= C < 1, on the grid 1..n_max plus the limit.

    n0 is the first grid n from which every later value stays below 1; the
    reported sup is taken from n0 on.
    """
    result = _power_table(return_base, -2.0, n_max)
    result.diagnostics["grid_sup"] = result.sup_estimate
    if result.limit < 1.0:
        for row in reversed(result.table):
            if not (row["admissible"] and row["value"] < 1.0):
                break
            result.n0 = row["n"]
    if result.n0 is not None:
        result.sup_estimate = max(row["value"] for row in result.table if row["n"] >= result.n0)
    result.satisfied = result.n0 is not None and result.C < 1.0
    logger.debug("condition 9 for %s: C=%.6g limit=%.6g satisfied=%s", return_base.name, result.C, result.limit, result.satisfied)
    return result


def check_condition_15(return_base: StepLaw, q: float = 3.0, n_max: int = 200) -> ConditionResult:
    """sup_n E[exp(q gamma_n)]^n < inf, on the grid 1..n_max plus the limit."""
    if q < 2:
        raise DomainError(f"moment condition needs q >= 2, got {q}")
    result = _power_table(return_base, float(q), n_max)
    fam = return_base.family
    if isinstance(fam, NIG):
        lam3 = fam.lam ** 3
        result.printed_limit = math.exp(q * return_base.mean() - q * fam.delta * fam.alpha ** 2 / (2 * lam3))
    result.satisfied = result.bounded
    result.n0 = result.first_admissible_n
    return result
