"""Limit functionals of the diffusion GOU process.

* ultimate ruin probability H(-y) / H(0) by quadrature,
* discounted penalty f(y) / f(0) from the principal solution of
  (s_xi^2 + s_rho^2 x^2) f'' + 2 (mu_xi + kappa_rho x) f' - 2 alpha f = 0,
* moments m_p(t) = E[Y_t^p] as exponential polynomials.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import special
from scipy.interpolate import CubicHermiteSpline

from errors import ConvergenceError, DomainError
from gou import GouParams

logger = logging.getLogger(__name__)

QUAD_TOL = 1e-10
QUAD_START_ORDER = 16
QUAD_MAX_ORDER = 4096
RESIDUAL_TOL = 1e-6
RESONANCE_RTOL = 1e-12
MAX_MOMENT_ORDER = 6


def _require_diffusion(params: GouParams) -> None:
    if not params.is_diffusion:
        raise DomainError("closed-form limit functionals exist only for the diffusion GOU process")


# ---------------------------------------------------------------------------
# Ultimate ruin
# ---------------------------------------------------------------------------


@dataclass
class RuinProbability:
    value: float
    method: str
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def as_dict(self) -> dict[str, Any]:
        return {"value": self.value, "method": self.method, **self.diagnostics}


def _log_partial_integral(upper: float, nu: float, k: float, order: int) -> float:
    """log of int_0^upper sin(u)^(nu - 1) exp(k (u - pi/2)) du by Gauss-Jacobi.

    The endpoint factor u^(nu - 1) is carried by the Jacobi weight; what remains is smooth.
    """
    x, w = special.roots_jacobi(order, 0.0, nu - 1.0)
    u = 0.5 * upper * (1.0 + x)
    smooth = (nu - 1.0) * np.log(np.sinc(u / math.pi)) + k * (u - 0.5 * math.pi)
    shift = float(np.max(smooth))
    total = float(np.sum(w * np.exp(smooth - shift)))
    return nu * math.log(0.5 * upper) + shift + math.log(total)


def ultimate_ruin(params: GouParams, y: float) -> RuinProbability:
    """P(tau(y) < inf) for the diffusion limit.

    With z = (s_xi / s_rho) tan(phi) and u = phi + pi/2 the scale integral becomes
    int_0^U sin(u)^(nu - 1) e^(k u) du, nu = 2 mu_rho / s_rho^2, k = 2 mu_xi / (s_xi s_rho).
    """
    _require_diffusion(params)
    if not (params.sigma_xi > 0 and params.sigma_rho > 0):
        raise DomainError(f"ultimate ruin needs sigma_xi > 0 and sigma_rho > 0, got {params.sigma_xi}, {params.sigma_rho}")
    if y < 0:
        raise DomainError(f"initial capital must be >= 0, got {y}")
    if params.mu_rho <= 0:
        return RuinProbability(1.0, "branch", {"reason": "mu_rho <= 0"})
    if params.mu_xi <= 0:
        return RuinProbability(1.0, "branch", {"reason": "mu_xi <= 0"})
    if y == 0:
        return RuinProbability(1.0, "quadrature", {"reason": "y = 0"})

    nu = 2.0 * params.mu_rho / params.sigma_rho ** 2
    k = 2.0 * params.mu_xi / (params.sigma_xi * params.sigma_rho)
    upper_y = 0.5 * math.pi - math.atan(params.sigma_rho * y / params.sigma_xi)
    upper_0 = 0.5 * math.pi
    if upper_y <= 0.0:
        return RuinProbability(0.0, "quadrature", {"reason": "y beyond floating-point range of the substitution"})

    def ratio(order: int) -> float:
        return math.exp(_log_partial_integral(upper_y, nu, k, order) - _log_partial_integral(upper_0, nu, k, order))

    order = QUAD_START_ORDER
    previous = ratio(order)
    while True:
        order *= 2
        current = ratio(order)
        change = abs(current - previous)
        logger.debug("ultimate ruin quadrature order %d: %.15g (change %.3g)", order, current, change)
        if change <= QUAD_TOL * max(current, 1e-300) or change == 0.0:
            break
        if order >= QUAD_MAX_ORDER:
            raise ConvergenceError(
                f"ultimate ruin quadrature did not settle by order {order}",
                {"nodes": order, "error_estimate": change, "nu": nu, "k": k},
            )
        previous = current
    value = min(max(current, 0.0), 1.0)
    return RuinProbability(value, "quadrature", {"nodes": order, "error_estimate": change, "nu": nu, "k": k})


def scale_density(params: GouParams, z: np.ndarray | float) -> np.ndarray:
    """Scale density: (s_xi^2 + s_rho^2 z^2)^-(1/2 + mu_rho/s_rho^2) exp(-k arctan(s_rho z / s_xi))."""
    z = np.asarray(z, dtype=float)
    expo = 0.5 + params.mu_rho / params.sigma_rho ** 2
    k = 2.0 * params.mu_xi / (params.sigma_xi * params.sigma_rho)
    return (params.sigma_xi ** 2 + params.sigma_rho ** 2 * z * z) ** (-expo) * np.exp(
        -k * np.arctan(params.sigma_rho * z / params.sigma_xi)
    )


# ---------------------------------------------------------------------------
# Discounted penalty
# ---------------------------------------------------------------------------


def decay_exponent(params: GouParams, alpha: float) -> float:
    """Positive root of s_rho^2 eta (eta + 1) - 2 kappa_rho eta - 2 alpha = 0."""
    s2 = params.sigma_rho ** 2
    mu = params.mu_rho
    return (2.0 * mu + math.sqrt(4.0 * mu * mu + 8.0 * alpha * s2)) / (2.0 * s2)


def default_x_max(params: GouParams, y: float = 0.0) -> float:
    return max(50.0, 20.0 * y, 20.0 * params.sigma_xi / params.sigma_rho)


def sturm_liouville_p(params: GouParams, x: np.ndarray | float) -> np.ndarray:
    """Integrating factor p with (p f')' = 2 alpha p f / (s_xi^2 + s_rho^2 x^2)."""
    x = np.asarray(x, dtype=float)
    s_xi, s_rho = params.sigma_xi, params.sigma_rho
    k = 2.0 * params.mu_xi / (s_xi * s_rho)
    return (1.0 + (s_rho * x / s_xi) ** 2) ** (params.kappa_rho / s_rho ** 2) * np.exp(k * np.arctan(s_rho * x / s_xi))


@dataclass
class PenaltySolution:
    params: GouParams
    alpha: float
    grid: np.ndarray
    f: np.ndarray
    fprime: np.ndarray
    eta: float
    x_max: float
    step: float
    residual_max: float
    uniqueness_guaranteed: bool

    @property
    def f0(self) -> float:
        return float(self.f[0])

    @property
    def trusted_max(self) -> float:
        return 0.5 * self.x_max

    def value(self, y: float) -> float:
        if not 0 <= y <= self.trusted_max:
            raise DomainError(f"y={y} is outside the trusted region [0, {self.trusted_max}]; raise X_max")
        spline = CubicHermiteSpline(self.grid, self.f, self.fprime)
        return float(spline(y)) / self.f0

    def flux_residual(self) -> np.ndarray:
        """|(p f')' - 2 alpha p f / a| / (p (1 + |f|)) away from the grid ends, f normalised to f(0) = 1."""
        p = sturm_liouville_p(self.params, self.grid)
        a = self.params.sigma_xi ** 2 + self.params.sigma_rho ** 2 * self.grid ** 2
        f = self.f / self.f0
        dflux = _central_derivative(p * self.fprime / self.f0, self.step)
        inner = slice(2, -2)
        res = dflux - 2.0 * self.alpha * p[inner] * f[inner] / a[inner]
        return np.abs(res) / (p[inner] * (1.0 + np.abs(f[inner])))

    def diagnostics(self) -> dict[str, Any]:
        return {
            "eta": self.eta,
            "x_max": self.x_max,
            "ode_step": self.step,
            "nodes": int(self.grid.size),
            "residual_max": self.residual_max,
            "uniqueness_guaranteed": self.uniqueness_guaranteed,
        }


def _central_derivative(values: np.ndarray, step: float) -> np.ndarray:
    """Fourth-order central difference on nodes 2 .. N-2."""
    return (values[:-4] - 8.0 * values[1:-3] + 8.0 * values[3:-1] - values[4:]) / (12.0 * step)


def ode_residual(params: GouParams, alpha: float, grid: np.ndarray, f: np.ndarray, fprime: np.ndarray) -> np.ndarray:
    """Scaled plug-back residual away from the grid ends; f'' from central differences of f'."""
    x = grid[2:-2]
    fpp = _central_derivative(fprime, grid[1] - grid[0])
    res = (
        (params.sigma_xi ** 2 + params.sigma_rho ** 2 * x * x) * fpp
        + 2.0 * (params.mu_xi + params.kappa_rho * x) * fprime[2:-2]
        - 2.0 * alpha * f[2:-2]
    )
    return np.abs(res) / (1.0 + np.abs(f[2:-2]))


def solve_penalty_ode(
    params: GouParams,
    alpha: float,
    x_max: float | None = None,
    step: float | None = None,
    seed_scale: float = 1.0,
    y: float = 0.0,
) -> PenaltySolution:
    """Principal solution by backward RK4 from X_max seeded with f ~ x^-eta."""
    _require_diffusion(params)
    if not alpha > 0:
        raise DomainError(f"discount rate alpha must be > 0, got {alpha}")
    if not params.sigma_rho > 0:
        raise DomainError("penalty ODE needs sigma_rho > 0; the decay exponent is undefined otherwise")
    if not params.sigma_xi > 0:
        raise DomainError("penalty ODE needs sigma_xi > 0; the equation degenerates at x = 0 otherwise")
    if x_max is None:
        x_max = default_x_max(params, y)
    if step is None:
        step = min(1e-3, x_max / 1e5)
    nodes = int(math.ceil(x_max / step))
    step = x_max / nodes
    eta = decay_exponent(params, alpha)
    uniqueness = params.mu_rho <= 0
    if not uniqueness:
        logger.warning("mu_rho > 0: uniqueness of the decaying solution is not guaranteed")

    s2x, s2r = params.sigma_xi ** 2, params.sigma_rho ** 2
    mu_xi, kappa = params.mu_xi, params.kappa_rho

    def rhs(x: float, f: float, g: float) -> tuple[float, float]:
        return g, (2.0 * alpha * f - 2.0 * (mu_xi + kappa * x) * g) / (s2x + s2r * x * x)

    grid = np.linspace(0.0, x_max, nodes + 1)
    f = np.empty(nodes + 1)
    g = np.empty(nodes + 1)
    f[-1] = seed_scale * x_max ** (-eta)
    g[-1] = -eta * seed_scale * x_max ** (-eta - 1.0)
    hb = -step
    for i in range(nodes, 0, -1):
        x, fi, gi = grid[i], f[i], g[i]
        k1f, k1g = rhs(x, fi, gi)
        k2f, k2g = rhs(x + 0.5 * hb, fi + 0.5 * hb * k1f, gi + 0.5 * hb * k1g)
        k3f, k3g = rhs(x + 0.5 * hb, fi + 0.5 * hb * k2f, gi + 0.5 * hb * k2g)
        k4f, k4g = rhs(x + hb, fi + hb * k3f, gi + hb * k3g)
        f[i - 1] = fi + hb * (k1f + 2.0 * k2f + 2.0 * k3f + k4f) / 6.0
        g[i - 1] = gi + hb * (k1g + 2.0 * k2g + 2.0 * k3g + k4g) / 6.0
    logger.debug("penalty ODE: %d RK4 steps of %.3g from X_max=%g, eta=%.6g", nodes, step, x_max, eta)

    diagnostics = {"eta": eta, "x_max": x_max, "ode_step": step, "nodes": nodes + 1}
    gscale = float(np.max(np.abs(g)))
    if not (np.all(f > 0) and np.all(g <= 1e-12 * gscale)):
        raise ConvergenceError(
            f"penalty solution lost positivity or monotonicity; double X_max (currently {x_max})",
            diagnostics,
        )
    f0 = f[0]
    residual = ode_residual(params, alpha, grid, f / f0, g / f0)
    residual_max = float(np.max(residual)) if residual.size else 0.0
    diagnostics["residual_max"] = residual_max
    if residual_max > RESIDUAL_TOL:
        raise ConvergenceError(f"penalty ODE residual {residual_max:.3g} exceeds {RESIDUAL_TOL}", diagnostics)
    return PenaltySolution(
        params=params,
        alpha=alpha,
        grid=grid,
        f=f,
        fprime=g,
        eta=eta,
        x_max=x_max,
        step=step,
        residual_max=residual_max,
        uniqueness_guaranteed=uniqueness,
    )


@dataclass
class PenaltyValue:
    value: float
    uniqueness_guaranteed: bool
    diagnostics: dict[str, Any]

    def as_dict(self) -> dict[str, Any]:
        return {"value": self.value, "uniqueness_guaranteed": self.uniqueness_guaranteed, **self.diagnostics}


def discounted_penalty(
    params: GouParams, alpha: float, y: float, solution: PenaltySolution | None = None
) -> PenaltyValue:
    """E[exp(-alpha tau(y)) 1{tau(y) < inf}] = f(y) / f(0)."""
    if solution is None:
        solution = solve_penalty_ode(params, alpha, y=y)
    return PenaltyValue(solution.value(y), solution.uniqueness_guaranteed, solution.diagnostics())


# ---------------------------------------------------------------------------
# Moments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExpTerm:
    coef: float
    degree: int
    rate: float


def _resonant(a: float, b: float) -> bool:
    return abs(a - b) <= RESONANCE_RTOL * max(1.0, abs(a), abs(b))


@dataclass(frozen=True)
class MomentPolynomial:
    """sum_i coef_i t^degree_i exp(rate_i t). Terms are kept unmerged so m(0) sums exactly."""

    terms: tuple[ExpTerm, ...] = ()

    def __call__(self, t: float) -> float:
        return math.fsum(term.coef * t ** term.degree * math.exp(term.rate * t) for term in self.terms)

    def __add__(self, other: "MomentPolynomial") -> "MomentPolynomial":
        return MomentPolynomial(self.terms + other.terms)

    def scaled(self, c: float) -> "MomentPolynomial":
        if c == 0:
            return MomentPolynomial()
        return MomentPolynomial(tuple(ExpTerm(c * t.coef, t.degree, t.rate) for t in self.terms))

    def convolve(self, a: float) -> "MomentPolynomial":
        """int_0^t exp(a (t - s)) P(s) ds, with a degree bump when a term's rate equals a."""
        out: list[ExpTerm] = []
        for term in self.terms:
            c, d, lam = term.coef, term.degree, term.rate
            if _resonant(lam, a):
                out.append(ExpTerm(c / (d + 1), d + 1, a))
                continue
            delta = lam - a
            last = c * (-1) ** d * math.factorial(d) / delta ** (d + 1)
            for k in range(d):
                coef = c * (-1) ** k * math.factorial(d) / math.factorial(d - k) / delta ** (k + 1)
                out.append(ExpTerm(coef, d - k, lam))
            out.append(ExpTerm(last, 0, lam))
            out.append(ExpTerm(-last, 0, a))
        return MomentPolynomial(tuple(out))


@dataclass
class MomentResult:
    p: int
    t: float
    value: float
    polynomial: MomentPolynomial

    def as_dict(self) -> dict[str, Any]:
        return {"p": self.p, "t": self.t, "value": self.value, "terms": len(self.polynomial.terms)}


def moment_coefficients(params: GouParams, p: int) -> tuple[float, float, float]:
    """(a_p, b_p, c_p) of the moment recursion."""
    a = p * params.mu_rho + p * p * params.sigma_rho ** 2 / 2.0
    b = p * params.mu_xi
    c = p * (p - 1) * params.sigma_xi ** 2 / 2.0
    return a, b, c


def first_moment_polynomial(params: GouParams, y: float) -> MomentPolynomial:
    """y e^(kappa t) + (mu_xi / kappa)(e^(kappa t) - 1), or y + mu_xi t when kappa = 0."""
    kappa = params.kappa_rho
    if _resonant(kappa, 0.0):
        return MomentPolynomial((ExpTerm(y, 0, 0.0), ExpTerm(params.mu_xi, 1, 0.0)))
    ratio = params.mu_xi / kappa
    return MomentPolynomial((ExpTerm(y, 0, kappa), ExpTerm(ratio, 0, kappa), ExpTerm(-ratio, 0, 0.0)))


def moment_polynomials(params: GouParams, y: float, p: int) -> list[MomentPolynomial]:
    """[m_0, ..., m_p] as exponential polynomials."""
    _require_diffusion(params)
    if not 0 <= p <= MAX_MOMENT_ORDER:
        raise DomainError(f"moment order must lie in [0, {MAX_MOMENT_ORDER}], got {p}")
    polys = [MomentPolynomial((ExpTerm(1.0, 0, 0.0),))]
    if p >= 1:
        polys.append(first_moment_polynomial(params, y))
    for q in range(2, p + 1):
        a, b, c = moment_coefficients(params, q)
        forcing = polys[q - 1].scaled(b) + polys[q - 2].scaled(c)
        polys.append(MomentPolynomial((ExpTerm(y ** q, 0, a),)) + forcing.convolve(a))
    return polys


def moment_recursion(params: GouParams, y: float, p: int, t: float = 1.0) -> MomentResult:
    if not 0 <= t <= 1:
        raise DomainError(f"moment time must lie in [0, 1], got {t}")
    poly = moment_polynomials(params, y, p)[p]
    return MomentResult(p=p, t=t, value=poly(t), polynomial=poly)
