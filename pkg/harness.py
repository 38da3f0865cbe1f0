"""Convergence experiments: discrete scheme at n in a grid against the limit.

Each experiment returns a `ConvergenceReport`; rows carry the seed they were
drawn with and the error column is |estimate - limit|.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
from scipy import stats

import discrete
import gou
import limits
from discrete import Functional
from distributions import StepLaw, require_central_moment
from errors import ConditionFailure, DomainError, UndefinedMomentError
from rescale import RescaledScheme, check_condition_15, check_condition_9

logger = logging.getLogger(__name__)

PASS = "PASS"
FAIL = "FAIL"
EXPERIMENTS = ("marginal", "ruin", "penalty", "moments")
GOU_NAMESPACE = 1 << 23
KS_CRITICAL = 1.63  # two-sample KS critical coefficient at the 1% level
BARRIER_PSI = 1e-4
MOMENT_TOL = 1e-3
POINT_MASS_TOL = 1e-12
BOUNDARY_PENALTY = 0.9


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------


def ks_distance(
    sample: Sequence[float] | np.ndarray,
    other: Sequence[float] | np.ndarray | None = None,
    cdf: Callable[[np.ndarray], np.ndarray] | None = None,
) -> float:
    """Sup distance between empirical CDFs, or between one empirical CDF and `cdf`."""
    a = np.asarray(sample, dtype=float)
    if a.size == 0:
        raise DomainError("KS distance needs a nonempty sample")
    if other is not None:
        b = np.asarray(other, dtype=float)
        if b.size == 0:
            raise DomainError("KS distance needs a nonempty sample")
        return float(stats.ks_2samp(a, b).statistic)
    if cdf is None:
        raise DomainError("pass a second sample or a reference cdf")
    return float(stats.kstest(a, cdf).statistic)


def ks_floor(n_a: int, n_b: int) -> float:
    """KS value below which two samples of these sizes are indistinguishable at 1%."""
    return KS_CRITICAL * math.sqrt((n_a + n_b) / (n_a * n_b))


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

CSV_COLUMNS = ("n", "estimate", "stderr", "limit", "error", "seed")


@dataclass
class ReportRow:
    n: int
    estimate: float
    stderr: float | None
    limit: float
    error: float
    seed: int


@dataclass
class ConvergenceReport:
    experiment: str
    rows: list[ReportRow]
    limit_method: str
    verdict: str
    seed: int
    config_hash: str = ""
    version: str = ""
    tolerances: dict[str, Any] = field(default_factory=dict)
    details: dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict == PASS

    def as_dict(self) -> dict[str, Any]:
        return {
            "experiment": self.experiment,
            "verdict": self.verdict,
            "limit_method": self.limit_method,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "version": self.version,
            "tolerances": self.tolerances,
            "details": self.details,
            "rows": [asdict(row) for row in self.rows],
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True, indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in self.rows:
            writer.writerow([
                row.n,
                repr(row.estimate),
                "" if row.stderr is None else repr(row.stderr),
                repr(row.limit),
                repr(row.error),
                row.seed,
            ])
        return buf.getvalue()


def parse_report_csv(text: str) -> list[ReportRow]:
    rows = []
    for record in csv.DictReader(io.StringIO(text)):
        rows.append(ReportRow(
            n=int(record["n"]),
            estimate=float(record["estimate"]),
            stderr=None if record["stderr"] == "" else float(record["stderr"]),
            limit=float(record["limit"]),
            error=float(record["error"]),
            seed=int(record["seed"]),
        ))
    return rows


def write_plot(report: ConvergenceReport, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "ruin-lab"
    ns = [row.n for row in report.rows]
    errors = [row.error for row in report.rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(ns, errors, marker="o")
    ax.set_xscale("log")
    if all(e > 0 for e in errors):
        ax.set_yscale("log")
    ax.set_xlabel("n")
    ax.set_ylabel("error")
    ax.set_title(f"{report.experiment}: {report.verdict}")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def write_report(report: ConvergenceReport, out_dir: Path) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "csv": out_dir / "report.csv",
        "json": out_dir / "report.json",
        "svg": out_dir / "report.svg",
    }
    paths["csv"].write_text(report.to_csv())
    paths["json"].write_text(report.to_json() + "\n")
    write_plot(report, paths["svg"])
    return paths


# ---------------------------------------------------------------------------
# Experiment settings
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentSettings:
    loss: StepLaw
    ret: StepLaw
    y0: float = 1.0
    T: float = 1.0
    h: float = 1e-3
    alpha: float = 0.5
    p: int = 2
    paths: int = 10_000
    seed: int = 42
    n_grid: tuple[int, ...] = (8, 32, 128, 512)
    n_max: int = 200
    scheme: str = gou.EULER_SDE
    workers: int = 1
    mode: str = "finite"
    slack: float | None = None
    ks_final: float = 0.05
    horizon_allowance: float = 0.02
    grid_allowance: float = 0.01
    barrier: float | None = None
    params: gou.GouParams | None = None
    config_hash: str = ""
    version: str = ""

    def scheme_at(self, n: int) -> RescaledScheme:
        return RescaledScheme(n, self.loss, self.ret)

    def limit_params(self) -> gou.GouParams:
        if self.params is not None:
            return self.params
        return gou.limit_params(self.scheme_at(1))

    def report(self, experiment: str, rows: list[ReportRow], method: str, verdict: bool, **extra: Any) -> ConvergenceReport:
        return ConvergenceReport(
            experiment=experiment,
            rows=rows,
            limit_method=method,
            verdict=PASS if verdict else FAIL,
            seed=self.seed,
            config_hash=self.config_hash,
            version=self.version,
            tolerances=extra.pop("tolerances", {}),
            details=extra,
        )


def _diffusion_params(settings: ExperimentSettings, experiment: str) -> gou.GouParams:
    params = settings.limit_params()
    if not params.is_diffusion:
        raise DomainError(f"the {experiment} experiment needs square-integrable losses and log-returns")
    return params


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


def run_marginal_convergence(settings: ExperimentSettings) -> ConvergenceReport:
    """KS distance between theta_n(1) and Y_1 across the n grid."""
    params = settings.limit_params()
    slack = settings.slack if settings.slack is not None else (0.2 if params.is_diffusion else 0.3)
    terminal = Functional(discrete.TERMINAL, T=1.0)
    if not params.has_noise:
        value = limits.first_moment_polynomial(params, settings.y0)(1.0)
        reference = np.full(settings.paths, value)
        method = "closed-form"
    else:
        scheme = gou.default_scheme(params, settings.scheme)
        reference = gou.sample_functional(
            params, terminal, settings.y0, settings.h, settings.paths, settings.seed,
            scheme=scheme, namespace=GOU_NAMESPACE, workers=settings.workers,
        )
        method = "fine-MC"
    rows = []
    for n in settings.n_grid:
        samples = discrete.sample_functional(
            settings.scheme_at(n), terminal, settings.y0, settings.paths, settings.seed,
            namespace=n, workers=settings.workers,
        )
        if method == "closed-form" and np.allclose(samples, reference, rtol=POINT_MASS_TOL, atol=POINT_MASS_TOL):
            # Summation rounding would put every draw on the wrong side of the atom.
            ks = 0.0
        else:
            ks = ks_distance(samples, reference)
        logger.info("marginal n=%d: KS=%.4f", n, ks)
        rows.append(ReportRow(n=n, estimate=ks, stderr=None, limit=0.0, error=ks, seed=settings.seed))
    floor = ks_floor(settings.paths, settings.paths) if method == "fine-MC" else 0.0
    ks_values = [row.error for row in rows]
    trend_ok = all(b <= (1.0 + slack) * max(a, floor) for a, b in zip(ks_values, ks_values[1:]))
    final_ok = ks_values[-1] < settings.ks_final
    return settings.report(
        "marginal", rows, method, trend_ok and final_ok,
        tolerances={"slack": slack, "ks_floor": floor, "ks_final": settings.ks_final},
        trend_ok=trend_ok,
        final_ok=final_ok,
        gou=params.as_dict(),
    )


def survival_barrier(params: gou.GouParams, y: float, target: float = BARRIER_PSI) -> float:
    """Smallest doubling of max(y, 1) whose limit ultimate ruin probability is below `target`."""
    level = max(y, 1.0)
    for _ in range(60):
        if limits.ultimate_ruin(params, level).value < target:
            return level
        level *= 2.0
    raise DomainError("no survival barrier found; ultimate ruin stays above the target")


def run_ruin_convergence(settings: ExperimentSettings) -> ConvergenceReport:
    if settings.mode == "ultimate":
        return _run_ultimate_ruin(settings)
    if settings.mode != "finite":
        raise DomainError(f"ruin mode must be 'finite' or 'ultimate', got {settings.mode!r}")
    params = settings.limit_params()
    functional = Functional(discrete.RUIN_PROB, T=settings.T)
    reference = gou.estimate(
        params, functional, settings.y0, settings.h, settings.paths, settings.seed,
        scheme=gou.default_scheme(params, settings.scheme), namespace=GOU_NAMESPACE, workers=settings.workers,
    )
    rows = []
    for n in settings.n_grid:
        est = discrete.estimate(settings.scheme_at(n), functional, settings.y0, settings.paths, settings.seed, n, settings.workers)
        rows.append(ReportRow(n, est.mean, est.stderr, reference.mean, abs(est.mean - reference.mean), settings.seed))
    last = rows[-1]
    tol = 3.0 * math.hypot(last.stderr, reference.stderr) + settings.grid_allowance
    return settings.report(
        "ruin", rows, "fine-MC", last.error < tol,
        tolerances={"grid_allowance": settings.grid_allowance, "final_tolerance": tol},
        mode="finite",
        T=settings.T,
        limit_stderr=reference.stderr,
        gou=params.as_dict(),
    )


def _run_ultimate_ruin(settings: ExperimentSettings) -> ConvergenceReport:
    params = _diffusion_params(settings, "ultimate ruin")
    condition = None
    barrier = settings.barrier
    if params.mu_rho > 0:
        condition = check_condition_9(settings.ret, settings.n_max)
        if not condition.satisfied:
            raise ConditionFailure(
                f"condition on E[exp(-2 gamma_n)]^n fails for {settings.ret.name} log-returns "
                f"(C={condition.C:.6g}, limit={condition.limit:.6g}); ultimate ruin experiment refused",
                table=condition.table,
                diagnostics=condition.as_dict(),
            )
    limit = limits.ultimate_ruin(params, settings.y0)
    if barrier is None and limit.value < 1.0 and params.mu_rho > 0 and params.mu_xi > 0:
        barrier = survival_barrier(params, settings.y0)
    functional = Functional(discrete.RUIN_PROB, T=settings.T, barrier=barrier)
    rows = []
    for n in settings.n_grid:
        est = discrete.estimate(settings.scheme_at(n), functional, settings.y0, settings.paths, settings.seed, n, settings.workers)
        rows.append(ReportRow(n, est.mean, est.stderr, limit.value, abs(est.mean - limit.value), settings.seed))
    last = rows[-1]
    tol = 3.0 * last.stderr + settings.horizon_allowance
    barrier_bias = limits.ultimate_ruin(params, barrier).value if barrier is not None else 0.0
    return settings.report(
        "ruin", rows, "closed-form", last.error < tol,
        tolerances={"horizon_allowance": settings.horizon_allowance, "final_tolerance": tol},
        mode="ultimate",
        T=settings.T,
        barrier=barrier,
        barrier_bias_bound=barrier_bias,
        condition_9=None if condition is None else {k: v for k, v in condition.as_dict().items() if k != "table"},
        quadrature=limit.as_dict(),
        gou=params.as_dict(),
    )


def penalty_horizon(alpha: float, target: float = 1e-4) -> float:
    """Whole-number horizon with exp(-alpha T) below `target`."""
    return float(math.ceil(math.log(1.0 / target) / alpha))


def run_penalty_convergence(settings: ExperimentSettings) -> ConvergenceReport:
    params = _diffusion_params(settings, "penalty")
    if params.mu_rho > 0:
        raise ConditionFailure(
            f"penalty experiment needs mu_rho <= 0 for a unique decaying solution, got {params.mu_rho}",
            diagnostics={"mu_rho": params.mu_rho},
        )
    solution = limits.solve_penalty_ode(params, settings.alpha, y=settings.y0)
    limit = solution.value(settings.y0)
    horizon = penalty_horizon(settings.alpha)
    truncation = math.exp(-settings.alpha * horizon)
    functional = Functional(discrete.PENALTY, T=horizon, alpha=settings.alpha)
    rows = []
    for n in settings.n_grid:
        est = discrete.estimate(settings.scheme_at(n), functional, settings.y0, settings.paths, settings.seed, n, settings.workers)
        rows.append(ReportRow(n, est.mean, est.stderr, limit, abs(est.mean - limit), settings.seed))
    last = rows[-1]
    tol = 3.0 * last.stderr + truncation + settings.grid_allowance
    tolerances = {"truncation_bound": truncation, "grid_allowance": settings.grid_allowance, "final_tolerance": tol}
    if settings.y0 == 0.0:
        # The limit is 1 at zero capital; theta_n only approaches it as n grows.
        passed = last.estimate > BOUNDARY_PENALTY
        tolerances["boundary_threshold"] = BOUNDARY_PENALTY
    else:
        passed = last.error < tol
    return settings.report(
        "penalty", rows, "ODE", passed,
        tolerances=tolerances,
        horizon=horizon,
        ode=solution.diagnostics(),
        gou=params.as_dict(),
    )


def run_moment_convergence(settings: ExperimentSettings) -> ConvergenceReport:
    """Exact discrete moments against m_p(1); no Monte Carlo noise."""
    params = _diffusion_params(settings, "moment")
    p = settings.p
    q = p + 1
    condition = None
    # m_0 is identically 1; no moment condition applies.
    if p > 0:
        condition = check_condition_15(settings.ret, q, settings.n_max)
        if not condition.bounded:
            raise ConditionFailure(
                f"exponential moments of order {q} are unbounded for {settings.ret.name} log-returns",
                table=condition.table,
                diagnostics=condition.as_dict(),
            )
        try:
            require_central_moment(settings.loss, q)
        except UndefinedMomentError as exc:
            raise ConditionFailure(f"losses need a finite moment of order {q}: {exc}") from exc
    target = limits.moment_recursion(params, settings.y0, p, 1.0).value
    rows = []
    for n in settings.n_grid:
        value = discrete.exact_moment(settings.scheme_at(n), settings.y0, p)
        rows.append(ReportRow(n, value, None, target, abs(value - target), settings.seed))
    errors = [row.error for row in rows]
    decreasing = all(b < a or (a == 0.0 and b == 0.0) for a, b in zip(errors, errors[1:]))
    final_ok = errors[-1] < MOMENT_TOL * (1.0 + abs(target))
    return settings.report(
        "moments", rows, "closed-form", decreasing and final_ok,
        tolerances={"relative_tolerance": MOMENT_TOL},
        p=p,
        decreasing=decreasing,
        condition_15=None if condition is None else {k: v for k, v in condition.as_dict().items() if k != "table"},
        gou=params.as_dict(),
    )


RUNNERS: dict[str, Callable[[ExperimentSettings], ConvergenceReport]] = {
    "marginal": run_marginal_convergence,
    "ruin": run_ruin_convergence,
    "penalty": run_penalty_convergence,
    "moments": run_moment_convergence,
}


def run_experiment(name: str, settings: ExperimentSettings) -> ConvergenceReport:
    if name not in RUNNERS:
        raise DomainError(f"experiment must be one of {EXPERIMENTS}, got {name!r}")
    return RUNNERS[name](settings)


# ---------------------------------------------------------------------------
# Condition tables
# ---------------------------------------------------------------------------


def conditions_table(ret: StepLaw, q: float = 3.0, n_max: int = 200) -> tuple[list[dict[str, Any]], dict[str, Any]]:
    """Rows (n, a_n, b_n, verdict) plus a summary of both exponential-moment conditions."""
    cond9 = check_condition_9(ret, n_max)
    cond15 = check_condition_15(ret, q, n_max)
    rows = []
    for r9, r15 in zip(cond9.table, cond15.table):
        a_n, b_n = r9["value"], r15["value"]
        verdict = "ok" if (a_n is not None and a_n < 1.0) else "fail"
        rows.append({"n": r9["n"], "a_n": a_n, "b_n": b_n, "verdict": verdict})
    summary = {
        "condition_9": {k: v for k, v in cond9.as_dict().items() if k != "table"},
        "condition_15": {k: v for k, v in cond15.as_dict().items() if k != "table"},
    }
    return rows, summary


def conditions_csv(rows: list[dict[str, Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("n", "a_n", "b_n", "verdict"))
    for row in rows:
        writer.writerow([
            row["n"],
            "" if row["a_n"] is None else repr(row["a_n"]),
            "" if row["b_n"] is None else repr(row["b_n"]),
            row["verdict"],
        ])
    return buf.getvalue()
