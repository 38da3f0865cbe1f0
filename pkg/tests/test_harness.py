import json
import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from conftest import _law, import_required

harness = import_required("harness")
config = import_required("config")
gou = import_required("gou")
limits = import_required("limits")
errors = import_required("errors")


def _settings(loss, ret, **overrides):
    return replace(harness.ExperimentSettings(loss=loss, ret=ret), **overrides)


def _preset_settings(name, **overrides):
    return replace(config.preset(name).settings(), **overrides)


# ---------------------------------------------------------------------------
# Statistics and reports
# ---------------------------------------------------------------------------


def test_ks_distance_two_samples_and_cdf():
    gen = np.random.default_rng(3)
    a = gen.normal(size=4000)
    assert harness.ks_distance(a, a) == 0.0
    assert harness.ks_distance(a, cdf=stats.norm.cdf) < harness.ks_floor(4000, 4000)
    assert harness.ks_distance(a, a + 10.0) == 1.0
    with pytest.raises(errors.DomainError):
        harness.ks_distance([])
    with pytest.raises(errors.DomainError):
        harness.ks_distance(a)


def test_ks_floor_at_one_percent():
    assert harness.ks_floor(10_000, 10_000) == pytest.approx(1.63 * math.sqrt(2e-4))


def _toy_report():
    rows = [
        harness.ReportRow(n=8, estimate=0.125, stderr=0.01, limit=0.1, error=0.025, seed=7),
        harness.ReportRow(n=32, estimate=1 / 3, stderr=None, limit=0.1, error=1 / 3 - 0.1, seed=7),
    ]
    return harness.ConvergenceReport("ruin", rows, "fine-MC", harness.PASS, seed=7, config_hash="abc", version="x")


def test_report_csv_round_trip():
    report = _toy_report()
    text = report.to_csv()
    assert text.splitlines()[0] == "n,estimate,stderr,limit,error,seed"
    assert harness.parse_report_csv(text) == report.rows


def test_report_json_is_sorted_and_complete():
    data = json.loads(_toy_report().to_json())
    assert data["verdict"] == "PASS"
    assert data["rows"][1]["stderr"] is None
    assert list(data) == sorted(data)


def test_write_report_outputs_are_reproducible(tmp_path):
    report = _toy_report()
    first = harness.write_report(report, tmp_path / "a")
    second = harness.write_report(report, tmp_path / "b")
    for kind in ("csv", "json", "svg"):
        assert first[kind].read_bytes() == second[kind].read_bytes()
    assert first["svg"].read_text().lstrip().startswith("<?xml")


# ---------------------------------------------------------------------------
# Marginal experiment
# ---------------------------------------------------------------------------


def test_noise_free_marginal_has_zero_distance():
    settings = _settings(
        _law("degenerate", value=0.0),
        _law("degenerate", "logreturn", value=0.0),
        paths=200,
        n_grid=(2, 8),
    )
    report = harness.run_marginal_convergence(settings)
    assert report.limit_method == "closed-form"
    assert [row.error for row in report.rows] == [0.0, 0.0]
    assert report.passed


def test_degenerate_steps_land_on_the_limit_atom():
    settings = _settings(
        _law("degenerate", value=0.1),
        _law("degenerate", "logreturn", value=0.0),
        paths=200,
    )
    report = harness.run_marginal_convergence(settings)
    assert [row.n for row in report.rows] == [8, 32, 128, 512]
    assert [row.error for row in report.rows] == [0.0, 0.0, 0.0, 0.0]
    assert report.passed


def test_marginal_reports_are_deterministic():
    settings = _preset_settings("normal-moments", paths=400, h=1e-2, n_grid=(4, 16))
    first = harness.run_marginal_convergence(settings)
    second = harness.run_marginal_convergence(replace(settings, workers=2))
    assert first.to_csv() == second.to_csv()
    assert first.limit_method == "fine-MC"
    assert all(row.seed == settings.seed for row in first.rows)


# ---------------------------------------------------------------------------
# Ruin experiment
# ---------------------------------------------------------------------------


def test_finite_ruin_rows_carry_reference():
    settings = _preset_settings("normal-moments", paths=500, h=1e-2, n_grid=(4, 16), y0=0.5)
    report = harness.run_ruin_convergence(settings)
    assert report.details["mode"] == "finite"
    assert len({row.limit for row in report.rows}) == 1
    for row in report.rows:
        assert row.error == pytest.approx(abs(row.estimate - row.limit))
    assert report.tolerances["grid_allowance"] == settings.grid_allowance


def test_ultimate_ruin_refused_when_condition_fails():
    settings = _settings(
        _law("normal", mu=1.0, sigma2=1.0),
        _law("normal", "logreturn", mu=0.01, sigma2=0.02),
        mode="ultimate",
        n_max=50,
    )
    with pytest.raises(errors.ConditionFailure) as info:
        harness.run_ruin_convergence(settings)
    assert len(info.value.table) == 50
    assert info.value.exit_code == 2
    assert info.value.diagnostics["satisfied"] is False


def test_survival_barrier_doubles_until_ruin_is_rare():
    params = gou.GouParams(1.0, 1.0, 0.3, 0.5)
    barrier = harness.survival_barrier(params, 2.0)
    assert limits.ultimate_ruin(params, barrier).value < harness.BARRIER_PSI
    assert limits.ultimate_ruin(params, barrier / 2).value >= harness.BARRIER_PSI


def test_unknown_ruin_mode():
    settings = _preset_settings("normal-moments", mode="eventually")
    with pytest.raises(errors.DomainError):
        harness.run_ruin_convergence(settings)


# ---------------------------------------------------------------------------
# Penalty and moments
# ---------------------------------------------------------------------------


def test_penalty_horizon():
    assert harness.penalty_horizon(0.5) == 19.0
    assert math.exp(-0.5 * harness.penalty_horizon(0.5)) < 1e-4


def test_penalty_refused_for_growing_returns():
    settings = _settings(_law("normal", mu=1.0, sigma2=1.0), _law("normal", "logreturn", mu=0.05, sigma2=0.09))
    with pytest.raises(errors.ConditionFailure):
        harness.run_penalty_convergence(settings)


def test_moment_experiment_passes_on_normal_laws():
    report = harness.run_moment_convergence(_preset_settings("normal-moments"))
    assert report.passed
    assert report.rows[-1].limit == pytest.approx(2.87676318702, rel=1e-9)
    assert report.rows[-1].estimate == pytest.approx(2.87654547235, rel=1e-9)
    assert report.details["decreasing"]
    assert all(row.stderr is None for row in report.rows)


def test_zeroth_moment_is_one_for_every_n():
    report = harness.run_moment_convergence(_preset_settings("normal-moments", p=0))
    assert [row.estimate for row in report.rows] == [1.0, 1.0, 1.0, 1.0]
    assert [row.error for row in report.rows] == [0.0, 0.0, 0.0, 0.0]
    assert report.details["condition_15"] is None
    assert report.passed


@pytest.mark.parametrize("p, expected", [(1, 1.59042376164), (3, 5.74064126429)])
def test_moment_experiment_with_nig_returns(p, expected):
    # Symmetric NIG with the mean and variance of the normal-moments returns.
    settings = _settings(
        _law("normal", mu=0.5, sigma2=0.25),
        _law("nig", "logreturn", alpha=10.0, beta=0.0, delta=0.4, mu=0.05),
        p=p,
    )
    report = harness.run_moment_convergence(settings)
    assert report.rows[-1].limit == pytest.approx(expected, rel=1e-9)
    assert report.details["decreasing"]
    assert report.passed, report.to_json()


def test_moment_experiment_needs_loss_moments():
    settings = _settings(_law("negpareto", alpha=2.5), _law("normal", "logreturn", mu=0.05, sigma2=0.04), p=2)
    with pytest.raises(errors.ConditionFailure):
        harness.run_moment_convergence(settings)


def test_experiments_need_diffusion_limits():
    settings = config.preset("example1").settings()
    with pytest.raises(errors.DomainError):
        harness.run_moment_convergence(settings)


def test_unknown_experiment():
    with pytest.raises(errors.DomainError):
        harness.run_experiment("variance", _preset_settings("normal-moments"))


# ---------------------------------------------------------------------------
# Condition tables
# ---------------------------------------------------------------------------


def test_conditions_table_and_csv():
    rows, summary = harness.conditions_table(_law("normal", "logreturn", mu=0.05, sigma2=0.02), q=3, n_max=10)
    assert [row["n"] for row in rows] == list(range(1, 11))
    assert all(row["verdict"] == "ok" for row in rows)
    assert summary["condition_9"]["satisfied"]
    assert summary["condition_15"]["bounded"]
    text = harness.conditions_csv(rows)
    assert text.splitlines()[0] == "n,a_n,b_n,verdict"
    assert len(text.splitlines()) == 11


# ---------------------------------------------------------------------------
# Acceptance runs
# ---------------------------------------------------------------------------


@pytest.mark.slow
def test_marginal_convergence_square_integrable():
    report = harness.run_marginal_convergence(_preset_settings("example2", paths=10_000))
    assert report.passed, report.to_json()


@pytest.mark.slow
def test_marginal_convergence_stable():
    report = harness.run_marginal_convergence(_preset_settings("example1", paths=10_000))
    assert report.tolerances["slack"] == 0.3
    assert report.passed, report.to_json()


@pytest.mark.slow
def test_ultimate_ruin_convergence():
    report = harness.run_ruin_convergence(_preset_settings("example3", paths=100_000))
    assert report.rows[-1].n == 512
    assert report.rows[-1].limit == pytest.approx(0.01904455935, rel=1e-6)
    assert report.details["barrier"] is not None
    assert report.passed, report.to_json()


@pytest.mark.slow
def test_ultimate_ruin_is_near_certain_when_returns_shrink():
    settings = _settings(
        _law("normal", mu=0.2, sigma2=1.0),
        _law("normal", "logreturn", mu=-0.2, sigma2=0.04),
        mode="ultimate",
        T=200.0,
        paths=10_000,
        n_grid=(512,),
    )
    report = harness.run_ruin_convergence(settings)
    assert report.rows[0].limit == 1.0
    assert report.rows[0].estimate > 0.99
    assert report.details["barrier"] is None
    assert report.details["condition_9"] is None
    assert report.passed


@pytest.mark.slow
def test_penalty_convergence():
    report = harness.run_penalty_convergence(_preset_settings("penalty-baseline", n_grid=(32, 128, 512)))
    assert report.rows[-1].limit == pytest.approx(0.1049425364, rel=1e-6)
    assert report.passed, report.to_json()


@pytest.mark.slow
def test_fine_gou_penalty_matches_ode():
    params = gou.GouParams(1.0, 1.0, -0.05, 0.3)
    discrete = import_required("discrete")
    functional = discrete.Functional(discrete.PENALTY, T=19.0, alpha=0.5)
    mc = gou.estimate(params, functional, 1.0, 1e-3, 10_000, seed=42)
    ode = limits.discounted_penalty(params, 0.5, 1.0).value
    assert abs(mc.mean - ode) < 3 * mc.stderr + 0.01 + math.exp(-9.5)


@pytest.mark.slow
def test_heavy_discounting_kills_the_penalty():
    report = harness.run_penalty_convergence(_preset_settings("penalty-baseline", alpha=20.0, n_grid=(512,)))
    assert report.details["horizon"] == 1.0
    assert report.rows[-1].limit < 0.01
    assert report.rows[-1].estimate < 0.01
    assert report.passed, report.to_json()


@pytest.mark.slow
def test_zero_capital_penalty_approaches_one():
    report = harness.run_penalty_convergence(
        _preset_settings("penalty-baseline", y0=0.0, paths=20_000, n_grid=(32, 512))
    )
    assert report.rows[-1].limit == pytest.approx(1.0)
    assert report.rows[-1].estimate > 0.9
    assert report.tolerances["boundary_threshold"] == harness.BOUNDARY_PENALTY
    assert report.passed, report.to_json()
