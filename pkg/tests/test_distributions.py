import math

import numpy as np
import pytest

from conftest import import_required

distributions = import_required("distributions")
rng = import_required("rng")
errors = import_required("errors")


def _draws(law, n=100_000, seed=2024):
    return distributions.sample(law, rng.StreamBlock(seed, range(n)))


def _assert_mean_var(samples, mean, var):
    n = samples.size
    se_mean = math.sqrt(var / n)
    centred = samples - samples.mean()
    se_var = math.sqrt(np.mean(centred ** 4) - np.mean(centred ** 2) ** 2) / math.sqrt(n)
    assert abs(samples.mean() - mean) < 4 * se_mean
    assert abs(samples.var(ddof=1) - var) < 4 * se_var


# ---------------------------------------------------------------------------
# Closed forms
# ---------------------------------------------------------------------------


def test_pareto_moments(make_law):
    assert distributions.pareto_moments(3.0) == pytest.approx((-1.5, 0.75))
    mean, var = distributions.pareto_moments(1.5)
    assert mean == pytest.approx(-3.0)
    assert var == math.inf


def test_pareto_needs_finite_mean():
    with pytest.raises(errors.DomainError):
        distributions.NegPareto(1.0)


def test_c_alpha_at_three_halves():
    assert distributions.stable_constant_c_alpha(1.5) == pytest.approx(math.sqrt(2 * math.pi), rel=1e-12)
    with pytest.raises(errors.DomainError):
        distributions.stable_constant_c_alpha(2.0)


def test_nig_moments_and_cumulants():
    alpha, beta, delta, mu = 3.0, 0.5, 0.3, 0.1
    lam = math.sqrt(alpha ** 2 - beta ** 2)
    mean, var = distributions.nig_moments(alpha, beta, delta, mu)
    assert mean == pytest.approx(mu + delta * beta / lam)
    assert var == pytest.approx(delta * alpha ** 2 / lam ** 3)
    assert distributions.nig_cumulant(1, alpha, beta, delta, mu) == pytest.approx(mean, rel=1e-12)
    assert distributions.nig_cumulant(2, alpha, beta, delta, mu) == pytest.approx(var, rel=1e-12)
    assert distributions.nig_cumulant(3, alpha, beta, delta, mu) == pytest.approx(
        3 * delta * alpha ** 2 * beta / lam ** 5, rel=1e-12
    )
    assert distributions.nig_cumulant(4, alpha, beta, delta, mu) == pytest.approx(
        3 * delta * alpha ** 2 * (alpha ** 2 + 4 * beta ** 2) / lam ** 7, rel=1e-12
    )


def test_nig_mgf_matches_cumulant_expansion():
    alpha, beta, delta, mu = 2.0, -0.4, 0.7, 0.05
    u = 1e-3
    k = [distributions.nig_cumulant(j, alpha, beta, delta, mu) for j in range(1, 5)]
    series = sum(k[j - 1] * u ** j / math.factorial(j) for j in range(1, 5))
    assert distributions.nig_log_mgf(u, alpha, beta, delta, mu) == pytest.approx(series, rel=1e-9)


def test_nig_domain_rule_is_named():
    with pytest.raises(errors.DomainError, match=r"\|beta\| < alpha"):
        distributions.NIG(alpha=1.0, beta=1.0, delta=1.0, mu=0.0)
    with pytest.raises(errors.DomainError):
        distributions.nig_log_mgf(2.5, 3.0, 0.5, 0.3, 0.0)


def test_central_from_cumulants_normal():
    cumulants = [0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0]
    assert distributions.central_from_cumulants(cumulants, 4) == pytest.approx(3 * 4.0)
    assert distributions.central_from_cumulants(cumulants, 6) == pytest.approx(15 * 8.0)


# ---------------------------------------------------------------------------
# Moments and classification
# ---------------------------------------------------------------------------


def test_central_moment_undefined_is_none(make_law):
    law = make_law("negpareto", alpha=1.5)
    assert distributions.central_moment(law, 1) == pytest.approx(0.0, abs=1e-12)
    assert distributions.central_moment(law, 2) is None
    with pytest.raises(errors.UndefinedMomentError):
        distributions.require_central_moment(law, 2)


def test_central_moment_order_range(make_law):
    law = make_law("normal", mu=0.0, sigma2=1.0)
    assert distributions.central_moment(law, 0) == 1.0
    assert distributions.central_moment(law, 8) == pytest.approx(105.0)
    with pytest.raises(errors.DomainError):
        distributions.central_moment(law, 9)


def test_negpareto_second_central_moment_is_variance(make_law):
    law = make_law("negpareto", alpha=5.0)
    assert distributions.central_moment(law, 2) == pytest.approx(law.variance(), rel=1e-12)
    # Z = -P has negative skew.
    assert distributions.central_moment(law, 3) < 0


def test_nig_central_moment_from_cumulants(make_law):
    law = make_law("nig", "logreturn", alpha=3.0, beta=0.5, delta=0.3, mu=0.0)
    k2 = law.family.cumulant(2)
    k4 = law.family.cumulant(4)
    assert distributions.central_moment(law, 4) == pytest.approx(k4 + 3 * k2 ** 2, rel=1e-12)


def test_classification(make_law):
    heavy = distributions.classify(make_law("negpareto", alpha=1.5))
    assert isinstance(heavy, distributions.HeavyAlpha)
    assert (heavy.alpha, heavy.k1, heavy.k2) == (1.5, 1.0, 0.0)
    assert isinstance(distributions.classify(make_law("negpareto", alpha=3.0)), distributions.SquareIntegrable)
    assert isinstance(distributions.classify(make_law("negpareto", alpha=2.0)), distributions.NonConforming)
    stable = distributions.classify(make_law("stable", alpha=1.7, beta=0.2))
    assert stable.k1 == pytest.approx(0.4)
    assert stable.k2 == pytest.approx(0.6)
    assert isinstance(distributions.classify(make_law("degenerate", value=1.0)), distributions.NonConforming)


def test_mgf_support(make_law):
    assert make_law("normal", mu=0.1, sigma2=0.2).mgf(2.0) == pytest.approx(math.exp(0.2 + 0.4))
    with pytest.raises(errors.UnsupportedFamilyError):
        make_law("stable", alpha=1.5, beta=0.0).log_mgf(1.0)
    with pytest.raises(errors.UnsupportedFamilyError):
        make_law("negpareto", alpha=3.0).log_mgf(-1.0)


# ---------------------------------------------------------------------------
# Samplers
# ---------------------------------------------------------------------------


def test_normal_sampler_moments(make_law):
    _assert_mean_var(_draws(make_law("normal", mu=0.3, sigma2=0.5)), 0.3, 0.5)


def test_nig_sampler_moments(make_law):
    law = make_law("nig", "logreturn", alpha=3.0, beta=0.5, delta=0.3, mu=0.1)
    _assert_mean_var(_draws(law), law.mean(), law.variance())


def test_negpareto_sampler_mean(make_law):
    law = make_law("negpareto", alpha=3.0)
    samples = _draws(law)
    se = samples.std(ddof=1) / math.sqrt(samples.size)
    assert abs(samples.mean() - (-1.5)) < 3 * se
    assert samples.max() <= -1.0


@pytest.mark.parametrize("alpha", [1.5, 3.0])
def test_negpareto_tail_exponent(make_law, alpha):
    losses = -_draws(make_law("negpareto", alpha=alpha), seed=99)
    k = 2000
    top = np.sort(losses)[-(k + 1):]
    hill = 1.0 / np.mean(np.log(top[1:] / top[0]))
    assert abs(hill - alpha) < 4 * alpha / math.sqrt(k)


@pytest.mark.parametrize("beta", [1.0, -0.5])
def test_stable_empirical_characteristic_function(make_law, beta):
    law = make_law("stable", "logreturn", alpha=1.5, beta=beta)
    x = _draws(law, seed=7)
    for u in (0.5, 1.0, 2.0):
        expected = law.family.characteristic(u)
        re, im = np.cos(u * x), np.sin(u * x)
        se_re = re.std(ddof=1) / math.sqrt(x.size)
        se_im = im.std(ddof=1) / math.sqrt(x.size)
        assert abs(re.mean() - expected.real) < 4 * se_re
        assert abs(im.mean() - expected.imag) < 4 * se_im


def test_stable_dispersion_scales_draws(make_law):
    unit = _draws(make_law("stable", alpha=1.5, beta=0.0), n=1000)
    wide = _draws(make_law("stable", alpha=1.5, beta=0.0, c=8.0), n=1000)
    assert np.allclose(wide, unit * 8.0 ** (1 / 1.5))


def test_degenerate_draws_constant(make_law):
    assert np.all(_draws(make_law("degenerate", value=0.25), n=10) == 0.25)


def test_scalar_stream_returns_float(make_law):
    value = distributions.sample(make_law("normal", mu=0.0, sigma2=1.0), rng.Stream(1, 0))
    assert isinstance(value, float)
