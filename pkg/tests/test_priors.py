import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from dilution_design import priors as P
from dilution_design.errors import (DivergenceError, InvalidArgumentError, InvalidPriorError,
                                    QuadratureError)
from dilution_design.priors import QuadratureConfig

from _oracles import gamma_expect, uniform_expect

ALL_PRIORS = [P.PointMass(20.0), P.Uniform(120.0), P.Uniform(20.0, 5.0), P.Gamma(50.0),
              P.Gamma(5.0, 2.0), P.Gamma(0.5), P.TwoPoint(25.0, 150.0, 0.05)]


def test_expect_examples():
    assert P.expect(P.Uniform(3.0), lambda lam: lam) == pytest.approx(2.0, abs=1e-12)
    assert P.expect(P.Gamma(5.0), lambda lam: math.exp(0.02 * lam)) == pytest.approx(
        0.98 ** -5, rel=1e-10)
    assert P.expect(P.PointMass(20.0), lambda lam: lam ** 2 + 1) == 401.0


def test_density_examples():
    assert P.density(P.Uniform(201.0), 50.0) == pytest.approx(0.005)
    assert P.density(P.Gamma(1.0), 2.0) == pytest.approx(math.exp(-2), rel=1e-14)
    assert P.density(P.Gamma(2.0), 1.0) == pytest.approx(math.exp(-1), rel=1e-14)
    assert P.density(P.Uniform(201.0), 202.0) == 0.0


@pytest.mark.parametrize("prior", [P.PointMass(3.0), P.TwoPoint(1, 2, 0.5)])
def test_density_rejects_discrete(prior):
    with pytest.raises(InvalidPriorError):
        P.density(prior, 1.0)


@pytest.mark.parametrize("prior", ALL_PRIORS, ids=repr)
def test_expect_constant_and_linearity(prior):
    assert P.expect(prior, lambda lam: 3.5) == pytest.approx(3.5, abs=1e-9)
    f = lambda lam: math.sqrt(lam)
    g = lambda lam: math.log(lam)
    lhs = P.expect(prior, lambda lam: 2 * f(lam) - 3 * g(lam))
    rhs = 2 * P.expect(prior, f) - 3 * P.expect(prior, g)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)


@pytest.mark.parametrize("u", [3.0, 20.0, 120.0])
def test_uniform_expect_against_trapezoid(u):
    f = lambda lam: math.sin(lam / 7.0) + 1.0 / (1.0 + lam)
    lam = np.linspace(1.0, u, 100_001)
    trap = np.trapezoid(np.sin(lam / 7.0) + 1.0 / (1.0 + lam), lam) / (u - 1.0)
    assert P.expect(P.Uniform(u), f) == pytest.approx(trap, abs=1e-8)


@pytest.mark.parametrize("alpha, beta", [(0.5, 1.0), (5.0, 1.0), (50.0, 1.0), (30.0, 2.5)])
@pytest.mark.parametrize("k", [0, 1, 2, 3])
def test_gamma_moments(alpha, beta, k):
    exact = math.exp(special.gammaln(alpha + k) - special.gammaln(alpha)) / beta ** k
    prior = P.Gamma(alpha, beta)
    assert P.expect(prior, lambda lam: lam ** k) == pytest.approx(exact, rel=1e-8)
    rule = P.quadrature_rule(prior)
    assert rule.expect(rule.nodes ** k) == pytest.approx(exact, rel=1e-8)


@pytest.mark.parametrize("u", [3.0, 20.0, 120.0, 1000.0])
def test_uniform_rule(u):
    rule = P.quadrature_rule(P.Uniform(u))
    f = lambda lam: np.log(lam) * np.exp(-lam / 50)
    assert rule.expect(f(rule.nodes)) == pytest.approx(
        uniform_expect(lambda l: float(f(l)), 1.0, u), rel=1e-12)


@pytest.mark.parametrize("alpha, x", [(30.0, 0.1), (50.0, 0.3), (100.0, 0.45)])
def test_tilted_gamma_rule_captures_exponential_growth(alpha, x):
    rule = P.quadrature_rule(P.Gamma(alpha), tilt=2 * x)
    log_exact = -alpha * math.log1p(-2 * x)  # log E exp(2 lambda x)
    got = special.logsumexp(rule.log_weights + 2 * x * rule.nodes)
    assert got == pytest.approx(log_exact, abs=1e-10)


def test_rule_divergence_when_tilt_reaches_beta():
    with pytest.raises(DivergenceError):
        P.quadrature_rule(P.Gamma(5.0), tilt=1.0)


def test_divergent_expectation_signalled():
    with pytest.raises(DivergenceError):
        P.expect(P.Gamma(50.0), lambda lam: math.exp(1.0 * lam))
    with pytest.raises(DivergenceError):
        P.expect(P.Gamma(5.0), lambda lam: math.exp(1.5 * lam))


def test_nonconvergence_signalled():
    wild = lambda lam: math.sin(1e4 * lam) * lam
    with pytest.raises(QuadratureError):
        P.expect(P.Uniform(500.0), wild, QuadratureConfig(tol=1e-12, limit=5))


@pytest.mark.parametrize("prior", [P.Uniform(120.0), P.Uniform(40, 10), P.Gamma(50.0),
                                   P.Gamma(3.0, 0.5)], ids=repr)
@pytest.mark.parametrize("s", [0.0, 0.001, 0.02, 0.5])
def test_laplace_against_quadrature(prior, s):
    f = lambda lam: math.exp(-lam * s)
    if isinstance(prior, P.Uniform):
        ref = uniform_expect(f, prior.lower, prior.upper)
    else:
        ref = gamma_expect(f, prior.alpha, prior.beta)
    assert float(P.laplace(prior, s)) == pytest.approx(ref, rel=1e-10)


@pytest.mark.parametrize("prior", [P.Uniform(120.0), P.Gamma(50.0), P.Gamma(2.0, 3.0)], ids=repr)
def test_mean_log_lambda(prior):
    if isinstance(prior, P.Uniform):
        ref = uniform_expect(math.log, prior.lower, prior.upper)
    else:
        ref = gamma_expect(math.log, prior.alpha, prior.beta)
    assert P.mean_log_lambda(prior) == pytest.approx(ref, rel=1e-11)


@pytest.mark.parametrize("text, prior", [
    ("point:100", P.PointMass(100.0)),
    ("uniform:120", P.Uniform(120.0)),
    ("uniform:40,10", P.Uniform(40.0, 10.0)),
    ("gamma:50", P.Gamma(50.0)),
    ("gamma:50,2", P.Gamma(50.0, 2.0)),
    ("two_point:25,150,0.05", P.TwoPoint(25.0, 150.0, 0.05)),
])
def test_parse_prior(text, prior):
    assert P.parse_prior(text) == prior
    assert P.prior_from_dict(P.prior_to_dict(prior)) == prior


@pytest.mark.parametrize("text", ["point", "uniform:0.5", "gamma:-1", "two_point:1,2",
                                  "two_point:1,2,1.5", "beta:2", "point:abc"])
def test_parse_prior_errors(text):
    with pytest.raises(InvalidPriorError):
        P.parse_prior(text)


def test_prior_from_dict_errors():
    with pytest.raises(InvalidPriorError):
        P.prior_from_dict({"type": "gamma"})
    with pytest.raises(InvalidPriorError):
        P.prior_from_dict({"type": "lognormal", "mu": 1})


def test_quadrature_config_validation():
    with pytest.raises(InvalidArgumentError):
        QuadratureConfig(tol=0)
    with pytest.raises(InvalidArgumentError):
        QuadratureConfig(tail_mass=0.5)


@settings(max_examples=30, deadline=None)
@given(st.floats(1.5, 60.0), st.floats(0.0, 0.6))
def test_gamma_mgf_property(alpha, x):
    prior = P.Gamma(alpha)
    got = P.expect(prior, lambda lam: math.exp(x * lam))
    assert got == pytest.approx((1 - x) ** -alpha, rel=1e-7)
