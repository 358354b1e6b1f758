import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dilution_design.criteria import fisher_information, y_max
from dilution_design.errors import InvalidArgumentError, InvalidMeasureError
from dilution_design.measure import DesignMeasure
from dilution_design.simulate import (ALL_STERILE, NONE_STERILE, ExperimentOutcome,
                                      equal_dose_mle, estimates_to_csv, expand_doses,
                                      log_likelihood, mle, mle_from_indicators,
                                      score, simulate_experiment, variance_ratio_test,
                                      variance_study)

from _oracles import equal_dose_variance

X_OPT = y_max() / 100
OPT = DesignMeasure([X_OPT], [30])


def test_lambda_limits():
    out = simulate_experiment(DesignMeasure([0.02, 0.5], [20, 10]), 0.0, 1)
    assert out.indicators.all()
    assert out.flag == ALL_STERILE and out.lambda_hat == 0.0
    out = simulate_experiment(DesignMeasure([0.02, 0.5], [20, 10]), 1e7, 1)
    assert not out.indicators.any()
    assert out.flag == NONE_STERILE and math.isinf(out.lambda_hat)


@pytest.mark.slow
def test_sterile_count_mean_within_band():
    design = DesignMeasure([1 / 30], [30])
    rng = np.random.default_rng(11)
    R = 100_000
    counts = np.array([simulate_experiment(design, 30.0, rng).indicators.sum() for _ in range(R)])
    p = math.exp(-1)
    sigma = math.sqrt(30 * p * (1 - p) / R)
    assert abs(counts.mean() - 30 * p) <= 3 * sigma
    assert 30 * p == pytest.approx(11.04, abs=5e-3)


def test_equal_dose_example():
    chi = np.array([True] * 11 + [False] * 19)
    lam, flag = mle_from_indicators(chi, np.full(30, 1 / 30))
    assert flag is None
    assert lam == pytest.approx(-30 * math.log(11 / 30), rel=1e-12)
    assert lam == pytest.approx(30.099, abs=1e-3)


def test_boundary_flags():
    x = np.array([0.01, 0.02, 0.03])
    assert mle_from_indicators([True] * 3, x) == (0.0, ALL_STERILE)
    lam, flag = mle_from_indicators([False] * 3, x)
    assert flag == NONE_STERILE and math.isinf(lam)
    out = ExperimentOutcome(np.array([False, False]), np.array([0.1, 0.2]), math.inf, NONE_STERILE)
    assert out.is_boundary and out.to_dict()["lambda_hat"] is None
    with pytest.raises(InvalidArgumentError):
        ExperimentOutcome(np.array([True]), np.array([0.1, 0.2]), 1.0)


def _grid_mle(chi, x):
    coarse = np.geomspace(1e-2, 1e4, 20001)
    ll = np.array([log_likelihood(l, chi, x) for l in coarse])
    i = int(np.argmax(ll))
    lo, hi = coarse[max(i - 2, 0)], coarse[min(i + 2, coarse.size - 1)]
    fine = np.linspace(lo, hi, 1_000_001)
    sterile = x[chi].sum()
    lx = np.multiply.outer(fine, x[~chi])
    ll = -fine * sterile + np.log(-np.expm1(-lx)).sum(axis=1)
    return fine[int(np.argmax(ll))], fine[1] - fine[0]


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_unequal_dose_mle_matches_grid_search(seed):
    design = DesignMeasure([0.005, 0.02, 0.06], [10, 12, 8])
    out = simulate_experiment(design, 60.0, seed)
    assert out.flag is None
    ref, step = _grid_mle(out.indicators, out.doses)
    assert step < 1e-4
    assert out.lambda_hat == pytest.approx(ref, abs=1e-4)


def test_reproducibility():
    design = DesignMeasure([0.005, 0.02, 0.06], [10, 12, 8])
    a = simulate_experiment(design, 60.0, 123)
    b = simulate_experiment(design, 60.0, 123)
    np.testing.assert_array_equal(a.indicators, b.indicators)
    assert a.lambda_hat == b.lambda_hat
    r1, e1 = variance_study(design, 60.0, 2000, 5, return_estimates=True)
    r2, e2 = variance_study(design, 60.0, 2000, 5, return_estimates=True)
    assert r1 == r2
    np.testing.assert_array_equal(e1, e2)
    assert estimates_to_csv(e1) == estimates_to_csv(e2)


@settings(max_examples=200)
@given(st.integers(2, 60), st.data(), st.floats(1e-4, 1.0))
def test_equal_dose_consistency(n, data, x):
    k = data.draw(st.integers(1, n - 1))
    chi = np.zeros(n, dtype=bool)
    chi[:k] = True
    lam, flag = mle_from_indicators(chi, np.full(n, x))
    assert flag is None
    assert lam == pytest.approx(equal_dose_mle(k, n, x), rel=1e-10)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000))
def test_score_sign_around_mle(seed):
    design = DesignMeasure([0.004, 0.015, 0.05], [10, 10, 10])
    out = simulate_experiment(design, 80.0, seed)
    if out.is_boundary:
        return
    lam = out.lambda_hat
    chi, x = out.indicators, out.doses
    ux = np.unique(x[~chi], return_counts=True)
    s = lambda l: score(l, x[chi].sum(), ux[0], ux[1])
    eps = 1e-6 * lam
    assert s(lam - eps) > 0 > s(lam + eps)
    assert mle(out) == (lam, None)


def test_sterility_frequency_per_dose():
    design = DesignMeasure([0.005, 0.02, 0.06], [10, 10, 10])
    rng = np.random.default_rng(99)
    R = 4000
    hits = np.zeros(3)
    for _ in range(R):
        out = simulate_experiment(design, 40.0, rng)
        hits += out.indicators.reshape(3, 10).sum(axis=1)
    p = np.exp(-40.0 * design.locations)
    freq = hits / (10 * R)
    band = 4 * np.sqrt(p * (1 - p) / (10 * R))
    assert np.all(np.abs(freq - p) <= band)


def test_non_integer_masses_rejected():
    with pytest.raises(InvalidMeasureError):
        expand_doses(DesignMeasure([0.02], [18.98]))
    with pytest.raises(InvalidMeasureError):
        simulate_experiment(DesignMeasure([0.02], [18.98]), 30.0, 0)


def test_invalid_arguments():
    with pytest.raises(InvalidArgumentError):
        variance_study(OPT, 100.0, 999, 0)
    with pytest.raises(InvalidArgumentError):
        variance_study(OPT, -1.0, 5000, 0)
    with pytest.raises(InvalidArgumentError):
        simulate_experiment(OPT, -1.0, 0)


def test_bad_design_flagged():
    rep = variance_study(DesignMeasure([0.5], [30]), 100.0, 10_000, 3)
    assert rep.boundary_freq == pytest.approx(1.0, abs=1e-9)
    assert rep.unreliable
    assert rep.empirical_var is None


def test_report_fields():
    rep = variance_study(OPT, 100.0, 5000, 17)
    d = json.loads(rep.to_json())
    for key in ("empirical_var", "fisher_info", "product", "boundary_freq", "R", "seed", "rng"):
        assert key in d
    assert d["R"] == 5000 and d["seed"] == 17 and d["rng"] == "PCG64"
    assert rep.fisher_info == pytest.approx(fisher_information(OPT, 100.0), rel=1e-14)
    assert rep.product == pytest.approx(rep.empirical_var * rep.fisher_info)


def test_csv_dump():
    _, est = variance_study(OPT, 100.0, 1000, 0, return_estimates=True)
    lines = estimates_to_csv(est).splitlines()
    assert lines[0] == "replicate,lambda_hat"
    assert len(lines) == 1001


@pytest.mark.slow
@pytest.mark.parametrize("x", [X_OPT, 0.01, 1 / 30])
def test_variance_matches_exact_binomial(x):
    rep = variance_study(DesignMeasure([x], [30]), 100.0, 100_000, 2024)
    exact, p_boundary = equal_dose_variance(x, 100.0)
    assert rep.empirical_var == pytest.approx(exact, rel=0.03)
    assert rep.boundary_freq == pytest.approx(p_boundary, abs=5 * math.sqrt(p_boundary / 1e5) + 1e-4)


@pytest.mark.slow
def test_optimal_design_has_smallest_variance():
    # every perturbed equal-dose design must have significantly larger MLE variance
    R = 100_000
    opt = variance_study(OPT, 100.0, R, 7)
    n_opt = round(R * (1 - opt.boundary_freq))
    worse = []
    for f in (0.5, 0.8, 1.25, 1.5, 2.0):
        rep = variance_study(DesignMeasure([f * X_OPT], [30]), 100.0, R, 7)
        n_rep = round(R * (1 - rep.boundary_freq))
        p = variance_ratio_test(opt.empirical_var, n_opt, rep.empirical_var, n_rep)
        worse.append((f, rep.empirical_var, p))
    failures = [w for w in worse if not (w[1] > opt.empirical_var and w[2] < 0.05)]
    assert not failures, f"optimal var {opt.empirical_var:.1f}; not beaten by {failures}"


def test_variance_ratio_test():
    assert variance_ratio_test(1.0, 10_000, 1.2, 10_000) < 1e-6
    assert variance_ratio_test(1.2, 10_000, 1.0, 10_000) > 0.99
