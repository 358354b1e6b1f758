"""Numerical reproduction table: every headline number with its tolerance.

Each check returns one or more ``CheckResult`` rows (target, computed,
tolerance, runtime).  ``run_all`` drives the ``reproduce`` CLI command.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import priors as P
from .criteria import Criterion, evaluate, y_max
from .measure import DesignMeasure, total_volume
from .one_atom import maximize_dose, solve_one_atom, sweep, threshold, transition_point
from .optimizer import OptimizerConfig, certify, make_grid, optimize
from .priors import QuadratureConfig
from .simulate import equal_dose_mle, mle_from_counts, variance_study


@dataclass
class CheckResult:
    criterion: int
    name: str
    target: float
    computed: float
    tolerance: float
    seconds: float
    time_limit: float
    value_ok: bool = False
    time_ok: bool = False

    @property
    def passed(self) -> bool:
        return self.value_ok and self.time_ok

    def to_dict(self):
        d = asdict(self)
        d["passed"] = self.passed
        return d

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        note = "" if self.time_ok else f" (runtime {self.seconds:.3g}s > {self.time_limit:g}s)"
        return (f"[{status}] #{self.criterion} {self.name}: computed {self.computed:.6g}, "
                f"target {self.target:.6g} +/- {self.tolerance:.3g}{note}")


def _row(crit, name, target, computed, tol, seconds, limit, ok=None):
    value_ok = abs(computed - target) <= tol if ok is None else bool(ok)
    return CheckResult(crit, name, float(target), float(computed), float(tol),
                       float(seconds), float(limit), value_ok, seconds <= limit)


class _Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.t0


# -- individual checks -----------------------------------------------------------------

def check_y_max():
    with _Timer() as t:
        y = y_max.__wrapped__()
    return [_row(1, "argmax of r(y)", 1.59362, y, 1e-4, t.seconds, 1e-3)]


def check_g1_threshold(n=30):
    rows = []
    with _Timer() as t:
        knee = transition_point(lambda lam: Criterion("G1", P.PointMass(lam)), n, 1.0, 1e4,
                                tol=1e-6)
    rows.append(_row(2, "G1 knee lambda*", 47.81, knee, 0.01, t.seconds, 1.0))
    with _Timer() as t:
        x100 = solve_one_atom(Criterion("G1", P.PointMass(100.0)), n).x_star
    rows.append(_row(2, "G1 optimal dose at lambda=100", 0.0159362, x100, 1e-5, t.seconds, 1.0))
    with _Timer() as t:
        rows_sw = sweep("G1", np.linspace(1, 200, 200), n)
    x_sw = np.array([r[2] for r in rows_sw])
    lam = np.array([r[0] for r in rows_sw])
    expect = np.minimum(1.0 / n, y_max() / lam)
    err = float(np.max(np.abs(x_sw - expect)))
    rows.append(_row(2, "G1 200-point sweep max |x* - min(1/n, y_max/lambda)|", 0.0, err, 1e-12,
                     t.seconds, 1.0))
    return rows


def check_uniform_thresholds(n=30):
    rows = []
    for fam, target in (("G3_uniform", 90.66), ("G4_uniform", 64.47)):
        with _Timer() as t:
            u = threshold(fam, n)
        rows.append(_row(3, f"{fam} threshold u*", target, u, 0.05, t.seconds, 10.0))
    return rows


def check_gamma_thresholds(n=30):
    rows = []
    for fam, target in (("G2_gamma", 49.68), ("G3_gamma", 47.70), ("G4_gamma", 45.74)):
        with _Timer() as t:
            a = threshold(fam, n, beta=1.0)
        rows.append(_row(4, f"{fam} threshold alpha*", target, a, 0.05, t.seconds, 30.0))
    return rows


def check_fig3(n=30, config: OptimizerConfig = OptimizerConfig()):
    rows = []
    for u, target in ((120.0, 0.02522), (20.0, 1.0 / 30.0)):
        with _Timer() as t:
            mu, cert, _ = optimize(Criterion("G3", P.Uniform(u)), n, config)
        single = len(mu) == 1
        x = float(mu.locations[np.argmax(mu.masses)])
        ok = single and abs(x - target) <= 5e-4 and cert.passed
        rows.append(_row(5, f"G3 Uniform(1,{u:g}) single certified atom", target, x, 5e-4,
                         t.seconds, 120.0, ok))
    return rows


def check_mixture(n=30, config: OptimizerConfig = OptimizerConfig()):
    with _Timer() as t:
        mu, cert, _ = optimize(Criterion("G1_mixture", P.TwoPoint(25.0, 150.0, 0.05)), n, config)
    rows = []
    if len(mu) != 2:
        rows.append(_row(6, "mixture design has two atoms", 2, len(mu), 0, t.seconds, 120.0))
        return rows
    (x1, x2), (m1, m2) = mu.locations, mu.masses
    for name, target, val, tol in (("mixture atom 1 location", 0.019, x1, 0.002),
                                   ("mixture atom 2 location", 0.058, x2, 0.002),
                                   ("mixture atom 1 mass", 19.0, m1, 0.5),
                                   ("mixture atom 2 mass", 11.0, m2, 0.5),
                                   ("mixture total volume", 1.0, total_volume(mu), 1e-3)):
        rows.append(_row(6, name, target, val, tol, t.seconds, 120.0))
    return rows


def check_cost_knee(n=30):
    with _Timer() as t:
        lam = threshold("G1_cost", n, c1=1e-4, c2=1.0)
    return [_row(7, "G1 with costs: dilution starts at lambda", 41.8, lam, 0.2, t.seconds, 30.0)]


def check_cost_gamma(n=30):
    rows = []
    t0 = time.perf_counter()
    out = []
    for alpha, target in ((30.0, 0.043), (50.0, 0.028), (100.0, 0.015)):
        x, _, _ = maximize_dose(Criterion("G4_cost", P.Gamma(alpha, 1.0), 0.005, 5.0), n)
        out.append((alpha, target, x))
    secs = time.perf_counter() - t0
    for alpha, target, x in out:
        rows.append(_row(8, f"G4 with costs x_max at alpha={alpha:g}", target, x, 0.002, secs, 60.0))
    return rows


def _brute_force_linear(criterion, n, grid, quad):
    """Best objective over all feasible 1- and 2-atom designs on ``grid``."""
    g = evaluate(criterion, DesignMeasure([grid[0]], [1.0]), quad).gradient(grid)
    t = 1.0 / n
    best = n * float(np.max(np.where(grid <= t, g, -np.inf)))
    left, right = grid < t, grid > t
    gl, xl = g[left], grid[left]
    gr, xr = g[right], grid[right]
    if gl.size and gr.size:
        w = (xr[None, :] - t) / (xr[None, :] - xl[:, None])
        best = max(best, n * float(np.max(w * gl[:, None] + (1 - w) * gr[None, :])))
    return best


def check_properties(quad: QuadratureConfig = QuadratureConfig()):
    rows = []
    # directional derivative of G at mu towards delta_x equals g(x; mu)
    t0 = time.perf_counter()
    mu = DesignMeasure([0.01, 0.03], [20.0, 10.0])
    worst = 0.0
    crits = [Criterion("G3", P.Uniform(120)), Criterion("G3", P.Gamma(50)),
             Criterion("G4", P.Uniform(120)), Criterion("G4", P.Gamma(50)),
             Criterion("G1_cost", P.PointMass(45)), Criterion("G4_cost", P.Gamma(50)),
             Criterion("G4_cost", P.Uniform(120))]
    h = 1e-6
    for c in crits:
        res = evaluate(c, mu, quad)
        for xq in (0.005, 0.02, 0.05):
            fd = (evaluate(c, mu + DesignMeasure([xq], [h]), quad).value - res.value) / h
            an = float(res.gradient(xq))
            worst = max(worst, abs(fd - an) / abs(an))
    rows.append(_row(9, "gradient vs finite difference (max rel. error)", 0.0, worst, 1e-4,
                     time.perf_counter() - t0, 600.0))
    # linear criteria: value equals the integral of the gradient
    t0 = time.perf_counter()
    worst = 0.0
    for c in (Criterion("G1", P.PointMass(60)), Criterion("G2", P.Uniform(120)),
              Criterion("G2", P.Gamma(50)), Criterion("G1_mixture", P.TwoPoint(25, 150, 0.05))):
        res = evaluate(c, mu, quad)
        integral = float(res.gradient(mu.locations) @ mu.masses)
        worst = max(worst, abs(integral - res.value) / abs(res.value))
    rows.append(_row(9, "linear criterion value = int g dmu (max rel. error)", 0.0, worst, 1e-10,
                     time.perf_counter() - t0, 600.0))
    # closed-form G4 Uniform against adaptive quadrature
    t0 = time.perf_counter()
    worst = 0.0
    for u in (20.0, 120.0):
        for x in (0.01, 1.0 / 30, 0.05):
            closed = evaluate(Criterion("G4", P.Uniform(u)), DesignMeasure([x], [30.0]), quad).value
            num = -P.expect(P.Uniform(u), lambda lam: math.expm1(lam * x) / (30 * x * x),
                            QuadratureConfig(tol=1e-13))
            worst = max(worst, abs(closed - num) / abs(num))
    rows.append(_row(9, "G4 Uniform closed form vs quadrature (max rel. error)", 0.0, worst, 1e-8,
                     time.perf_counter() - t0, 600.0))
    # a perturbed design must fail the certificate
    t0 = time.perf_counter()
    cert = certify(Criterion("G1", P.PointMass(20)), DesignMeasure([0.02], [30.0]), 1e-6,
                   make_grid(), n=30)
    rows.append(_row(9, "certificate rejects 30*delta_0.02 under lambda=20 (max violation > 0)",
                     0.0, cert.max_violation, 0.0, time.perf_counter() - t0, 600.0,
                     ok=not cert.passed and cert.max_violation > 0))
    # optimizer against exhaustive 1- and 2-atom search on a desk grid
    t0 = time.perf_counter()
    cfg = OptimizerConfig(grid_points=200, refine_rounds=0)
    grid = make_grid(cfg)
    worst = 0.0
    for c in (Criterion("G1", P.PointMass(60)), Criterion("G2", P.Uniform(120)),
              Criterion("G1_mixture", P.TwoPoint(25, 150, 0.05))):
        mu_opt, _, _ = optimize(c, 30, cfg, quad)
        worst = max(worst, _brute_force_linear(c, 30, grid, quad) - evaluate(c, mu_opt, quad).value)
    rows.append(_row(9, "optimizer vs brute-force 2-atom oracle (objective gap)", 0.0, worst, 1e-6,
                     time.perf_counter() - t0, 600.0, ok=worst < 1e-6))
    return rows


def check_monte_carlo(replicates=100_000, seed=20240601):
    rows = []
    t0 = time.perf_counter()
    x = y_max() / 100.0
    rep = variance_study(DesignMeasure([x], [30.0]), 100.0, replicates, seed)
    secs = time.perf_counter() - t0
    prod = rep.product if rep.product is not None else math.nan
    rows.append(_row(10, "var(lambda_hat) * I for 30*delta_{y_max/100}, lambda=100", 1.0, prod,
                     0.1, secs, 60.0))
    t0 = time.perf_counter()
    worst = 0.0
    for k in range(1, 30):
        lam, _ = mle_from_counts([1.0 / 30], [30], [k])
        ref = equal_dose_mle(k, 30, 1.0 / 30)
        worst = max(worst, abs(lam - ref) / ref)
    rows.append(_row(10, "equal-dose Newton MLE vs -log(p_hat)/x (max rel. error)", 0.0, worst,
                     1e-10, time.perf_counter() - t0, 60.0))
    return rows


CHECKS = (check_y_max, check_g1_threshold, check_uniform_thresholds, check_gamma_thresholds,
          check_fig3, check_mixture, check_cost_knee, check_cost_gamma, check_properties,
          check_monte_carlo)


def run_all(echo=None):
    rows = []
    for check in CHECKS:
        for row in check():
            rows.append(row)
            if echo is not None:
                echo(row.line())
    return rows

