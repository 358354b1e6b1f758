"""Equal-dose designs ``n * delta_x`` and the dilution thresholds.

For a one-atom design every criterion reduces to a scalar function of the
dose ``x``.  Its unconstrained maximizer ``x_max`` decides the design: all
the substrate is used (``x = 1/n``) while ``x_max >= 1/n``, otherwise the
doses shrink to ``x_max``.  The threshold is the prior parameter where
``x_max`` crosses ``1/n``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Callable

import numpy as np

from . import optimizer
from . import priors as P
from .criteria import (Criterion, _linear_gradient, evaluate, fisher_kernel, log1mexp,
                       log_r_kernel, y_max)
from .errors import BracketError, InvalidCriterionError
from .measure import DesignMeasure
from .priors import QuadratureConfig

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
X_LOW = 1e-6
X_HIGH = 0.999
SCAN_POINTS = 200

THRESHOLD_RANGES = {
    "G1": (1.0, 1e4),
    "G1_cost": (1.0, 1e4),
    "G2_gamma": (2.0 + 1e-9, 1e4),
    "G3_uniform": (1.0 + 1e-6, 1e4),
    "G3_gamma": (2.0 + 1e-9, 1e4),
    "G4_uniform": (1.0 + 1e-6, 1e4),
    "G4_gamma": (2.0 + 1e-9, 1e4),
    "G4_cost_gamma": (2.0 + 1e-9, 1e4),
}


@dataclass(frozen=True)
class OneAtomSolution:
    x_star: float
    x_unconstrained: float
    at_boundary: bool
    objective: float
    flat: bool = False

    def to_dict(self):
        return asdict(self)


def one_atom_objective(criterion: Criterion, n: float, x,
                       quad: QuadratureConfig = QuadratureConfig()):
    """``G(n * delta_x)`` evaluated for an array of doses ``x``."""
    x = np.asarray(x, dtype=float)
    kind, prior = criterion.kind, criterion.prior
    if criterion.is_linear:
        return n * _linear_gradient(criterion, x, quad)
    if kind == "G3":
        rule = P.quadrature_rule(prior, quad)
        e_log_r = rule.weights @ log_r_kernel(np.multiply.outer(rule.nodes, x))
        return math.log(n) - 2.0 * P.mean_log_lambda(prior) + e_log_r
    if kind == "G1_cost":
        lam = prior.lam
        with np.errstate(under="ignore"):
            t1 = n * np.exp(-lam * x)
            t2 = np.exp(-n * lam * x) + np.exp(n * log1mexp(lam * x))
        return n * fisher_kernel(x, lam) - criterion.c1 * t1 - criterion.c2 * t2
    g4 = _g4_one_atom(prior, n, x)
    if kind == "G4":
        return g4
    # G4_cost
    rule = P.quadrature_rule(prior, quad)
    with np.errstate(under="ignore"):
        t20 = rule.weights @ np.exp(n * log1mexp(np.multiply.outer(rule.nodes, x)))
    t1 = n * P.laplace(prior, x)
    t2 = P.laplace(prior, n * x) + t20
    return g4 - criterion.c1 * t1 - criterion.c2 * t2


def _g4_one_atom(prior, n, x):
    """``-E_Q 1/I(n delta_x)`` in closed form."""
    if isinstance(prior, P.Uniform):
        a, b = prior.lower, prior.upper
        with np.errstate(over="ignore", invalid="ignore"):
            num = np.expm1(b * x) - np.expm1(a * x) - x * (b - a)
            out = -num / (n * x ** 3 * (b - a))
        return np.where(np.isnan(out), -np.inf, out)
    a, beta = prior.alpha, prior.beta
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        mgf_m1 = np.expm1(-a * np.log1p(-x / beta))
    out = -mgf_m1 / (n * x * x)
    return np.where(x < beta, out, -np.inf)


def _search_interval(criterion: Criterion):
    hi = X_HIGH
    prior = criterion.prior
    if criterion.kind in ("G4", "G4_cost") and isinstance(prior, P.Gamma):
        hi = min(hi, prior.beta * (1.0 - 1e-6))
    return X_LOW, hi


def golden_section_max(f: Callable[[float], float], a: float, b: float,
                       xtol: float = 1e-12, max_iter: int = 200):
    """Maximize a unimodal ``f`` on [a, b]; returns (x, f(x))."""
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= xtol:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)


def maximize_dose(criterion: Criterion, n: float,
                  quad: QuadratureConfig = QuadratureConfig(), xtol: float = 1e-12):
    """Unconstrained maximizer of ``x -> G(n delta_x)``; returns (x_max, value, flat)."""
    if criterion.kind == "G1":
        x = y_max() / criterion.prior.lam
        return x, float(one_atom_objective(criterion, n, x, quad)), False
    lo, hi = _search_interval(criterion)
    xs = np.geomspace(lo, hi, SCAN_POINTS)
    vals = one_atom_objective(criterion, n, xs, quad)
    vals = np.where(np.isfinite(vals), vals, -np.inf)
    i = int(np.argmax(vals))
    spread = float(np.max(vals) - np.min(vals[np.isfinite(vals)]))
    flat = spread <= 1e-14 * max(1.0, abs(float(vals[i])))
    a = xs[max(i - 1, 0)]
    b = xs[min(i + 1, SCAN_POINTS - 1)]

    def f(x):
        return float(one_atom_objective(criterion, n, x, quad))

    x, fx = golden_section_max(f, a, b, xtol=xtol * max(1.0, b))
    if vals[i] > fx:  # maximum sits on the search boundary
        x, fx = float(xs[i]), float(vals[i])
    return float(x), fx, flat


def solve_one_atom(criterion: Criterion, n: float,
                   quad: QuadratureConfig = QuadratureConfig()) -> OneAtomSolution:
    if not n >= 1:
        raise InvalidCriterionError("number of mice n must be >= 1")
    x_unc, _, flat = maximize_dose(criterion, n, quad)
    x_star = min(x_unc, 1.0 / n)
    obj = float(one_atom_objective(criterion, n, x_star, quad))
    return OneAtomSolution(x_star=x_star, x_unconstrained=x_unc,
                           at_boundary=x_unc >= 1.0 / n, objective=obj, flat=flat)


# -- thresholds ---------------------------------------------------------------------

def family_criterion(family: str, param: float, beta: float = 1.0,
                     c1=None, c2=None) -> Criterion:
    """The criterion of a threshold family at the given parameter value."""
    if family == "G1":
        return Criterion("G1", P.PointMass(param))
    if family == "G1_cost":
        return Criterion("G1_cost", P.PointMass(param), c1, c2)
    if family == "G2_gamma":
        return Criterion("G2", P.Gamma(param, beta))
    if family == "G3_uniform":
        return Criterion("G3", P.Uniform(param))
    if family == "G3_gamma":
        return Criterion("G3", P.Gamma(param, beta))
    if family == "G4_uniform":
        return Criterion("G4", P.Uniform(param))
    if family == "G4_gamma":
        return Criterion("G4", P.Gamma(param, beta))
    if family == "G4_cost_gamma":
        return Criterion("G4_cost", P.Gamma(param, beta), c1, c2)
    raise InvalidCriterionError(
        f"unknown threshold family {family!r}; expected one of {sorted(THRESHOLD_RANGES)}")


def transition_point(make: Callable[[float], Criterion], n: float, lo: float, hi: float,
                     tol: float = 1e-4, quad: QuadratureConfig = QuadratureConfig()) -> float:
    """Parameter where ``x_max`` falls through ``1/n``, by bisection.

    ``x_max`` must be non-increasing in the parameter: at ``lo`` the whole
    substrate is used, at ``hi`` the doses are diluted.
    """
    target = 1.0 / n

    def uses_all(p):
        return maximize_dose(make(p), n, quad)[0] >= target

    if not uses_all(lo) or uses_all(hi):
        raise BracketError(
            f"x_max does not cross 1/n = {target:.6g} for parameters in [{lo}, {hi}]")
    while hi - lo > tol:
        # geometric midpoints while the bracket spans decades
        mid = math.sqrt(lo * hi) if hi > 4.0 * lo else 0.5 * (lo + hi)
        if uses_all(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def threshold(family: str, n: float = 30, beta: float = 1.0, c1=None, c2=None,
              tol: float = 1e-4, quad: QuadratureConfig = QuadratureConfig(),
              search_range=None) -> float:
    """Prior parameter (lambda, u or alpha) at which equal doses stop using all
    the substrate."""
    if family not in THRESHOLD_RANGES:
        raise InvalidCriterionError(
            f"unknown threshold family {family!r}; expected one of {sorted(THRESHOLD_RANGES)}")
    if family == "G1":
        return y_max() * n
    lo, hi = search_range or THRESHOLD_RANGES[family]
    return transition_point(lambda p: family_criterion(family, p, beta, c1, c2),
                            n, lo, hi, tol=tol, quad=quad)


def sweep(family: str, params, n: float = 30, beta: float = 1.0, c1=None, c2=None,
          quad: QuadratureConfig = QuadratureConfig()):
    """Rows (parameter, x_unconstrained, x_star, objective) over ``params``."""
    rows = []
    for p in params:
        sol = solve_one_atom(family_criterion(family, float(p), beta, c1, c2), n, quad)
        rows.append((float(p), sol.x_unconstrained, sol.x_star, sol.objective))
    return rows


# -- comparison with the full optimizer ------------------------------------------------

@dataclass(frozen=True)
class CrossCheck:
    one_atom: OneAtomSolution
    measure: DesignMeasure
    objective_full: float
    objective_gap: float      # full optimizer minus best equal-dose design
    x_difference: float       # largest distance of a full-optimizer atom from x_star
    atoms: int
    agree: bool

    def to_dict(self):
        return {"one_atom": self.one_atom.to_dict(), "measure": self.measure.to_dict(),
                "objective_full": self.objective_full, "objective_gap": self.objective_gap,
                "x_difference": self.x_difference, "atoms": self.atoms, "agree": self.agree}


def cross_check(criterion: Criterion, n: float = 30, config=None,
                quad: QuadratureConfig = QuadratureConfig(), x_tol: float = 1e-4,
                rel_gap: float = 1e-6) -> CrossCheck:
    """Solve over all measures and over equal doses; report how far apart they are.

    The two agree when the full optimum collapses to one atom within ``x_tol``
    of ``x_star`` and does not beat the equal-dose objective by more than
    ``rel_gap`` relative.
    """
    sol = solve_one_atom(criterion, n, quad)
    res = optimizer.optimize(criterion, n, config or optimizer.OptimizerConfig(), quad)
    mu = optimizer.collapse(res.measure, 0.05)
    full = float(evaluate(criterion, res.measure, quad).value)
    gap = full - sol.objective
    dx = float(np.max(np.abs(mu.locations - sol.x_star)))
    agree = len(mu) == 1 and dx <= x_tol and gap <= rel_gap * max(1.0, abs(sol.objective))
    return CrossCheck(sol, res.measure, full, gap, dx, len(mu), agree)
