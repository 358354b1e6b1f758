"""Design criteria (goal functionals of the design measure) and their gradient functions.

Every criterion is maximized.  For a measure ``mu`` the gradient function
``g(x; mu)`` is the density of the Frechet differential, so that
``G(mu + t*eta) = G(mu) + t * int g(x; mu) eta(dx) + o(t)``.

Kinds
-----
G1          Fisher information at a known lambda (PointMass prior)
G2          E_Q I(mu; lambda)
G3          E_Q log I(mu; lambda)
G4          -E_Q 1 / I(mu; lambda)
G1_mixture  G2 under a two-point prior
G1_cost     G1 - c1*T1 - c2*T2 (PointMass prior)
G4_cost     G4 - c1*E_Q T1 - c2*E_Q T2

where T1 is the mean number of non-repopulated mice and T2 the probability
that every mouse repopulates or none does.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy import optimize

from . import priors as P
from .errors import (DegenerateInformationError, DivergenceError,
                     InvalidCriterionError)
from .measure import DesignMeasure, total_volume
from .priors import QuadratureConfig

KINDS = ("G1", "G2", "G3", "G4", "G1_cost", "G4_cost", "G1_mixture")
LINEAR_KINDS = frozenset({"G1", "G2", "G1_mixture"})
COST_KINDS = frozenset({"G1_cost", "G4_cost"})
DEFAULT_COSTS = {"G1_cost": (1e-4, 1.0), "G4_cost": (0.005, 5.0)}

_SMALL_Y = 1e-8


# -- kernels ---------------------------------------------------------------------

def r_kernel(y):
    """``y**2 / (exp(y) - 1)``, continuous at 0 and 0 beyond y = 700."""
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = np.where(y < _SMALL_Y, y / (1.0 + 0.5 * y), y * y / np.expm1(np.minimum(y, 700.0)))
    out = np.where(y > 700.0, 0.0, out)
    return out if out.ndim else float(out)


def log_expm1(y):
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        return np.where(y > 30.0, y + np.log1p(-np.exp(-y)), np.log(np.expm1(np.minimum(y, 30.0))))


def log1mexp(y):
    """``log(1 - exp(-y))`` for y >= 0."""
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return np.where(y < math.log(2.0), np.log(-np.expm1(-y)), np.log1p(-np.exp(-y)))


def log_r_kernel(y):
    """``log r(y)``; behaves like ``log(y) - y/2`` near 0."""
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        small = np.log(y) - np.log1p(0.5 * y)
        out = np.where(y < _SMALL_Y, small, 2.0 * np.log(y) - log_expm1(y))
    return out if out.ndim else float(out)


@lru_cache(maxsize=None)
def y_max() -> float:
    """Maximizer of ``r``: the root of ``2 (1 - exp(-y)) = y``."""
    return optimize.brentq(lambda y: 2.0 * -math.expm1(-y) - y, 1.0, 2.0, xtol=1e-15, rtol=1e-15)


def fisher_kernel(x, lam):
    """Per-mouse Fisher information ``x**2 / (exp(lam x) - 1) = lam**-2 r(lam x)``."""
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)
    y = lam * x
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = np.where(y < _SMALL_Y, x / (lam * (1.0 + 0.5 * y)),
                       x * x / np.expm1(np.minimum(y, 700.0)))
    return np.where(y > 700.0, 0.0, out)


def log_fisher_kernel(x, lam):
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)
    with np.errstate(divide="ignore"):
        return log_r_kernel(lam * x) - 2.0 * np.log(lam)


def fisher_information(mu: DesignMeasure, lam: float) -> float:
    if len(mu) == 0:
        return 0.0
    return float(fisher_kernel(mu.locations, lam) @ mu.masses)


# -- criterion type ---------------------------------------------------------------

@dataclass(frozen=True)
class Criterion:
    kind: str
    prior: P.Prior
    c1: Optional[float] = None
    c2: Optional[float] = None

    def __post_init__(self):
        kind, prior = self.kind, self.prior
        if kind not in KINDS:
            raise InvalidCriterionError(f"unknown criterion kind {kind!r}; expected one of {KINDS}")
        if kind in ("G1", "G1_cost"):
            if not isinstance(prior, P.PointMass) or prior.lam <= 0:
                raise InvalidCriterionError(f"{kind} needs a point-mass prior with lambda > 0")
        elif kind == "G1_mixture":
            if not isinstance(prior, P.TwoPoint):
                raise InvalidCriterionError("G1_mixture needs a two-point prior")
        elif not isinstance(prior, (P.Uniform, P.Gamma)):
            raise InvalidCriterionError(f"{kind} needs a Uniform or Gamma prior")
        if kind == "G2" and isinstance(prior, P.Gamma) and prior.alpha <= 1:
            raise InvalidCriterionError("G2 under a Gamma prior needs alpha > 1 (E 1/lambda finite)")
        if kind in COST_KINDS:
            d1, d2 = DEFAULT_COSTS[kind]
            if self.c1 is None:
                object.__setattr__(self, "c1", d1)
            if self.c2 is None:
                object.__setattr__(self, "c2", d2)
            if self.c1 < 0 or self.c2 < 0:
                raise InvalidCriterionError("costs c1, c2 must be nonnegative")
        elif self.c1 is not None or self.c2 is not None:
            raise InvalidCriterionError(f"costs only apply to {sorted(COST_KINDS)}")

    @property
    def is_linear(self) -> bool:
        return self.kind in LINEAR_KINDS

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "prior": P.prior_to_dict(self.prior)}
        if self.kind in COST_KINDS:
            d["c1"] = self.c1
            d["c2"] = self.c2
        return d

    @classmethod
    def from_dict(cls, d: dict) -> Criterion:
        try:
            if "prior" in d:
                prior = P.prior_from_dict(d["prior"])
            else:  # flat form: prior fields next to kind/c1/c2
                prior = P.prior_from_dict({k: v for k, v in d.items()
                                           if k not in ("kind", "c1", "c2")})
            return cls(d["kind"], prior, d.get("c1"), d.get("c2"))
        except KeyError as exc:
            raise InvalidCriterionError(f"criterion JSON lacks {exc}") from exc


# -- evaluation ---------------------------------------------------------------------

@dataclass(frozen=True)
class EvalResult:
    value: float
    gradient: Callable[[np.ndarray], np.ndarray]

    def __call__(self, x):
        return self.gradient(x)


def _g2_uniform(x, prior: P.Uniform):
    x = np.asarray(x, dtype=float)
    a, b = prior.lower, prior.upper
    return x * (log1mexp(b * x) - log1mexp(a * x)) / (b - a)


def _linear_gradient(criterion: Criterion, x, quad: QuadratureConfig):
    x = np.asarray(x, dtype=float)
    prior = criterion.prior
    if isinstance(prior, P.PointMass):
        return fisher_kernel(x, prior.lam)
    if isinstance(prior, P.TwoPoint):
        return (prior.p * fisher_kernel(x, prior.lambda1)
                + (1 - prior.p) * fisher_kernel(x, prior.lambda2))
    if isinstance(prior, P.Uniform):
        return _g2_uniform(x, prior)
    return g2_gamma(x, prior, quad).reshape(x.shape)


def g2_gamma(x, prior: P.Gamma, quad: QuadratureConfig = QuadratureConfig()):
    """G2 gradient under Gamma(alpha, beta).

    For alpha > 2 uses ``E lambda^-2 r(lambda x) = beta^2/((alpha-1)(alpha-2)) E' r(lambda x)``
    with E' under Gamma(alpha - 2, beta); otherwise direct adaptive quadrature.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    a, b = prior.alpha, prior.beta
    if a > 2:
        rule = P.quadrature_rule(P.Gamma(a - 2, b), quad)
        vals = r_kernel(np.outer(rule.nodes, x))
        return b * b / ((a - 1) * (a - 2)) * (rule.weights @ vals)
    return np.array([P.expect(prior, lambda lam, xi=xi: float(fisher_kernel(xi, lam)), quad)
                     for xi in x])


_TILT_FACTOR = {"G3": 1.0, "G4": 2.0, "G4_cost": 2.0}


class Objective:
    """A criterion restricted to measures supported on fixed points ``x``.

    Kernel matrices over (prior node, support point) are cached so the
    optimizer can evaluate value and gradient cheaply for many mass vectors.
    """

    def __init__(self, criterion: Criterion, x, quad: QuadratureConfig = QuadratureConfig()):
        self.criterion = criterion
        self.x = np.asarray(x, dtype=float)
        if self.x.ndim != 1 or np.any(self.x <= 0):
            raise InvalidCriterionError("support points must be a 1-d array of positive volumes")
        self.quad = quad
        self.kind = criterion.kind
        self._rule = None
        self._mats = None
        if criterion.is_linear:
            self._g = _linear_gradient(criterion, self.x, quad)

    # -- rule management --------------------------------------------------------
    def _needed_tilt(self, m):
        prior = self.criterion.prior
        if not isinstance(prior, P.Gamma):
            return 0.0
        support = self.x[m > 0]
        if support.size == 0:
            return 0.0
        xs = float(support.min())
        if self.kind in ("G4", "G4_cost") and xs >= prior.beta:
            raise DivergenceError(
                f"E 1/I diverges: smallest dose {xs} >= beta = {prior.beta}")
        return min(_TILT_FACTOR.get(self.kind, 0.0) * xs, 0.95 * prior.beta)

    def _ensure_rule(self, m):
        need = self._needed_tilt(m)
        if self._rule is not None and need <= self._rule.tilt:
            return
        tilt = need
        if self._rule is not None and need > 0:
            tilt = min(max(need, 1.5 * self._rule.tilt), 0.95 * self.criterion.prior.beta)
        self._rule = P.quadrature_rule(self.criterion.prior, self.quad, tilt=tilt)
        self._mats = self._matrices(self._rule.nodes, self.x)

    def _matrices(self, lam, x):
        lam = lam[:, None]
        x = x[None, :]
        mats = {"K": fisher_kernel(x, lam)}
        if self.kind in COST_KINDS:
            with np.errstate(over="ignore"):
                mats["E"] = np.exp(-lam * x)
            mats["L"] = log1mexp(lam * x)
        return mats

    # -- evaluation -------------------------------------------------------------
    def _state(self, m):
        """Everything needed for the value and for the gradient at any x."""
        m = np.asarray(m, dtype=float)
        if self.criterion.is_linear:
            return {"value": float(self._g @ m)}
        self._ensure_rule(m)
        rule, K = self._rule, self._mats["K"]
        st = {"rule": rule}
        value = 0.0
        if self.kind in ("G3", "G4", "G4_cost"):
            log_I = self._log_information(m)
            if self.kind == "G3":
                value = float(rule.weights @ log_I)
                st["coef"] = np.exp(rule.log_weights - log_I)
            else:
                value = -float(np.sum(np.exp(rule.log_weights - log_I)))
                st["coef"] = np.exp(rule.log_weights - 2.0 * log_I)
        else:  # G1_cost: base is G1 at the single node
            st["coef"] = rule.weights.copy()
            value = float(rule.weights @ (K @ m))
        if self.kind in COST_KINDS:
            c1, c2 = self.criterion.c1, self.criterion.c2
            lam, w = rule.nodes, rule.weights
            H = float(self.x @ m)
            t1 = float(w @ (self._mats["E"] @ m))
            with np.errstate(under="ignore"):
                t21 = np.exp(-lam * H)
                t20 = np.exp(self._mats["L"] @ m)
            value -= c1 * t1 + c2 * (float(w @ t21) + float(w @ t20))
            st["c1w"] = c1 * w
            st["c2_lam_t21"] = c2 * float(w @ (lam * t21))
            st["c2_w_t20"] = c2 * w * t20
        st["value"] = value
        return st

    def _log_information(self, m):
        K = self._mats["K"]
        I = K @ m
        if np.all(m <= 0):
            raise DegenerateInformationError("Fisher information is zero for the empty measure")
        with np.errstate(divide="ignore"):
            log_I = np.log(I)
        bad = ~(I > 1e-280)
        if np.any(bad):
            # rows where the plain product underflows: log-sum-exp over the support
            sup = m > 0
            lk = log_fisher_kernel(self.x[sup][None, :], self._rule.nodes[bad][:, None])
            log_I[bad] = _logsumexp(lk + np.log(m[sup])[None, :], axis=1)
        if not np.all(np.isfinite(log_I)):
            raise DegenerateInformationError("Fisher information vanished at some prior node")
        return log_I

    def _gradient_from_state(self, st, x=None):
        if self.criterion.is_linear:
            return self._g if x is None else _linear_gradient(self.criterion, x, self.quad)
        if x is None:
            mats = self._mats
            xx = self.x
        else:
            xx = np.asarray(x, dtype=float)
            mats = self._matrices(st["rule"].nodes, xx)
        g = st["coef"] @ mats["K"]
        if self.kind in COST_KINDS:
            g = (g - st["c1w"] @ mats["E"]
                 + st["c2_lam_t21"] * xx
                 - st["c2_w_t20"] @ mats["L"])
        return g

    def value(self, m) -> float:
        return self._state(m)["value"]

    def gradient(self, m) -> np.ndarray:
        st = self._state(m)
        return self._gradient_from_state(st)

    def value_and_gradient(self, m):
        st = self._state(m)
        return st["value"], self._gradient_from_state(st)

    def gradient_function(self, m) -> Callable:
        st = self._state(m)
        return lambda xq: self._gradient_from_state(st, np.atleast_1d(np.asarray(xq, dtype=float)))


def _logsumexp(a, axis):
    mx = np.max(a, axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    return np.log(np.sum(np.exp(a - mx), axis=axis)) + np.squeeze(mx, axis=axis)


def evaluate(criterion: Criterion, mu: DesignMeasure,
             quad: QuadratureConfig = QuadratureConfig()) -> EvalResult:
    """Value of the criterion at ``mu`` and its gradient function ``x -> g(x; mu)``."""
    if criterion.kind in ("G3", "G4", "G4_cost") and (len(mu) == 0 or mu.masses.sum() <= 0):
        raise DegenerateInformationError(f"{criterion.kind} is undefined for the empty measure")
    x = mu.locations if len(mu) else np.array([1.0])
    m = mu.masses if len(mu) else np.array([0.0])
    obj = Objective(criterion, x, quad)
    st = obj._state(m)

    def grad(xq):
        xq = np.asarray(xq, dtype=float)
        out = obj._gradient_from_state(st, np.atleast_1d(xq))
        return out if xq.ndim else float(out[0])

    return EvalResult(st["value"], grad)


# -- cost functionals -----------------------------------------------------------------

def expected_dead_mice(mu: DesignMeasure, prior: P.Prior) -> float:
    """``E_Q int exp(-lambda x) mu(dx)``: mean number of non-repopulated mice."""
    if len(mu) == 0:
        return 0.0
    return float(P.laplace(prior, mu.locations) @ mu.masses)


def spoilt_probability(mu: DesignMeasure, prior: P.Prior,
                       quad: QuadratureConfig = QuadratureConfig()) -> float:
    """Probability that every mouse stays non-repopulated or every mouse repopulates."""
    if len(mu) == 0:
        raise DegenerateInformationError("spoilt probability needs a nonempty design")
    H = total_volume(mu)
    x, m = mu.locations, mu.masses

    def all_repopulate(lam):
        return float(np.exp(np.sum(m * log1mexp(lam * x))))

    return float(P.laplace(prior, H)) + P.expect(prior, all_repopulate, quad)


def gradient_curve(criterion: Criterion, mu: DesignMeasure, grid,
                   quad: QuadratureConfig = QuadratureConfig()):
    """(x, g(x; mu)) pairs for plotting."""
    grid = np.asarray(grid, dtype=float)
    return grid, evaluate(criterion, mu, quad).gradient(grid)


def gradient_curve_csv(criterion: Criterion, mu: DesignMeasure, grid,
                       quad: QuadratureConfig = QuadratureConfig()) -> str:
    """``gradient_curve`` as CSV with header ``x,g``."""
    xs, gs = gradient_curve(criterion, mu, grid, quad)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "g"])
    w.writerows([repr(float(x)), repr(float(g))] for x, g in zip(xs, gs))
    return buf.getvalue()
