"""Prior distributions over the Poisson rate lambda and expectations against them.

Two integration routes are provided:

* :func:`expect` -- adaptive Gauss-Kronrod (QUADPACK) for a scalar
  integrand, with an error estimate checked against ``QuadratureConfig.tol``.
* :func:`quadrature_rule` -- a fixed node/weight rule used by the criteria
  inside optimization loops, where one rule serves thousands of evaluations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy import integrate, special, stats

from .errors import DivergenceError, InvalidArgumentError, InvalidPriorError, QuadratureError


@dataclass(frozen=True)
class QuadratureConfig:
    tol: float = 1e-9
    order: int = 16             # Gauss-Legendre nodes per panel
    panel_width: float = 8.0    # Uniform prior: max panel width in lambda
    panels_per_sd: float = 2.0  # Gamma prior: panels per standard deviation
    tail_mass: float = 1e-15    # Gamma prior: mass ignored in each tail
    max_panels: int = 4000
    limit: int = 200            # QUADPACK subinterval limit

    def __post_init__(self):
        if not self.tol > 0:
            raise InvalidArgumentError("quadrature tol must be positive")
        if self.order < 2 or not self.panel_width > 0 or not self.panels_per_sd > 0:
            raise InvalidArgumentError("quadrature order, panel_width, panels_per_sd out of range")
        if not 0 < self.tail_mass < 1e-3:
            raise InvalidArgumentError("tail_mass must lie in (0, 1e-3)")


@dataclass(frozen=True)
class PointMass:
    lam: float

    def __post_init__(self):
        if not self.lam >= 0 or not math.isfinite(self.lam):
            raise InvalidPriorError("point-mass lambda must be >= 0")


@dataclass(frozen=True)
class Uniform:
    upper: float
    lower: float = 1.0

    def __post_init__(self):
        if not (self.lower >= 1 and self.upper > self.lower and math.isfinite(self.upper)):
            raise InvalidPriorError(
                f"Uniform prior needs upper > lower >= 1, got ({self.lower}, {self.upper})")


@dataclass(frozen=True)
class Gamma:
    """Gamma(shape=alpha, rate=beta)."""

    alpha: float
    beta: float = 1.0

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0
                and math.isfinite(self.alpha) and math.isfinite(self.beta)):
            raise InvalidPriorError("Gamma prior needs alpha > 0 and beta > 0")

    @property
    def dist(self):
        return stats.gamma(self.alpha, scale=1.0 / self.beta)


@dataclass(frozen=True)
class TwoPoint:
    """lambda = lambda1 with probability p, lambda2 otherwise."""

    lambda1: float
    lambda2: float
    p: float

    def __post_init__(self):
        if not (self.lambda1 > 0 and self.lambda2 > 0 and 0 < self.p < 1):
            raise InvalidPriorError(
                "two-point prior needs lambda1, lambda2 > 0 and 0 < p < 1")


Prior = Union[PointMass, Uniform, Gamma, TwoPoint]


# -- serialization -------------------------------------------------------------

def prior_to_dict(prior: Prior) -> dict:
    if isinstance(prior, PointMass):
        return {"type": "point", "lambda": prior.lam}
    if isinstance(prior, Uniform):
        d = {"type": "uniform", "u": prior.upper}
        if prior.lower != 1.0:
            d["lower"] = prior.lower
        return d
    if isinstance(prior, Gamma):
        return {"type": "gamma", "alpha": prior.alpha, "beta": prior.beta}
    if isinstance(prior, TwoPoint):
        return {"type": "two_point", "lambda1": prior.lambda1,
                "lambda2": prior.lambda2, "p": prior.p}
    raise InvalidPriorError(f"unknown prior {prior!r}")


def prior_from_dict(d: dict) -> Prior:
    try:
        kind = d["type"]
        if kind == "point":
            return PointMass(float(d["lambda"]))
        if kind == "uniform":
            return Uniform(float(d["u"]), float(d.get("lower", 1.0)))
        if kind == "gamma":
            return Gamma(float(d["alpha"]), float(d.get("beta", 1.0)))
        if kind == "two_point":
            return TwoPoint(float(d["lambda1"]), float(d["lambda2"]), float(d["p"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidPriorError(f"malformed prior {d!r}: {exc}") from exc
    raise InvalidPriorError(f"unknown prior type {d.get('type')!r}")


def parse_prior(text: str) -> Prior:
    """Parse the CLI shorthand ``point:100``, ``uniform:120``, ``gamma:50[,beta]``,
    ``two_point:25,150,0.05``."""
    kind, _, args = text.partition(":")
    try:
        vals = [float(v) for v in args.split(",")] if args else []
        if kind == "point" and len(vals) == 1:
            return PointMass(vals[0])
        if kind == "uniform" and len(vals) in (1, 2):
            return Uniform(vals[0], *vals[1:])
        if kind == "gamma" and len(vals) in (1, 2):
            return Gamma(*vals)
        if kind == "two_point" and len(vals) == 3:
            return TwoPoint(*vals)
    except ValueError as exc:
        raise InvalidPriorError(f"cannot parse prior {text!r}: {exc}") from exc
    raise InvalidPriorError(f"cannot parse prior {text!r}")


# -- density and moments ---------------------------------------------------------

def density(prior: Prior, lam):
    lam = np.asarray(lam, dtype=float)
    if isinstance(prior, Uniform):
        inside = (lam >= prior.lower) & (lam <= prior.upper)
        return np.where(inside, 1.0 / (prior.upper - prior.lower), 0.0)
    if isinstance(prior, Gamma):
        return prior.dist.pdf(lam)
    raise InvalidPriorError(f"{type(prior).__name__} prior has no density")


def log_density(prior: Prior, lam):
    if isinstance(prior, Gamma):
        return prior.dist.logpdf(lam)
    with np.errstate(divide="ignore"):
        return np.log(density(prior, lam))


def mean_log_lambda(prior: Prior) -> float:
    """E_Q log(lambda), in closed form."""
    if isinstance(prior, PointMass):
        return math.log(prior.lam)
    if isinstance(prior, TwoPoint):
        return prior.p * math.log(prior.lambda1) + (1 - prior.p) * math.log(prior.lambda2)
    if isinstance(prior, Uniform):
        a, b = prior.lower, prior.upper
        return (b * math.log(b) - b - a * math.log(a) + a) / (b - a)
    return float(special.digamma(prior.alpha) - math.log(prior.beta))


def laplace(prior: Prior, s):
    """E_Q exp(-lambda s) for s >= 0 (closed form)."""
    s = np.asarray(s, dtype=float)
    if isinstance(prior, PointMass):
        return np.exp(-prior.lam * s)
    if isinstance(prior, TwoPoint):
        return prior.p * np.exp(-prior.lambda1 * s) + (1 - prior.p) * np.exp(-prior.lambda2 * s)
    if isinstance(prior, Gamma):
        return np.exp(-prior.alpha * np.log1p(s / prior.beta))
    a, b = prior.lower, prior.upper
    safe = np.where(s > 0, s, 1.0)
    val = np.exp(-a * safe) * -np.expm1(-(b - a) * safe) / (safe * (b - a))
    return np.where(s > 0, val, 1.0)


# -- adaptive expectation ----------------------------------------------------------

def expect(prior: Prior, integrand: Callable[[float], float],
           quad: QuadratureConfig = QuadratureConfig()) -> float:
    """Adaptive ``E_Q integrand(lambda)`` with absolute error below ``quad.tol``
    (relative for large values).

    Raises :class:`QuadratureError` when QUADPACK does not converge and
    :class:`DivergenceError` when the integral is infinite.
    """
    if isinstance(prior, PointMass):
        return float(integrand(prior.lam))
    if isinstance(prior, TwoPoint):
        return float(prior.p * integrand(prior.lambda1)
                     + (1 - prior.p) * integrand(prior.lambda2))
    if isinstance(prior, Uniform):
        span = prior.upper - prior.lower
        val, _ = _quad(lambda lam: integrand(lam) / span, prior.lower, prior.upper, quad)
        return val

    dist = prior.dist

    overflow_at = []

    def weighted(lam):
        if lam <= 0:
            return 0.0
        try:
            f = float(integrand(lam))
        except OverflowError as exc:
            overflow_at.append(lam)
            raise DivergenceError(
                f"integrand overflowed at lambda={lam:.4g}; expectation treated as divergent") from exc
        if f == 0.0:
            return 0.0
        if not math.isfinite(f):
            raise DivergenceError(f"integrand is not finite at lambda={lam:.4g}")
        # log-space product: the density underflows where growing integrands overflow
        log_val = float(dist.logpdf(lam)) + math.log(abs(f))
        if log_val > 700.0:
            raise DivergenceError(f"integrand times density overflows at lambda={lam:.4g}")
        return math.copysign(math.exp(log_val), f)

    edges = [0.0, float(dist.ppf(1e-3)), float(dist.isf(1e-3)), float(dist.isf(quad.tail_mass))]
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        total += _quad(weighted, a, b, quad)[0]
    # upper tail over doubling intervals until the pieces become negligible
    a = edges[-1]
    small = 0
    for _ in range(60):
        b = 2.0 * a
        try:
            piece = _quad(weighted, a, b, quad)[0]
        except DivergenceError:
            # the integrand itself overflowed; accept the truncation at the
            # overflow point only if the weighted integrand is negligible there
            if not overflow_at:
                raise
            c, w_c = min(overflow_at), None
            while w_c is None and c > a:
                c *= 0.99
                try:
                    w_c = weighted(c)
                except DivergenceError:
                    pass
            if w_c is None:
                raise
            total += _quad(weighted, a, c, quad)[0]
            if c * abs(w_c) > 0.01 * quad.tol * max(1.0, abs(total)):
                raise
            return total
        total += piece
        if abs(piece) <= 0.01 * quad.tol * max(1.0, abs(total)):
            small += 1
            if small == 2:
                return total
        else:
            small = 0
        a = b
    raise DivergenceError("expectation does not converge in the upper tail of the Gamma prior")


def _quad(f, a, b, quad, divergence_hint=False):
    with np.errstate(all="ignore"):
        out = integrate.quad(f, a, b, epsabs=quad.tol * 0.1, epsrel=quad.tol * 0.1,
                             limit=quad.limit, full_output=1)
    val, err = out[0], out[1]
    if (math.isfinite(val) and math.isfinite(err)
            and err <= max(quad.tol, quad.tol * abs(val))):
        return val, err
    msg = (f"adaptive quadrature on [{a}, {b}] did not reach tol={quad.tol} "
           f"(estimate {val}, error {err})")
    if divergence_hint:
        raise DivergenceError(msg)
    raise QuadratureError(msg)


# -- fixed rules ---------------------------------------------------------------------

@dataclass(frozen=True)
class Rule:
    """Nodes and weights with ``sum_k w_k f(nodes_k) ~= E_Q f(lambda)``."""

    nodes: np.ndarray
    weights: np.ndarray
    log_weights: np.ndarray
    tilt: float = 0.0

    def __len__(self):
        return self.nodes.size

    def expect(self, values, axis=0):
        return np.tensordot(self.weights, values, axes=([0], [axis]))


def _gauss_legendre(order):
    return np.polynomial.legendre.leggauss(order)


def _composite(edges, order):
    t, w = _gauss_legendre(order)
    a = edges[:-1, None]
    b = edges[1:, None]
    nodes = ((b - a) / 2 * t + (a + b) / 2).ravel()
    weights = ((b - a) / 2 * w).ravel()
    return nodes, weights


def quadrature_rule(prior: Prior, quad: QuadratureConfig = QuadratureConfig(),
                    tilt: float = 0.0) -> Rule:
    """Fixed rule for ``E_Q``.

    ``tilt`` (Gamma only) widens the upper truncation so integrands growing
    like ``exp(tilt * lambda)`` are still captured; it must be below ``beta``.
    """
    if isinstance(prior, PointMass):
        nodes = np.array([prior.lam])
        w = np.array([1.0])
        return Rule(nodes, w, np.log(w))
    if isinstance(prior, TwoPoint):
        nodes = np.array([prior.lambda1, prior.lambda2])
        w = np.array([prior.p, 1 - prior.p])
        return Rule(nodes, w, np.log(w))
    if isinstance(prior, Uniform):
        span = prior.upper - prior.lower
        panels = min(quad.max_panels, max(4, math.ceil(span / quad.panel_width)))
        edges = np.linspace(prior.lower, prior.upper, panels + 1)
        nodes, w = _composite(edges, quad.order)
        w = w / span
        return Rule(nodes, w, np.log(w))

    a, beta = prior.alpha, prior.beta
    if not 0 <= tilt < beta:
        raise DivergenceError(
            f"integrand grows like exp({tilt} lambda); needs tilt < beta = {beta}")
    if a < 1:
        # density singular at 0: generalized Gauss-Laguerre absorbs lambda^(a-1)
        t, w = special.roots_genlaguerre(max(quad.order * 4, 64), a - 1)
        nodes = t / beta
        logw = np.log(w) - special.gammaln(a)
        return Rule(nodes, np.exp(logw), logw, tilt)
    dist = prior.dist
    lo = float(dist.ppf(quad.tail_mass))
    hi = float(stats.gamma.isf(quad.tail_mass, a, scale=1.0 / (beta - tilt)))
    sd = math.sqrt(a) / beta
    panels = min(quad.max_panels, max(8, math.ceil((hi - lo) / sd * quad.panels_per_sd)))
    edges = np.linspace(lo, hi, panels + 1)
    nodes, w = _composite(edges, quad.order)
    logw = np.log(w) + dist.logpdf(nodes)
    return Rule(nodes, np.exp(logw), logw, tilt)
