"""Monte Carlo simulation of the dilution experiment and the MLE of lambda.

Mouse ``i`` receives volume ``x_i``; its dose is sterile (the mouse does not
repopulate, ``chi_i = True``) with probability ``exp(-lambda x_i)``.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .criteria import fisher_information
from .errors import BracketError, InvalidArgumentError, InvalidMeasureError
from .measure import DesignMeasure, normalize

ALL_STERILE = "all_sterile"    # every mouse non-repopulated: lambda_hat = 0
NONE_STERILE = "none_sterile"  # every mouse repopulated: lambda_hat = inf
RNG_NAME = "PCG64"


@dataclass(frozen=True)
class ExperimentOutcome:
    indicators: np.ndarray  # True = mouse did not repopulate
    doses: np.ndarray
    lambda_hat: float
    flag: str | None = None

    def __post_init__(self):
        if len(self.indicators) != len(self.doses):
            raise InvalidArgumentError("indicators and doses differ in length")

    @property
    def is_boundary(self) -> bool:
        return self.flag is not None

    def to_dict(self):
        lam = None if math.isinf(self.lambda_hat) else self.lambda_hat
        return {"indicators": [bool(c) for c in self.indicators],
                "doses": [float(x) for x in self.doses],
                "lambda_hat": lam, "flag": self.flag}


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def expand_doses(design: DesignMeasure, tol: float = 1e-9) -> np.ndarray:
    """One volume per mouse; the masses must be whole numbers."""
    design = normalize(design, drop_tol=0.0)
    m = design.masses
    counts = np.rint(m)
    if np.any(np.abs(m - counts) > tol):
        raise InvalidMeasureError(
            "design masses must be integers (round with round_to_integer_design first)")
    return np.repeat(design.locations, counts.astype(int))


def simulate_experiment(design: DesignMeasure, lambda_true: float, rng_seed=None) -> ExperimentOutcome:
    """Draw the sterility indicators for one experiment and estimate lambda."""
    if not lambda_true >= 0:
        raise InvalidArgumentError("lambda_true must be nonnegative")
    doses = expand_doses(design)
    if doses.size == 0:
        raise InvalidMeasureError("design has no mice")
    rng = _rng(rng_seed)
    chi = rng.random(doses.size) < np.exp(-lambda_true * doses)
    lam, flag = mle_from_indicators(chi, doses)
    return ExperimentOutcome(chi, doses, lam, flag)


# -- maximum likelihood --------------------------------------------------------------

def log_likelihood(lam, indicators, doses) -> float:
    """``-sum chi x lambda + sum (1 - chi) log(1 - exp(-lambda x))``."""
    chi = np.asarray(indicators, dtype=bool)
    x = np.asarray(doses, dtype=float)
    lx = lam * x
    with np.errstate(divide="ignore"):
        rep = np.log(-np.expm1(-lx[~chi]))
    return float(-lx[chi].sum() + rep.sum())


def score(lam: float, sterile_x: float, x_rep: np.ndarray, n_rep: np.ndarray) -> float:
    """Derivative of the log-likelihood; ``sterile_x`` is the summed volume of
    sterile doses, ``x_rep, n_rep`` the distinct volumes of repopulating doses
    and their counts."""
    with np.errstate(over="ignore"):
        return float(-sterile_x + np.sum(n_rep * x_rep / np.expm1(lam * x_rep)))


def _score_slope(lam, x_rep, n_rep):
    y = lam * x_rep
    with np.errstate(over="ignore", invalid="ignore"):
        t = np.where(y > 700, 0.0, x_rep * x_rep * np.exp(y) / np.expm1(y) ** 2)
    return float(-np.sum(n_rep * t))


def mle_from_counts(x, n_total, n_sterile, xtol=1e-14, max_iter=200):
    """MLE of lambda from per-dose counts; returns (lambda_hat, flag)."""
    x = np.asarray(x, dtype=float)
    n_total = np.asarray(n_total, dtype=float)
    n_sterile = np.asarray(n_sterile, dtype=float)
    if x.size == 0 or n_total.sum() <= 0:
        raise InvalidArgumentError("need at least one dose")
    n_rep = n_total - n_sterile
    if np.all(n_rep == 0):
        return 0.0, ALL_STERILE
    if np.all(n_sterile == 0):
        return math.inf, NONE_STERILE
    sx = float(n_sterile @ x)
    keep = n_rep > 0
    xr, nr = x[keep], n_rep[keep]

    def S(lam):
        return score(lam, sx, xr, nr)

    # pooled equal-dose estimate as the starting point
    p_hat = n_sterile.sum() / n_total.sum()
    x_bar = float(n_total @ x / n_total.sum())
    lam = -math.log(p_hat) / x_bar
    lo, hi = lam, lam
    for _ in range(2000):
        if S(lo) > 0:
            break
        lo *= 0.5
    else:
        raise BracketError("could not bracket the score root from below")
    for _ in range(2000):
        if S(hi) < 0:
            break
        hi *= 2.0
    else:
        raise BracketError("could not bracket the score root from above")
    lam = min(max(lam, lo), hi)
    for _ in range(max_iter):
        s = S(lam)
        if s == 0.0:
            return lam, None
        if s > 0:
            lo = lam
        else:
            hi = lam
        d = _score_slope(lam, xr, nr)
        new = lam - s / d if d < 0 else math.nan
        if not lo < new < hi:
            new = math.sqrt(lo * hi)  # bisection on the log scale
        if abs(new - lam) <= xtol * lam:
            return new, None
        lam = new
        if (hi - lo) <= xtol * lo:
            return 0.5 * (lo + hi), None
    raise BracketError("score iteration did not converge")


def mle_from_indicators(indicators, doses):
    chi = np.asarray(indicators, dtype=bool)
    x = np.asarray(doses, dtype=float)
    if x.size == 0:
        raise InvalidArgumentError("need at least one dose")
    ux, inv = np.unique(x, return_inverse=True)
    n_total = np.bincount(inv, minlength=ux.size)
    n_sterile = np.bincount(inv, weights=chi.astype(float), minlength=ux.size)
    return mle_from_counts(ux, n_total, n_sterile)


def mle(outcome: ExperimentOutcome):
    """Maximum-likelihood estimate for an outcome; returns (lambda_hat, flag)."""
    return mle_from_indicators(outcome.indicators, outcome.doses)


def equal_dose_mle(n_sterile: int, n: int, x: float) -> float:
    """Closed form ``-log(p_hat) / x`` for n equal doses."""
    return -math.log(n_sterile / n) / x


# -- variance study ------------------------------------------------------------------

@dataclass(frozen=True)
class VarianceReport:
    empirical_var: float | None
    fisher_info: float
    product: float | None
    boundary_freq: float
    R: int
    seed: int | None
    rng: str = RNG_NAME
    lambda_true: float = math.nan
    mean_estimate: float | None = None
    unreliable: bool = False

    def to_dict(self):
        return asdict(self)

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def variance_study(design: DesignMeasure, lambda_true: float, replicates: int = 100_000,
                   rng_seed=None, return_estimates: bool = False):
    """Empirical variance of the MLE over ``replicates`` simulated experiments.

    Only the number of sterile doses at each distinct volume matters for the
    MLE, so each replicate draws one binomial count per volume; estimates are
    cached per distinct count vector.
    """
    if replicates < 1000:
        raise InvalidArgumentError("variance_study needs at least 1000 replicates")
    if not lambda_true > 0:
        raise InvalidArgumentError("lambda_true must be positive")
    doses = expand_doses(design)
    ux, n_total = np.unique(doses, return_counts=True)
    rng = _rng(rng_seed)
    p = np.exp(-lambda_true * ux)
    counts = np.column_stack([rng.binomial(n, pj, size=replicates)
                              for n, pj in zip(n_total, p)])
    uniq, inv = np.unique(counts, axis=0, return_inverse=True)
    est = np.empty(len(uniq))
    boundary = np.zeros(len(uniq), dtype=bool)
    for k, row in enumerate(uniq):
        lam, flag = mle_from_counts(ux, n_total, row)
        est[k] = lam
        boundary[k] = flag is not None
    inv = inv.reshape(-1)
    lam_hat = est[inv]
    is_b = boundary[inv]
    interior = lam_hat[~is_b]
    info = fisher_information(DesignMeasure(ux, n_total.astype(float)), lambda_true)
    var = float(np.var(interior, ddof=1)) if interior.size > 1 else None
    bfreq = float(is_b.mean())
    report = VarianceReport(
        empirical_var=var, fisher_info=float(info),
        product=None if var is None else var * float(info),
        boundary_freq=bfreq, R=int(replicates),
        seed=rng_seed if isinstance(rng_seed, (int, type(None))) else None,
        lambda_true=float(lambda_true),
        mean_estimate=float(interior.mean()) if interior.size else None,
        unreliable=bfreq > 0.5 or var is None)
    if return_estimates:
        return report, lam_hat
    return report


def estimates_to_csv(lam_hat) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["replicate", "lambda_hat"])
    for i, v in enumerate(np.asarray(lam_hat, dtype=float)):
        w.writerow([i, repr(float(v))])
    return buf.getvalue()


def variance_ratio_test(var_a: float, n_a: int, var_b: float, n_b: int) -> float:
    """One-sided p-value for H0: var_a >= var_b against var_a < var_b (F test)."""
    from scipy import stats
    return float(stats.f.cdf(var_a / var_b, n_a - 1, n_b - 1))
