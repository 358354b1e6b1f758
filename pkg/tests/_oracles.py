"""Independent reference computations used by the tests.

Nothing here calls the package's quadrature or optimizer; each oracle is a
direct evaluation with mpmath, plain scipy.integrate.quad or exhaustive
enumeration.
"""
import math

import mpmath as mp
import numpy as np
from scipy import integrate, stats


def y_max_mp(dps=40):
    """Root of 2(1 - exp(-y)) = y at high precision."""
    with mp.workdps(dps):
        return float(mp.findroot(lambda y: 2 * (1 - mp.exp(-y)) - y, 1.6))


def r_mp(y, dps=40):
    with mp.workdps(dps):
        y = mp.mpf(y)
        return float(y * y / mp.expm1(y)) if y != 0 else 0.0


def uniform_expect(f, lower, upper, **kw):
    val, _ = integrate.quad(f, lower, upper, epsabs=1e-14, epsrel=1e-13, limit=500, **kw)
    return val / (upper - lower)


def gamma_expect(f, alpha, beta=1.0):
    dist = stats.gamma(alpha, scale=1.0 / beta)
    lo, hi = dist.ppf(1e-16), dist.isf(1e-16)
    mid = dist.mean()
    val = 0.0
    for a, b in ((lo, mid), (mid, hi)):
        v, _ = integrate.quad(lambda lam: f(lam) * dist.pdf(lam), a, b,
                              epsabs=0, epsrel=1e-13, limit=500)
        val += v
    return val


def fisher_direct(xs, ms, lam):
    """sum m x^2 e^{-lam x} / (1 - e^{-lam x}) written out term by term."""
    out = 0.0
    for x, m in zip(xs, ms):
        p = math.exp(-lam * x)
        out += m * x * x * p / (1.0 - p)
    return out


def slice_optimum_linear(g, grid, n, b):
    """max <g, m> over {m >= 0, sum m = n, sum x m = b} by enumerating the
    1- and 2-point vertices of the slice."""
    t = b / n
    best = -np.inf
    for i in range(len(grid)):
        if abs(grid[i] - t) <= 1e-15:
            best = max(best, n * g[i])
    left = np.flatnonzero(grid < t)
    right = np.flatnonzero(grid > t)
    for i in left:
        w = (grid[right] - t) / (grid[right] - grid[i])
        best = max(best, n * float(np.max(w * g[i] + (1 - w) * g[right])))
    return best


def brute_force_linear(g, grid, n):
    """max over all feasible (volume <= 1) 1- and 2-atom designs on the grid
    of sum m_j g(x_j); the best two-atom designs use the whole volume."""
    best = -np.inf
    for i in range(len(grid)):
        if n * grid[i] <= 1.0 + 1e-15:
            best = max(best, n * g[i])
    t = 1.0 / n
    for i in np.flatnonzero(grid < t):
        for j in np.flatnonzero(grid > t):
            w = (grid[j] - t) / (grid[j] - grid[i])
            best = max(best, n * (w * g[i] + (1 - w) * g[j]))
    return best


def equal_dose_variance(x, lam, n=30):
    """Exact variance of -log(k/n)/x over k ~ Binomial(n, e^{-lam x}),
    conditioned on 0 < k < n; also returns the boundary probability."""
    k = np.arange(1, n)
    p = math.exp(-lam * x)
    w = stats.binom.pmf(k, n, p)
    inside = w.sum()
    w = w / inside
    est = -np.log(k / n) / x
    mean = w @ est
    return float(w @ (est - mean) ** 2), float(1.0 - inside)


def g4_gamma_threshold(n=30):
    """alpha at which x -> -((1-x)^-alpha - 1)/(n x^2) peaks exactly at 1/n."""
    x = 1.0 / n

    def h(a):
        return a * x * (1 - x) ** (-a - 1) - 2 * ((1 - x) ** (-a) - 1)

    from scipy.optimize import brentq
    return brentq(h, 2.5, 500, xtol=1e-13)


def _dlogr(y):
    """x * d/dx log r(lambda x) at y = lambda x: 2 - y e^y / (e^y - 1)."""
    return 2.0 - y / -math.expm1(-y) if y > 0 else 1.0


def threshold_oracle(family, n=30):
    """Prior parameter where the first-order condition of the equal-dose
    objective holds exactly at x = 1/n, found by brentq."""
    from scipy.optimize import brentq
    x = 1.0 / n
    if family == "G3_uniform":
        h = lambda u: uniform_expect(lambda lam: _dlogr(lam * x), 1.0, u)
        return brentq(h, 50.0, 200.0, xtol=1e-10)
    if family == "G3_gamma":
        h = lambda a: gamma_expect(lambda lam: _dlogr(lam * x), a)
        return brentq(h, 20.0, 100.0, xtol=1e-10)
    if family == "G2_gamma":
        # d/dx of x^2 / (e^{lam x} - 1), times x, divided by x^2
        h = lambda a: gamma_expect(lambda lam: _dlogr(lam * x) * r_mp(lam * x) / (lam * x) ** 2, a)
        return brentq(h, 20.0, 100.0, xtol=1e-10)
    if family == "G4_uniform":
        def h(u):
            with mp.workdps(40):
                f = lambda t: -(mp.exp(u * t) - mp.exp(t) - t * (u - 1)) / (t ** 3 * (u - 1))
                return float(mp.diff(f, mp.mpf(1) / n))
        return brentq(h, 20.0, 200.0, xtol=1e-10)
    if family == "G4_gamma":
        return g4_gamma_threshold(n)
    raise ValueError(family)


def g4_cost_gamma_mp(x, alpha, n=30, c1=0.005, c2=5.0, dps=60):
    """Equal-dose G4_cost under Gamma(alpha, 1), every expectation in closed
    form through the Gamma moment generating function; the alternating sum
    for E(1 - e^{-lam x})^n needs extra precision."""
    with mp.workdps(dps):
        x = mp.mpf(x)
        g4 = -((1 - x) ** (-alpha) - 1) / (n * x * x)
        t1 = n * (1 + x) ** (-alpha)
        t20 = mp.fsum(mp.binomial(n, k) * (-1) ** k * (1 + k * x) ** (-alpha) for k in range(n + 1))
        t21 = (1 + n * x) ** (-alpha)
        return float(g4 - c1 * t1 - c2 * (t20 + t21))


def g4_cost_gamma_xmax(alpha, **kw):
    from scipy.optimize import minimize_scalar
    xs = np.geomspace(1e-3, 0.5, 400)
    vals = [g4_cost_gamma_mp(x, alpha, **kw) for x in xs]
    i = int(np.argmax(vals))
    res = minimize_scalar(lambda x: -g4_cost_gamma_mp(x, alpha, **kw),
                          bracket=(xs[i - 1], xs[i], xs[i + 1]), tol=1e-12)
    return float(res.x)
