"""Design optimization over measures with fixed total mass and a volume budget.

The support is discretized on a log grid.  For each volume budget ``b`` the
mass vector is optimized on the slice ``{m >= 0, sum m = n, sum x m = b}``
by projected gradient ascent; an outer scan (plus golden-section refinement)
picks the best ``b <= 1``.  Optimality is then checked against the
Kuhn-Tucker conditions

    g(x; mu) <= u1 + u2 x  for all x,  with equality on the support of mu,

where ``u2 >= 0`` and ``u2 = 0`` unless the whole volume is used.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy import optimize as sopt

from .criteria import Criterion, Objective, evaluate
from .errors import InfeasibleError, InvalidCriterionError
from .measure import DesignMeasure, normalize, total_mass, total_volume
from .priors import QuadratureConfig

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
COLLAPSE_GAP = 0.05  # relative spacing below which neighboring atoms are merged


@dataclass(frozen=True)
class StepRule:
    """Armijo backtracking parameters."""

    initial_step: float = 1.0
    shrink: float = 0.5
    sufficient_decrease: float = 1e-4

    def __post_init__(self):
        if not self.initial_step > 0:
            raise InvalidCriterionError("initial_step must be positive")
        if not 0 < self.shrink < 1:
            raise InvalidCriterionError("shrink factor must lie in (0, 1)")
        if not 0 < self.sufficient_decrease < 1:
            raise InvalidCriterionError("sufficient_decrease must lie in (0, 1)")


@dataclass(frozen=True)
class OptimizerConfig:
    grid_points: int = 2000
    x_min: float = 1e-4
    budget_scan: tuple | None = None  # explicit budgets; default is a linear scan
    budget_points: int = 50
    golden_iters: int = 15
    step_rule: StepRule = field(default_factory=StepRule)
    max_iters: int = 3000
    grad_tol: float = 1e-9
    refine_rounds: int = 3
    cert_tol: float = 1e-6
    slack_tol: float = 1e-6

    def __post_init__(self):
        if int(self.grid_points) != self.grid_points or self.grid_points < 2:
            raise InvalidCriterionError("grid_points must be an integer >= 2")
        if not 0 < self.x_min < 1:
            raise InvalidCriterionError("x_min must lie in (0, 1)")
        if self.budget_scan is not None:
            b = tuple(float(v) for v in self.budget_scan)
            if not b or any(not 0 < v <= 1 for v in b):
                raise InvalidCriterionError("all budgets must lie in (0, 1]")
            object.__setattr__(self, "budget_scan", b)
        if self.budget_points < 1 or self.golden_iters < 0 or self.max_iters < 1:
            raise InvalidCriterionError("budget_points, golden_iters, max_iters must be positive")
        if self.refine_rounds < 0:
            raise InvalidCriterionError("refine_rounds must be >= 0")
        for name in ("grad_tol", "cert_tol", "slack_tol"):
            if not getattr(self, name) > 0:
                raise InvalidCriterionError(f"{name} must be positive")
        if isinstance(self.step_rule, dict):
            object.__setattr__(self, "step_rule", StepRule(**self.step_rule))

    def to_dict(self):
        d = asdict(self)
        if d["budget_scan"] is not None:
            d["budget_scan"] = list(d["budget_scan"])
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "step_rule" in d:
            d["step_rule"] = StepRule(**d["step_rule"])
        if d.get("budget_scan") is not None:
            d["budget_scan"] = tuple(d["budget_scan"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidCriterionError(f"bad optimizer config: {exc}") from exc


@dataclass(frozen=True)
class OptimalityCertificate:
    u1: float
    u2: float
    volume_active: bool
    max_violation: float
    support_residual: float
    tolerance: float = 0.0  # absolute threshold actually applied
    passed: bool = False
    diagnostic: str = ""

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


@dataclass(frozen=True)
class TraceRow:
    budget: float
    objective: float
    iterations: int
    certified: bool


class OptimizeResult(NamedTuple):
    measure: DesignMeasure
    certificate: OptimalityCertificate
    trace: list


def trace_to_csv(trace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["budget", "objective", "iterations", "certified"])
    for row in trace:
        w.writerow([repr(row.budget), repr(row.objective), row.iterations,
                    str(row.certified).lower()])
    return buf.getvalue()


def make_grid(config: OptimizerConfig = OptimizerConfig()) -> np.ndarray:
    """Log-spaced support grid on [x_min, 1]."""
    return np.geomspace(config.x_min, 1.0, int(config.grid_points))


# -- projection onto the feasible slice --------------------------------------------

def _simplex_project(w, n):
    """Euclidean projection of ``w`` onto {m >= 0, sum m = n}; returns the shift."""
    u = np.sort(w)[::-1]
    css = np.cumsum(u) - n
    k = np.arange(1, u.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    return css[rho] / (rho + 1.0)


def _polish(m, x, n, b):
    """Remove rounding residue in the two equality constraints on the support."""
    for _ in range(3):
        s = m > 0
        r = np.array([n - m[s].sum(), b - x[s] @ m[s]])
        if abs(r[0]) <= 1e-15 * n and abs(r[1]) <= 1e-15 * n:
            break
        xs = x[s]
        H = np.array([[xs.size, xs.sum()], [xs.sum(), xs @ xs]])
        if xs.size < 2 or np.linalg.cond(H) > 1e14:
            if xs.size >= 1:
                m[s] += r[0] / xs.size
            break
        nu = np.linalg.solve(H, r)
        m[s] = np.maximum(m[s] + nu[0] + nu[1] * xs, 0.0)
    return m


def project_slice(v, x, n: float, b: float) -> np.ndarray:
    """Euclidean projection of ``v`` onto {m >= 0, sum m = n, sum x m = b}.

    Solved through the two-dimensional dual: ``m = max(0, v - nu0 - nu1 x)``
    with (nu0, nu1) found by semismooth Newton, falling back to a nested
    scalar root search when Newton stalls.
    """
    v = np.asarray(v, dtype=float)
    x = np.asarray(x, dtype=float)
    lo_b, hi_b = n * x.min(), n * x.max()
    if b < lo_b * (1 - 1e-12) or b > hi_b * (1 + 1e-12):
        raise InfeasibleError(
            f"budget {b} outside the feasible range [{lo_b}, {hi_b}] for this grid")
    if b <= lo_b * (1 + 1e-12) or b >= hi_b * (1 - 1e-12):
        m = np.zeros_like(v)
        m[np.argmin(x) if b <= lo_b * (1 + 1e-12) else np.argmax(x)] = n
        return m
    # affine change of the volume coordinate keeps the dual well conditioned
    c = float(x.mean())
    sc = float(np.ptp(x)) / 2.0 or 1.0
    xt = (x - c) / sc
    bt = (b - c * n) / sc
    m = _project_newton(v, xt, n, bt)
    if m is None:
        m = _project_nested(v, xt, n, bt)
    return _polish(m, xt, n, bt)


def _project_newton(v, x, n, b, max_iter=60):
    c = np.array([n, b])
    N = v.size
    sx, sxx = x.sum(), x @ x
    H0 = np.array([[N, sx], [sx, sxx]])
    nu = np.linalg.solve(H0, np.array([v.sum() - n, x @ v - b]))

    def phi(nu):
        z = np.maximum(v - nu[0] - nu[1] * x, 0.0)
        return 0.5 * (z @ z) + nu @ c, z

    f, z = phi(nu)
    vmax = float(np.max(np.abs(v)))
    for _ in range(max_iter):
        s = z > 0
        F = np.array([z.sum() - n, x @ z - b])
        # residual floor set by rounding in v - nu0 - nu1 x
        tol = 1e-13 * n + 1e-14 * s.sum() * (vmax + abs(nu[0]) + abs(nu[1]))
        if abs(F[0]) <= tol and abs(F[1]) <= tol:
            return z
        xs = x[s]
        H = np.array([[xs.size, xs.sum()], [xs.sum(), xs @ xs]])
        H += 1e-14 * np.trace(H0) * np.eye(2)
        try:
            step = np.linalg.solve(H, F)
        except np.linalg.LinAlgError:
            return None
        t = 1.0
        slope = -(F @ step)
        while t > 1e-6:
            f_new, z_new = phi(nu + t * step)
            if f_new <= f + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            return None
        nu = nu + t * step
        f, z = f_new, z_new
    return None


def _project_nested(v, x, n, b):
    def m_of(nu1):
        w = v - nu1 * x
        return np.maximum(w - _simplex_project(w, n), 0.0)

    def h(nu1):
        return x @ m_of(nu1) - b

    span = (np.ptp(v) + n) / max(np.ptp(x), 1e-300) + 1.0
    lo, hi = -span, span
    while h(lo) < 0:
        lo *= 2
    while h(hi) > 0:
        hi *= 2
    nu1 = sopt.brentq(h, lo, hi, xtol=1e-15 * span, rtol=4 * np.finfo(float).eps,
                      maxiter=500)
    return m_of(nu1)


# -- inner solve ---------------------------------------------------------------------

def _hull_value(x, g, t):
    """Upper concave envelope of the points (x_i, g_i) evaluated at ``t``."""
    hx, hg = [], []
    for xi, gi in zip(x.tolist(), g.tolist()):
        while len(hx) >= 2 and ((hx[-1] - hx[-2]) * (gi - hg[-2])
                                - (hg[-1] - hg[-2]) * (xi - hx[-2])) >= 0:
            hx.pop()
            hg.pop()
        hx.append(xi)
        hg.append(gi)
    return float(np.interp(t, hx, hg))


def frank_wolfe_gap(x, g, m, n, b) -> float:
    """max over the slice of <g, s - m>; zero exactly at slice optima."""
    return n * _hull_value(x, g, b / n) - float(g @ m)


class InnerResult(NamedTuple):
    masses: np.ndarray
    value: float
    iterations: int
    converged: bool
    gap: float


def _ascend(obj: Objective, n, b, start, config: OptimizerConfig, check_every=5):
    x = obj.x
    rule = config.step_rule
    m = project_slice(start, x, n, b)
    f, g = obj.value_and_gradient(m)
    if np.count_nonzero(x * n <= b * (1 + 1e-12)) == 1 and b <= n * x.min() * (1 + 1e-12):
        return InnerResult(m, f, 0, True, 0.0)
    step = rule.initial_step
    gap = np.inf
    for it in range(1, config.max_iters + 1):
        scale = float(np.max(np.abs(g)))
        if scale == 0.0:
            return InnerResult(m, f, it - 1, True, 0.0)
        if it % check_every == 1 or check_every == 1:
            gap = frank_wolfe_gap(x, g, m, n, b)
            if gap <= config.grad_tol * n * scale:
                return InnerResult(m, f, it - 1, True, gap)
        d = (n / scale) * g
        accepted = False
        while step > 1e-14:
            cand = project_slice(m + step * d, x, n, b)
            delta = cand - m
            ascent = float(g @ delta)
            if ascent <= 0.0 or not np.any(delta):
                step *= rule.shrink
                continue
            f_c = obj.value(cand)
            if f_c >= f + rule.sufficient_decrease * ascent:
                accepted = True
                break
            step *= rule.shrink
        if not accepted:
            gap = frank_wolfe_gap(x, g, m, n, b)
            return InnerResult(m, f, it, gap <= config.grad_tol * n * scale, gap)
        m = cand
        f, g = obj.value_and_gradient(m)
        step = min(2.0 * step, 1e12 * rule.initial_step)
    scale = float(np.max(np.abs(g)))
    gap = frank_wolfe_gap(x, g, m, n, b)
    return InnerResult(m, f, config.max_iters, gap <= config.grad_tol * n * scale, gap)


def inner_solve(criterion: Criterion, n: float, budget_b: float, grid, start=None,
                config: OptimizerConfig = OptimizerConfig(),
                quad: QuadratureConfig = QuadratureConfig()) -> DesignMeasure:
    """Maximize the criterion on the slice with ``total_volume = budget_b``.

    ``start`` is a DesignMeasure supported on ``grid`` (or a mass vector);
    by default mass is spread uniformly and projected onto the slice.
    """
    grid = np.asarray(grid, dtype=float)
    obj = Objective(criterion, grid, quad)
    res = _ascend(obj, n, budget_b, _start_vector(start, grid, n), config)
    return _to_measure(grid, res.masses)


def _start_vector(start, grid, n):
    if start is None:
        return np.full(grid.size, n / grid.size)
    if isinstance(start, DesignMeasure):
        v = np.zeros(grid.size)
        idx = np.clip(np.searchsorted(grid, start.locations), 0, grid.size - 1)
        for i, mi in zip(idx, start.masses):
            j = i if i == 0 or abs(grid[i] - start.locations[0]) < abs(
                grid[i - 1] - start.locations[0]) else i - 1
            v[j] += mi
        return v
    return np.asarray(start, dtype=float)


def _to_measure(grid, m):
    keep = m > 0
    return DesignMeasure(grid[keep], m[keep])


# -- outer budget search -------------------------------------------------------------

def _budget_search(obj: Objective, n, config: OptimizerConfig, budgets, extra=()):
    """Scan the budgets, then golden-section refine around the best one."""
    x = obj.x
    lo_b = n * x.min()
    hi_b = min(1.0, n * x.max())
    if lo_b > 1.0 + 1e-12:
        raise InfeasibleError(
            f"n * x_min = {lo_b:.6g} exceeds the unit volume; no feasible design")
    uniform = np.full(x.size, n / x.size)
    trace = []
    results = {}

    def solve(b, start):
        b = float(min(max(b, lo_b), hi_b))
        if b in results:
            return results[b]
        res = _ascend(obj, n, b, start, config)
        results[b] = res
        trace.append(TraceRow(b, res.value, res.iterations, res.converged))
        return res

    scan = sorted(set(float(min(max(b, lo_b), hi_b)) for b in list(budgets) + list(extra)))
    for b in scan:
        solve(b, uniform)

    def best_key(b):
        # larger objective first, smaller budget wins ties
        return (results[b].value, -b)

    b_best = max(results, key=best_key)
    if config.golden_iters > 0 and len(scan) > 1:
        i = scan.index(b_best)
        a = scan[max(i - 1, 0)]
        c = scan[min(i + 1, len(scan) - 1)]
        warm = results[b_best].masses
        p = c - GOLDEN * (c - a)
        q = a + GOLDEN * (c - a)
        fp = solve(p, warm).value
        fq = solve(q, warm).value
        for _ in range(config.golden_iters):
            if fp >= fq:
                c, q, fq = q, p, fp
                p = c - GOLDEN * (c - a)
                fp = solve(p, warm).value
            else:
                a, p, fp = p, q, fq
                q = a + GOLDEN * (c - a)
                fq = solve(q, warm).value
        b_best = max(results, key=best_key)
    return b_best, results[b_best], trace


def _default_budgets(n, x, config):
    if config.budget_scan is not None:
        return list(config.budget_scan)
    lo_b = n * x.min()
    hi_b = min(1.0, n * x.max())
    return list(np.linspace(lo_b, hi_b, config.budget_points))


def _clean(grid, m, n, b, tol=1e-8):
    """Drop negligible masses and re-project onto the slice on what remains."""
    m = m.copy()
    small = (m > 0) & (m < tol * n)
    if np.any(small):
        m[small] = 0.0
        keep = m > 0
        xs = grid[keep]
        if xs.size >= 2 and n * xs.min() <= b <= n * xs.max():
            m[keep] = project_slice(m[keep], xs, n, b)
        elif xs.size == 1:
            m[keep] = n
    return _to_measure(grid, m)


def optimize(criterion: Criterion, n: float = 30,
             config: OptimizerConfig = OptimizerConfig(),
             quad: QuadratureConfig = QuadratureConfig()) -> OptimizeResult:
    """Best design over all volume budgets ``b <= 1`` with its certificate."""
    if not n > 0:
        raise InvalidCriterionError("n must be positive")
    if n * config.x_min > 1.0:
        raise InfeasibleError(
            f"n * x_min = {n * config.x_min:.6g} > 1: even the smallest doses overflow the substrate")
    grid = make_grid(config)
    obj = Objective(criterion, grid, quad)
    b, res, trace = _budget_search(obj, n, config, _default_budgets(n, grid, config))
    mu = _clean(grid, res.masses, n, b)
    if config.budget_scan is None:
        mu = _snap(criterion, mu, n, quad, trace)
    if config.refine_rounds > 0:
        mu = refine(criterion, n, mu, config.refine_rounds, config=config, quad=quad)
    cert = certify(criterion, mu, config.cert_tol, grid, n=n,
                   slack_tol=config.slack_tol, quad=quad)
    return OptimizeResult(mu, cert, trace)


def _snap(criterion, mu, n, quad, trace):
    """Try the equal-dose designs at each support point.

    A continuous budget search rarely lands exactly on ``b = n * x_j``; it then
    keeps a sliver of mass far away to meet the budget.  The one-atom vertex
    replaces such a design when it is at least as good.  Each vertex tried is
    appended to ``trace`` as one more budget.
    """
    best, best_val = mu, evaluate(criterion, mu, quad).value
    if len(mu) < 2:
        return mu
    for x in mu.locations:
        if n * x > 1.0:
            continue
        cand = DesignMeasure([x], [n])
        v = evaluate(criterion, cand, quad).value
        trace.append(TraceRow(float(n * x), float(v), 0, True))
        if v >= best_val:
            best, best_val = cand, v
    return best


# -- refinement ------------------------------------------------------------------------

def collapse(mu: DesignMeasure, gap: float = COLLAPSE_GAP) -> DesignMeasure:
    """Merge runs of atoms whose relative spacing is at most ``gap`` into their
    mass-weighted centroid (mass and volume are preserved)."""
    mu = normalize(mu, drop_tol=0.0)
    if len(mu) <= 1:
        return mu
    x, m = mu.locations, mu.masses
    xs, ms = [], []
    run_x, run_m = [x[0]], [m[0]]
    for xi, mi in zip(x[1:], m[1:]):
        if xi <= run_x[-1] * (1.0 + gap):
            run_x.append(xi)
            run_m.append(mi)
        else:
            xs.append(np.dot(run_x, run_m) / np.sum(run_m))
            ms.append(np.sum(run_m))
            run_x, run_m = [xi], [mi]
    xs.append(np.dot(run_x, run_m) / np.sum(run_m))
    ms.append(np.sum(run_m))
    return DesignMeasure(np.minimum(xs, 1.0), ms)


def _local_grid(centers, ratio, half_width=4, density=10, x_min=None):
    pts = []
    step = math.log(ratio) / density
    offsets = np.arange(-half_width * density, half_width * density + 1) * step
    for c in centers:
        pts.append(c * np.exp(offsets))
        pts.append([c])
    g = np.unique(np.concatenate(pts))
    lo = x_min if x_min is not None else 0.0
    return g[(g > lo) & (g <= 1.0)]


def refine(criterion: Criterion, n: float, coarse_result: DesignMeasure, rounds: int = 3,
           config: OptimizerConfig = OptimizerConfig(),
           quad: QuadratureConfig = QuadratureConfig()) -> DesignMeasure:
    """Collapse neighboring atoms and re-optimize on successively finer local grids.

    The returned design is never worse than the input.
    """
    def value(mu):
        return evaluate(criterion, mu, quad).value

    best = normalize(coarse_result, drop_tol=0.0)
    best_val = value(best)
    ratio = (1.0 / config.x_min) ** (1.0 / (config.grid_points - 1))
    cand = collapse(best)
    for _ in range(rounds):
        if len(cand) == 0:
            break
        grid = _local_grid(cand.locations, ratio, x_min=config.x_min * 0.999)
        if grid.size < 2 or n * grid.min() > 1.0:
            break
        obj = Objective(criterion, grid, quad)
        b0 = float(total_volume(cand))
        local_cfg = replace(config, budget_scan=None, budget_points=21)
        budgets = _default_budgets(n, grid, local_cfg)
        b, res, _ = _budget_search(obj, n, local_cfg, budgets, extra=[b0, 1.0])
        local = _clean(grid, res.masses, n, b)
        cand = collapse(local)
        ratio = ratio ** (1.0 / 10)
        for m_try in (cand, local):
            v = value(m_try)
            if v > best_val + 1e-13 * abs(best_val):
                best, best_val = m_try, v
    # prefer the collapsed form when it is at least as good
    merged = collapse(best)
    if len(merged) < len(best) and value(merged) >= best_val - 1e-13 * abs(best_val):
        best = merged
    return best


# -- certificate ---------------------------------------------------------------------

def certify(criterion: Criterion, mu: DesignMeasure, cert_tol: float = 1e-6, grid=None,
            n: float | None = None, volume_budget: float = 1.0, slack_tol: float = 1e-6,
            quad: QuadratureConfig = QuadratureConfig(), relative: bool = True,
            fd_step: float = 1e-7) -> OptimalityCertificate:
    """Kuhn-Tucker check of ``mu`` on ``grid`` plus the support of ``mu``.

    With ``relative=True`` the tolerance is ``cert_tol * max|g|`` over the
    checked points, so the test does not depend on the units of the criterion.
    """
    mu = normalize(mu, drop_tol=0.0)
    if len(mu) == 0:
        raise InvalidCriterionError("cannot certify the empty measure")
    if grid is None:
        grid = make_grid()
    grid = np.asarray(grid, dtype=float)
    res = evaluate(criterion, mu, quad)
    xs, ms = mu.locations, mu.masses
    pts = np.union1d(grid, xs)
    g_pts = res.gradient(pts)
    g_sup = res.gradient(xs)
    scale = float(np.max(np.abs(g_pts)))
    tol = cert_tol * scale if relative else cert_tol
    vol = total_volume(mu)
    active = vol >= volume_budget * (1.0 - slack_tol)
    diag = ""
    if not active:
        u2 = 0.0
        u1 = float(np.max(g_sup))
    elif len(xs) >= 2:
        A = np.column_stack([np.ones_like(xs), xs])
        (u1, u2), *_ = np.linalg.lstsq(A, g_sup, rcond=None)
        u1, u2 = float(u1), float(u2)
    else:
        x0 = float(xs[0])
        h = fd_step * x0
        lo, hi = max(x0 - h, 1e-300), min(x0 + h, 1.0)
        u2 = float((res.gradient(hi) - res.gradient(lo)) / (hi - lo))
        u1 = float(g_sup[0] - u2 * x0)
    viol = float(np.max(g_pts - u1 - u2 * pts))
    resid = float(np.max(np.abs(g_sup - u1 - u2 * xs)))
    passed = viol <= tol and resid <= tol
    if active and u2 < -tol:
        passed = False
        diag = f"negative volume multiplier u2 = {u2:.6g} with the volume constraint active"
    elif not passed:
        if viol > tol:
            worst = float(pts[int(np.argmax(g_pts - u1 - u2 * pts))])
            diag = f"gradient exceeds u1 + u2 x by {viol:.3g} at x = {worst:.6g}"
        else:
            diag = f"gradient not constant on the support (residual {resid:.3g})"
    if n is not None and abs(total_mass(mu) - n) > 1e-6 * n:
        passed = False
        diag = (diag + "; " if diag else "") + f"total mass {total_mass(mu)} != {n}"
    return OptimalityCertificate(u1=u1, u2=u2, volume_active=bool(active),
                                 max_violation=viol, support_residual=resid,
                                 tolerance=tol, passed=bool(passed), diagnostic=diag)
