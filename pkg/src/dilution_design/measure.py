"""Finite atomic design measures on (0, 1].

A design ``sum_j m_j delta_{x_j}`` gives ``m_j`` mice a dose of volume
``x_j`` (as a fraction of the whole substrate).
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidMeasureError, RoundingError

MERGE_TOL = 1e-10
DROP_TOL = 1e-9


class DesignMeasure:
    """Immutable atomic measure. Locations in (0, 1], masses >= 0."""

    __slots__ = ("_x", "_m")

    def __init__(self, locations=(), masses=()):
        x = np.array(locations, dtype=float).reshape(-1)
        m = np.array(masses, dtype=float).reshape(-1)
        if x.shape != m.shape:
            raise InvalidMeasureError(
                f"{x.size} locations but {m.size} masses")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(m))):
            raise InvalidMeasureError("locations and masses must be finite")
        if np.any(x <= 0.0) or np.any(x > 1.0):
            raise InvalidMeasureError(
                "dose volumes must lie in (0, 1]; got "
                f"min={x.min() if x.size else None}, max={x.max() if x.size else None}")
        if np.any(m < 0.0):
            raise InvalidMeasureError("masses must be nonnegative")
        x.flags.writeable = False
        m.flags.writeable = False
        self._x = x
        self._m = m

    @classmethod
    def point(cls, x, mass):
        return cls([x], [mass])

    @classmethod
    def empty(cls):
        return cls()

    @property
    def locations(self) -> np.ndarray:
        return self._x

    @property
    def masses(self) -> np.ndarray:
        return self._m

    x = locations
    m = masses

    def __len__(self):
        return self._x.size

    def __iter__(self):
        return iter(zip(self._x.tolist(), self._m.tolist()))

    def __eq__(self, other):
        if not isinstance(other, DesignMeasure):
            return NotImplemented
        return (np.array_equal(self._x, other._x)
                and np.array_equal(self._m, other._m))

    def __hash__(self):
        return hash((self._x.tobytes(), self._m.tobytes()))

    def __add__(self, other):
        if not isinstance(other, DesignMeasure):
            return NotImplemented
        return DesignMeasure(np.concatenate([self._x, other._x]),
                             np.concatenate([self._m, other._m]))

    def scaled(self, t: float) -> DesignMeasure:
        if t < 0:
            raise InvalidMeasureError("scale factor must be nonnegative")
        return DesignMeasure(self._x, t * self._m)

    def __repr__(self):
        atoms = " + ".join(f"{m:.6g}*d({x:.6g})" for x, m in self)
        return f"DesignMeasure({atoms or '0'})"

    # -- serialization ------------------------------------------------------
    def to_dict(self):
        return {"atoms": [{"x": x, "m": m} for x, m in self]}

    @classmethod
    def from_dict(cls, d):
        try:
            atoms = d["atoms"]
            return cls([a["x"] for a in atoms], [a["m"] for a in atoms])
        except (KeyError, TypeError) as exc:
            raise InvalidMeasureError(f"malformed measure JSON: {exc}") from exc

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_json(cls, text: str) -> DesignMeasure:
        return cls.from_dict(json.loads(text))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "m"])
        for x, m in self:
            w.writerow([repr(x), repr(m)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> DesignMeasure:
        rows = list(csv.DictReader(io.StringIO(text)))
        try:
            return cls([float(r["x"]) for r in rows], [float(r["m"]) for r in rows])
        except (KeyError, ValueError) as exc:
            raise InvalidMeasureError(f"malformed measure CSV: {exc}") from exc


@dataclass(frozen=True)
class ConstraintSpec:
    """Total mass ``n`` (number of mice) and the volume budget."""

    total_mass: float = 30.0
    volume_budget: float = 1.0

    def __post_init__(self):
        if not self.total_mass > 0:
            raise InvalidMeasureError("total_mass must be positive")
        if not 0 < self.volume_budget <= 1:
            raise InvalidMeasureError("volume_budget must lie in (0, 1]")

    def is_feasible(self, mu: DesignMeasure, tol=1e-9) -> bool:
        return (abs(total_mass(mu) - self.total_mass) <= tol * self.total_mass
                and total_volume(mu) <= self.volume_budget + tol)


def total_mass(mu: DesignMeasure) -> float:
    return float(mu.masses.sum())


def total_volume(mu: DesignMeasure) -> float:
    return float(mu.locations @ mu.masses)


def normalize(mu: DesignMeasure, drop_tol: float = DROP_TOL) -> DesignMeasure:
    """Sort atoms, merge locations closer than 1e-10, drop masses below ``drop_tol``."""
    if drop_tol < 0:
        raise ValueError("drop_tol must be nonnegative")
    if len(mu) == 0:
        return mu
    order = np.argsort(mu.locations, kind="stable")
    x = mu.locations[order]
    m = mu.masses[order]
    xs, ms = [x[0]], [m[0]]
    for xi, mi in zip(x[1:], m[1:]):
        if xi - xs[-1] <= MERGE_TOL:
            # keep the location of the heavier atom in the merged pair
            if mi > ms[-1]:
                xs[-1] = xi
            ms[-1] += mi
        else:
            xs.append(xi)
            ms.append(mi)
    xs, ms = np.array(xs), np.array(ms)
    keep = ms >= drop_tol
    if drop_tol == 0:
        keep = ms > 0
    return DesignMeasure(xs[keep], ms[keep])


def round_to_integer_design(mu: DesignMeasure, volume_budget: float = 1.0,
                            max_candidates: int = 200_000) -> DesignMeasure:
    """Nearest design with integer multiplicities and the same total mass.

    Candidates are all ways of rounding each mass down or up that keep the
    total.  The closest one in Euclidean distance wins, subject to keeping
    the total volume within ``volume_budget`` when the input respected it.
    """
    mu = normalize(mu, drop_tol=0.0)
    n_total = total_mass(mu)
    n_int = round(n_total)
    if abs(n_total - n_int) > 1e-6:
        raise RoundingError(f"total mass {n_total} is not integral")
    x, m = mu.locations, mu.masses
    base = np.floor(m + 1e-9)
    frac = m - base
    extra = int(round(n_int - base.sum()))
    if extra < 0 or extra > len(m):
        raise RoundingError("no integer rounding preserves the total mass")
    need_volume = total_volume(mu) <= volume_budget + 1e-9

    def build(up_idx):
        ints = base.copy()
        ints[list(up_idx)] += 1
        return ints

    fractional = np.flatnonzero(frac > 1e-9)
    if len(fractional) < extra:
        # masses already integral up to 1e-9 but the remainder sits elsewhere
        fractional = np.arange(len(m))
    n_comb = math.comb(len(fractional), extra)
    if n_comb <= max_candidates:
        candidates = (build(c) for c in itertools.combinations(fractional, extra))
    else:
        # greedy by fractional part, then volume-reducing alternatives
        ranked = fractional[np.argsort(-frac[fractional], kind="stable")]
        candidates = (build(ranked[k:k + extra]) for k in range(len(ranked) - extra + 1))
    best, best_d = None, np.inf
    fallback, fallback_d = None, np.inf
    for ints in candidates:
        d = float(np.sum((ints - m) ** 2))
        ok = not need_volume or float(x @ ints) <= volume_budget + 1e-12
        if ok and d < best_d - 1e-15:
            best, best_d = ints, d
        if d < fallback_d - 1e-15:
            fallback, fallback_d = ints, d
    if best is None:
        if need_volume:
            raise RoundingError(
                "every integer rounding exceeds the volume budget")
        best = fallback
    keep = best > 0
    return DesignMeasure(x[keep], best[keep])

