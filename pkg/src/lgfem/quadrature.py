"""Symmetric Gaussian quadrature rules on triangles.

Points are stored in barycentric coordinates and weights are normalized to
sum to one, so that for any triangle K with area |K|

    int_K f dx  ~=  |K| * sum_q w_q * f(l1_q*v1 + l2_q*v2 + l3_q*v3).

Tabulated symmetric rules cover exactness degrees 1-6; higher degrees fall
back to a collapsed Gauss-Legendre product rule (positive weights, arbitrary
degree).  Degree 4 is the workhorse: it integrates the product of a composed
quadratic velocity and a quadratic test function exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import factorial, sqrt

import numpy as np

__all__ = ["TriangleRule", "triangle_rule", "duffy_rule", "monomial_error"]


@dataclass(frozen=True)
class TriangleRule:
    """Quadrature rule on the reference triangle in barycentric form."""

    degree: int
    points: np.ndarray   # (nq, 3) barycentric coordinates
    weights: np.ndarray  # (nq,), sum to 1

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=float))
        wts = np.ascontiguousarray(np.asarray(self.weights, dtype=float))
        if pts.ndim != 2 or pts.shape[1] != 3 or wts.shape != (pts.shape[0],):
            raise ValueError("inconsistent rule arrays")
        if abs(wts.sum() - 1.0) > 1e-13:
            raise ValueError(f"weights sum to {wts.sum()!r}, expected 1")
        pts.flags.writeable = False
        wts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", wts)

    def __len__(self):
        return len(self.weights)


def _orbit1():
    third = 1.0 / 3.0
    return [(third, third, third)]


def _orbit3(a):
    b = 1.0 - 2.0 * a
    return [(b, a, a), (a, b, a), (a, a, b)]


def _orbit6(a, b):
    c = 1.0 - a - b
    return [(c, a, b), (c, b, a), (a, c, b), (b, c, a), (a, b, c), (b, a, c)]


# degree -> [(points, weight per point)]
_S15 = sqrt(15.0)
_TABLES = {
    1: [(_orbit1(), 1.0)],
    2: [(_orbit3(1.0 / 6.0), 1.0 / 3.0)],
    # Strang-Fix / Dunavant degree-4, 6 points, all weights positive
    4: [
        (_orbit3(0.44594849091596488632), 0.22338158967801146570),
        (_orbit3(0.09157621350977074346), 0.10995174365532186764),
    ],
    5: [
        (_orbit1(), 9.0 / 40.0),
        (_orbit3((6.0 + _S15) / 21.0), (155.0 + _S15) / 1200.0),
        (_orbit3((6.0 - _S15) / 21.0), (155.0 - _S15) / 1200.0),
    ],
    6: [
        (_orbit3(0.063089014491502228), 0.050844906370206817),
        (_orbit3(0.249286745170910421), 0.116786275726379366),
        (_orbit6(0.053145049844816947, 0.310352451033784405), 0.082851075618373575),
    ],
}


def _from_table(entries, degree):
    pts, wts = [], []
    for orbit, w in entries:
        for p in orbit:
            pts.append(p)
            wts.append(w)
    return TriangleRule(degree, np.array(pts), np.array(wts))


@lru_cache(maxsize=None)
def duffy_rule(degree: int) -> TriangleRule:
    """Collapsed Gauss-Legendre product rule exact to the given degree.

    Maps a tensor grid on the unit square through (x, y) = (s*(1-t), t); the
    Jacobian (1-t) raises the t-degree by one, which fixes the point counts.
    """
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    ms = (degree + 2) // 2 + 1  # integrates s-degree <= degree
    mt = (degree + 3) // 2 + 1  # integrates t-degree <= degree + 1
    xs, ws = np.polynomial.legendre.leggauss(ms)
    xt, wt = np.polynomial.legendre.leggauss(mt)
    xs = 0.5 * (xs + 1.0)
    xt = 0.5 * (xt + 1.0)
    ws = 0.5 * ws
    wt = 0.5 * wt
    S, T = np.meshgrid(xs, xt, indexing="ij")
    WS, WT = np.meshgrid(ws, wt, indexing="ij")
    x = (S * (1.0 - T)).ravel()
    y = T.ravel()
    # weights on the unit triangle have total 1/2; normalize to 1
    w = (WS * WT * (1.0 - T)).ravel() * 2.0
    bary = np.column_stack([1.0 - x - y, x, y])
    return TriangleRule(degree, bary, w)


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> TriangleRule:
    """Smallest tabulated symmetric rule exact to at least ``degree``."""
    if degree < 1:
        degree = 1
    for d in sorted(_TABLES):
        if d >= degree:
            return _from_table(_TABLES[d], d)
    return duffy_rule(degree)


def monomial_error(rule: TriangleRule) -> float:
    """Worst integration error over monomials x^a y^b up to the rule's degree.

    Uses the reference triangle (0,0)-(1,0)-(0,1), where the exact mean value
    of x^a y^b is 2 * a! * b! / (a+b+2)!.
    """
    x = rule.points[:, 1]
    y = rule.points[:, 2]
    worst = 0.0
    for a in range(rule.degree + 1):
        for b in range(rule.degree + 1 - a):
            approx = float(np.sum(rule.weights * x**a * y**b))
            exact = 2.0 * factorial(a) * factorial(b) / factorial(a + b + 2)
            worst = max(worst, abs(approx - exact))
    return worst
