"""Manufactured solutions with symbolically derived momentum sources.

The trigonometric solution drives the convergence study: the velocity is the
perpendicular gradient of a potential built from squared sines of the
barycentric coordinates of the domain triangle, so it is divergence-free by
construction and vanishes (together with its gradient) on all three sides.
The pressure uses bounding-box coordinates and is shifted to zero mean.
"""

from __future__ import annotations

import numpy as np
import sympy as sym

from .quadrature import triangle_rule

__all__ = ["ManufacturedSolution", "make_manufactured"]


class ManufacturedSolution:
    """Bundle of vectorized callables (u, grad u, p, f) over (x1, x2, t)."""

    def __init__(self, name, corners, nu, u_expr, p_expr, x1, x2, t,
                 time_dependent=True):
        self.name = name
        self.corners = np.asarray(corners, dtype=float)
        self.nu = float(nu)
        self.time_dependent = time_dependent
        u1, u2 = u_expr
        grads = [sym.diff(u1, x1), sym.diff(u1, x2),
                 sym.diff(u2, x1), sym.diff(u2, x2)]
        conv1 = u1 * grads[0] + u2 * grads[1]
        conv2 = u1 * grads[2] + u2 * grads[3]
        lap1 = sym.diff(u1, x1, 2) + sym.diff(u1, x2, 2)
        lap2 = sym.diff(u2, x1, 2) + sym.diff(u2, x2, 2)
        f1 = sym.diff(u1, t) + conv1 - nu * lap1 + sym.diff(p_expr, x1)
        f2 = sym.diff(u2, t) + conv2 - nu * lap2 + sym.diff(p_expr, x2)
        args = (x1, x2, t)
        self._u = sym.lambdify(args, (u1, u2), "numpy")
        self._grad = sym.lambdify(args, tuple(grads), "numpy")
        self._p = sym.lambdify(args, p_expr, "numpy")
        self._f = sym.lambdify(args, (f1, f2), "numpy")
        self.divergence = sym.simplify(sym.diff(u1, x1) + sym.diff(u2, x2))

    def _bc(self, fn, tval):
        def bound(x1v, x2v):
            out = fn(np.asarray(x1v, dtype=float),
                     np.asarray(x2v, dtype=float), tval)
            if isinstance(out, tuple):
                return tuple(np.broadcast_to(np.asarray(o, dtype=float),
                                             np.shape(x1v)) for o in out)
            return np.broadcast_to(np.asarray(out, dtype=float),
                                   np.shape(x1v))
        return bound

    def velocity(self, t=0.0):
        return self._bc(self._u, t)

    def velocity_gradient(self, t=0.0):
        return self._bc(self._grad, t)

    def pressure(self, t=0.0):
        return self._bc(self._p, t)

    def source(self, x1v, x2v, t):
        f1, f2 = self._f(np.asarray(x1v, dtype=float),
                         np.asarray(x2v, dtype=float), t)
        shape = np.shape(x1v)
        return (np.broadcast_to(np.asarray(f1, dtype=float), shape),
                np.broadcast_to(np.asarray(f2, dtype=float), shape))

    def max_velocity_gradient(self, t=0.0, samples=60):
        """Sampled sup of |grad u| over the domain (injectivity budgeting)."""
        a, b, c = self.corners
        pts = []
        for i in range(samples + 1):
            for j in range(samples + 1 - i):
                k = samples - i - j
                pts.append((i * a + j * b + k * c) / samples)
        pts = np.array(pts)
        g = np.stack(self.velocity_gradient(t)(pts[:, 0], pts[:, 1]))
        return float(np.abs(g).max())


def _barycentric_exprs(corners, x1, x2):
    (ax, ay), (bx, by), (cx, cy) = [tuple(map(float, p)) for p in corners]
    det = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    l2 = ((x1 - ax) * (cy - ay) - (x2 - ay) * (cx - ax)) / det
    l3 = ((bx - ax) * (x2 - ay) - (by - ay) * (x1 - ax)) / det
    return 1 - l2 - l3, l2, l3


def _triangle_mean(expr, x1, x2, corners, subdiv=48, degree=6):
    """Mean of a smooth expression over the triangle, mesh-independent.

    Fixed fine composite quadrature over a regular subdivision of the
    domain triangle itself; accurate far beyond any study tolerance.
    """
    fn = sym.lambdify((x1, x2), expr, "numpy")
    a, b, c = [np.asarray(p, dtype=float) for p in corners]
    rule = triangle_rule(degree)
    e1 = (b - a) / subdiv
    e2 = (c - a) / subdiv
    tris = []
    for j in range(subdiv):
        for i in range(subdiv - j):
            p0 = a + i * e1 + j * e2
            tris.append((p0, p0 + e1, p0 + e2))
            if i + j < subdiv - 1:
                tris.append((p0 + e1, p0 + e1 + e2, p0 + e2))
    tris = np.array(tris)
    pts = np.einsum("qi,tid->tqd", rule.points, tris).reshape(-1, 2)
    vals = np.asarray(fn(pts[:, 0], pts[:, 1]), dtype=float)
    vals = np.broadcast_to(vals, (len(pts),))
    cell_area = abs(np.cross(e1, e2)) / 2.0
    total_area = cell_area * len(tris)
    w = np.tile(rule.weights, len(tris)) * cell_area
    return float(np.sum(w * vals) / total_area)


def make_manufactured(name, corners, nu, amplitude=0.1) -> ManufacturedSolution:
    """Build a named manufactured solution on the given domain triangle.

    ``trig``: time factor (1 + t); velocity is the perp-gradient of
    amplitude * prod_i sin(pi * lambda_i)^2, pressure a mean-shifted
    sin/cos in bounding-box coordinates.  ``poly``: a steady in-space pair
    (quadratic divergence-free velocity, linear pressure) reproduced exactly
    by the discretization.
    """
    corners = np.asarray(corners, dtype=float)
    x1, x2, t = sym.symbols("x1 x2 t", real=True)
    if name == "trig":
        l1, l2, l3 = _barycentric_exprs(corners, x1, x2)
        phi = amplitude * (sym.sin(sym.pi * l1) ** 2
                           * sym.sin(sym.pi * l2) ** 2
                           * sym.sin(sym.pi * l3) ** 2)
        u1 = (1 + t) * sym.diff(phi, x2)
        u2 = -(1 + t) * sym.diff(phi, x1)
        lo = corners.min(axis=0)
        hi = corners.max(axis=0)
        xh = (x1 - float(lo[0])) / float(hi[0] - lo[0])
        yh = (x2 - float(lo[1])) / float(hi[1] - lo[1])
        p_hat = sym.sin(sym.pi * xh) * sym.cos(sym.pi * yh)
        p_mean = _triangle_mean(p_hat, x1, x2, corners)
        p = (1 + t) * (p_hat - p_mean)
        return ManufacturedSolution("trig", corners, nu, (u1, u2), p,
                                    x1, x2, t, time_dependent=True)
    if name == "poly":
        u1 = x2 ** 2
        u2 = x1 ** 2
        cen = corners.mean(axis=0)
        p = x1 + 2 * x2 - float(cen[0] + 2 * cen[1])
        sol = ManufacturedSolution("poly", corners, nu, (u1, u2), p,
                                   x1, x2, t, time_dependent=False)
        # steady Stokes source (no convection): used by the stationary check
        f1 = -nu * 2 + 1
        f2 = -nu * 2 + 2
        sol.stokes_source = lambda xv, yv: (
            np.full_like(np.asarray(xv, dtype=float), f1),
            np.full_like(np.asarray(xv, dtype=float), f2))
        return sol
    raise ValueError(f"unknown manufactured solution {name!r}")
