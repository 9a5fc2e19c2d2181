"""Characteristic transport with per-element affine foot maps.

The transporting velocity is linearized element by element, so the backward
characteristic foot map x -> x - w(x)*dt is affine on each triangle and its
image is again a triangle.  Intersecting that image with the mesh and pulling
the pieces back yields subdomains on which the composed velocity times a test
function is one polynomial of degree at most four, which the degree-4 rule
integrates exactly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .quadrature import triangle_rule
from .spaces import P1VectorField, VelocityField

__all__ = [
    "AffineMap",
    "NonInjective",
    "NonInjectiveError",
    "TransportTables",
    "x1_map_on_element",
    "x1_image_triangle",
    "check_injectivity",
    "clip_triangles",
    "triangulate_polygon",
    "composite_local_vector",
    "composite_local_vector_quadrature",
    "DET_EPS",
]

DET_EPS = _kernels.DET_EPS


@dataclass(frozen=True)
class AffineMap:
    """y = mat @ x + offset with the determinant cached."""

    mat: np.ndarray
    offset: np.ndarray
    det: float

    @classmethod
    def from_parts(cls, mat, offset):
        mat = np.asarray(mat, dtype=float).reshape(2, 2)
        offset = np.asarray(offset, dtype=float).reshape(2)
        return cls(mat, offset, float(np.linalg.det(mat)))

    @classmethod
    def identity(cls):
        return cls(np.eye(2), np.zeros(2), 1.0)

    @classmethod
    def translation(cls, shift):
        return cls(np.eye(2), np.asarray(shift, dtype=float), 1.0)

    def apply(self, x):
        return np.asarray(x, dtype=float) @ self.mat.T + self.offset

    def inverse_apply(self, y):
        d = np.asarray(y, dtype=float) - self.offset
        inv = np.array([[self.mat[1, 1], -self.mat[0, 1]],
                        [-self.mat[1, 0], self.mat[0, 0]]]) / self.det
        return d @ inv.T


@dataclass(frozen=True)
class NonInjective:
    """Folded foot map: the determinant dropped below the threshold."""

    element: int
    det: float


class NonInjectiveError(RuntimeError):
    def __init__(self, element, det):
        self.element = element
        self.det = det
        super().__init__(
            f"characteristic foot map folds on element {element} "
            f"(det={det:.3e}); reduce the time step")


def x1_map_on_element(w: P1VectorField, dt: float, k: int) -> AffineMap:
    """Affine map agreeing with x - w(x)*dt at the vertices of element k."""
    mesh = w.mesh
    wk = w.values[mesh.elements[k]]                     # (3, 2)
    grad = np.einsum("ic,id->cd", wk, mesh.lam_grad[k])
    mat = np.eye(2) - dt * grad
    v0 = mesh.tri_coords[k, 0]
    offset = (v0 - dt * wk[0]) - mat @ v0
    det = float(mat[0, 0] * mat[1, 1] - mat[0, 1] * mat[1, 0])
    return AffineMap(mat, offset, det)


def x1_image_triangle(w: P1VectorField, dt: float, k: int) -> np.ndarray:
    """Image of element k's vertices, computed directly as v - w(v)*dt."""
    mesh = w.mesh
    return mesh.tri_coords[k] - dt * w.values[mesh.elements[k]]


def check_injectivity(amap: AffineMap, element: int = -1):
    """None when the map is safely orientation-preserving, else NonInjective."""
    if amap.det >= DET_EPS:
        return None
    return NonInjective(element, amap.det)


def clip_triangles(a, b):
    """Convex intersection polygon of two CCW triangles, or None.

    Degenerate contact (shared edge or vertex only) counts as empty.
    """
    a = np.ascontiguousarray(a, dtype=float).reshape(3, 2)
    b = np.ascontiguousarray(b, dtype=float).reshape(3, 2)
    bufa = np.empty((_kernels.MAXV, 2))
    bufb = np.empty((_kernels.MAXV, 2))
    n = _kernels.clip_tri_tri(a, b, bufa, bufb)
    if n < 3:
        return None
    poly = bufa[:n].copy()
    area_a = abs(_kernels._poly_area(a, 3))
    area_b = abs(_kernels._poly_area(b, 3))
    if _kernels._poly_area(poly, n) <= 1e-14 * min(area_a, area_b):
        return None
    # drop duplicate consecutive vertices produced by touching edges
    keep = np.linalg.norm(poly - np.roll(poly, 1, axis=0), axis=1) \
        > 1e-14 * max(area_a, area_b) ** 0.5
    poly = poly[keep]
    return poly if len(poly) >= 3 else None


def triangulate_polygon(poly) -> np.ndarray:
    """Fan a convex polygon around its vertex centroid; (m, 3, 2) triangles."""
    poly = np.asarray(poly, dtype=float)
    m = len(poly)
    if m < 3:
        raise ValueError("polygon needs at least three vertices")
    c = poly.mean(axis=0)
    tris = np.empty((m, 3, 2))
    for i in range(m):
        tris[i, 0] = c
        tris[i, 1] = poly[i]
        tris[i, 2] = poly[(i + 1) % m]
    return tris


class TransportTables:
    """Flat views of mesh/dof data shared by the composite kernels."""

    def __init__(self, dofmap, rule=None):
        mesh = dofmap.mesh
        grid = mesh.locate_grid()
        self.dofmap = dofmap
        self.mesh = mesh
        rule = rule or triangle_rule(4)
        self.rule = rule
        self.qb = rule.points
        self.qw = rule.weights
        self.tris = mesh.elements
        self.tri_pts = mesh.tri_coords
        self.areas = mesh.areas
        self.lam_const = mesh.lam_const
        self.lam_grad = mesh.lam_grad
        self.elem_nodes = dofmap.elem_nodes
        self.grid_args = (grid.origin[0], grid.origin[1],
                          grid.inv_cell[0], grid.inv_cell[1],
                          grid.nx, grid.ny, grid.ptr, grid.items)
        poly = mesh.corner_polygon
        self.dom_poly = np.ascontiguousarray(poly) if mesh.domain_convex \
            else np.empty((0, 2))
        self.loc_eps = max(1e-13, mesh.geo_tol / mesh.h_min)

    @classmethod
    def for_dofmap(cls, dofmap):
        tables = getattr(dofmap, "_transport_tables", None)
        if tables is None:
            tables = cls(dofmap)
            dofmap._transport_tables = tables
        return tables


def _scratch():
    return dict(
        cand=np.empty(_kernels.MAXC, dtype=np.int64),
        bufa=np.empty((_kernels.MAXV, 2)),
        bufb=np.empty((_kernels.MAXV, 2)),
        bufc=np.empty((_kernels.MAXV, 2)),
        bufq=np.empty((_kernels.MAXV, 2)),
        n1=np.empty(6),
        n2=np.empty(6),
    )


def composite_local_vector(k: int, u_prev: VelocityField, amap: AffineMap,
                           rule=None) -> np.ndarray:
    """Exact local load  int_K (u_prev o F) . phi_i dx  for element k.

    Returns the twelve values in interleaved component order matching
    ``VelocityDofMap.local_dofs``.  Warns when the mapped element is not
    fully covered by the mesh (image partially outside the domain); the
    uncovered part contributes through the boundary extension.
    """
    problem = check_injectivity(amap, k)
    if problem is not None:
        raise NonInjectiveError(problem.element, problem.det)
    tables = TransportTables.for_dofmap(u_prev.dofmap)
    if rule is not None:
        qb, qw = rule.points, rule.weights
    else:
        qb, qw = tables.qb, tables.qw
    img = np.ascontiguousarray(amap.apply(tables.tri_pts[k]))
    s = _scratch()
    visited = np.full(tables.mesh.n_elements, -1, dtype=np.int64)
    local = np.zeros((6, 2))
    covered, _ = _kernels.composite_element(
        k, amap.mat, amap.offset, amap.det, img,
        tables.tri_pts, tables.areas, tables.lam_const, tables.lam_grad,
        tables.elem_nodes, u_prev.node_values, qb, qw,
        *tables.grid_args, tables.dom_poly, tables.loc_eps,
        visited, 0, s["cand"], s["bufa"], s["bufb"], s["bufc"], s["bufq"],
        s["n1"], s["n2"], local)
    if covered < tables.areas[k] * (1.0 - 1e-8):
        warnings.warn(
            f"element {k}: image covers only "
            f"{covered / tables.areas[k]:.12f} of |K| "
            "(mapped outside the domain)", stacklevel=2)
    return local.reshape(12)


def composite_local_vector_quadrature(k: int, u_prev: VelocityField,
                                      w: VelocityField, dt: float,
                                      rule) -> tuple[np.ndarray, int]:
    """Quadrature-based local load with the full quadratic transport field.

    Demonstration mode for the conventional scheme: inexact by design.
    Returns ``(values, n_projected)`` where the count tallies quadrature
    points mapped outside the domain and projected back to the boundary.
    """
    tables = TransportTables.for_dofmap(u_prev.dofmap)
    n1 = np.empty(6)
    n2 = np.empty(6)
    local = np.zeros((6, 2))
    n_out = _kernels.composite_element_quadrature(
        k, tables.tri_pts, tables.areas, tables.lam_const, tables.lam_grad,
        tables.elem_nodes, u_prev.node_values, w.node_values, dt,
        rule.points, rule.weights, *tables.grid_args, tables.dom_poly,
        tables.loc_eps, n1, n2, local)
    return local.reshape(12), int(n_out)
