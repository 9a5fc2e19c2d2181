"""Taylor-Hood (P2 velocity / P1 pressure) degrees of freedom and norms.

Velocity nodes are the mesh vertices followed by the edge midpoints; each
node carries two interleaved components, so dof ``2*i + c`` is component
``c`` at node ``i``.  Pressure dofs are the vertex values.
"""

from __future__ import annotations

import numpy as np

from .mesh import LID, WALL
from .quadrature import triangle_rule

__all__ = [
    "VelocityDofMap",
    "PressureDofMap",
    "VelocityField",
    "PressureField",
    "ScalarP2Field",
    "P1VectorField",
    "p2_basis",
    "p2_basis_dlam",
    "eval_velocity",
    "eval_velocity_gradient",
    "eval_pressure",
    "eval_scalar",
    "interpolate_p1",
    "interpolate_function",
    "norm_l2",
    "seminorm_h1",
    "norm_h1",
    "time_series_norms",
]


def p2_basis(bary):
    """Quadratic basis at barycentric points; shape (..., 6).

    Local nodes: three vertices, then midpoints of (v0,v1), (v1,v2), (v2,v0).
    """
    bary = np.asarray(bary, dtype=float)
    l1, l2, l3 = bary[..., 0], bary[..., 1], bary[..., 2]
    return np.stack([
        l1 * (2.0 * l1 - 1.0),
        l2 * (2.0 * l2 - 1.0),
        l3 * (2.0 * l3 - 1.0),
        4.0 * l1 * l2,
        4.0 * l2 * l3,
        4.0 * l3 * l1,
    ], axis=-1)


def p2_basis_dlam(bary):
    """Derivatives of the quadratic basis wrt barycentric coordinates.

    Shape (..., 6, 3); combine with per-element barycentric gradients to get
    physical gradients.
    """
    bary = np.asarray(bary, dtype=float)
    l1, l2, l3 = bary[..., 0], bary[..., 1], bary[..., 2]
    z = np.zeros_like(l1)
    rows = [
        [4.0 * l1 - 1.0, z, z],
        [z, 4.0 * l2 - 1.0, z],
        [z, z, 4.0 * l3 - 1.0],
        [4.0 * l2, 4.0 * l1, z],
        [z, 4.0 * l3, 4.0 * l2],
        [4.0 * l3, z, 4.0 * l1],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


class VelocityDofMap:
    """P2 vector dofs: 2 components per vertex and edge-midpoint node."""

    def __init__(self, mesh):
        self.mesh = mesh
        nv, ned = mesh.n_vertices, mesh.n_edges
        self.n_nodes = nv + ned
        self.n_dofs = 2 * self.n_nodes
        mids = 0.5 * (mesh.vertices[mesh.edges[:, 0]]
                      + mesh.vertices[mesh.edges[:, 1]])
        self.node_xy = np.vstack([mesh.vertices, mids])
        self.elem_nodes = np.hstack([mesh.elements, mesh.elem_edges + nv])

        label = np.zeros(self.n_nodes, dtype=np.int8)
        for e in mesh.boundary_edge_ids:
            lab = mesh.edge_label[e]
            a, b = mesh.edges[e]
            for node in (a, b, nv + e):
                label[node] = max(label[node], lab)  # LID wins at lid corners
        self.node_label = label

        self.node_xy.flags.writeable = False
        self.elem_nodes.flags.writeable = False
        self.node_label.flags.writeable = False
        self._tables = None

    def local_dofs(self, k):
        """Twelve interleaved global dofs of element k."""
        nodes = self.elem_nodes[k]
        out = np.empty(12, dtype=np.int64)
        out[0::2] = 2 * nodes
        out[1::2] = 2 * nodes + 1
        return out

    def boundary_nodes(self):
        return np.flatnonzero(self.node_label > 0)

    def nodes_with_label(self, lab):
        return np.flatnonzero(self.node_label == lab)

    def tables(self):
        """Cached degree-4 quadrature tables for element-wise integration."""
        if self._tables is None:
            rule = triangle_rule(4)
            N = p2_basis(rule.points)                       # (nq, 6)
            dN = p2_basis_dlam(rule.points)                 # (nq, 6, 3)
            gradN = np.einsum("qat,etd->eqad", dN, self.mesh.lam_grad)
            self._tables = {
                "w": rule.weights, "bary": rule.points,
                "N": N, "gradN": gradN,
            }
        return self._tables


class PressureDofMap:
    """P1 scalar dofs: one value per vertex."""

    def __init__(self, mesh):
        self.mesh = mesh
        self.n_dofs = mesh.n_vertices
        self.elem_nodes = mesh.elements


class VelocityField:
    """Quadratic vector field given by its interleaved coefficient vector."""

    def __init__(self, dofmap, coeffs=None):
        self.dofmap = dofmap
        if coeffs is None:
            coeffs = np.zeros(dofmap.n_dofs)
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (dofmap.n_dofs,):
            raise ValueError("coefficient vector has the wrong length")
        self.coeffs = coeffs

    @property
    def node_values(self):
        """(n_nodes, 2) view of the coefficients."""
        return self.coeffs.reshape(-1, 2)

    def copy(self):
        return VelocityField(self.dofmap, self.coeffs.copy())

    def __sub__(self, other):
        return VelocityField(self.dofmap, self.coeffs - other.coeffs)

    def __add__(self, other):
        return VelocityField(self.dofmap, self.coeffs + other.coeffs)

    def __mul__(self, a):
        return VelocityField(self.dofmap, self.coeffs * a)

    __rmul__ = __mul__


class ScalarP2Field:
    """Quadratic scalar field on the velocity node set."""

    def __init__(self, dofmap, coeffs=None):
        self.dofmap = dofmap
        if coeffs is None:
            coeffs = np.zeros(dofmap.n_nodes)
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (dofmap.n_nodes,):
            raise ValueError("coefficient vector has the wrong length")
        self.coeffs = coeffs

    def copy(self):
        return ScalarP2Field(self.dofmap, self.coeffs.copy())

    def __sub__(self, other):
        return ScalarP2Field(self.dofmap, self.coeffs - other.coeffs)


class PressureField:
    """Linear scalar field: one coefficient per vertex."""

    def __init__(self, dofmap, coeffs=None):
        self.dofmap = dofmap
        if coeffs is None:
            coeffs = np.zeros(dofmap.n_dofs)
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (dofmap.n_dofs,):
            raise ValueError("coefficient vector has the wrong length")
        self.coeffs = coeffs

    def copy(self):
        return PressureField(self.dofmap, self.coeffs.copy())

    def __sub__(self, other):
        return PressureField(self.dofmap, self.coeffs - other.coeffs)


class P1VectorField:
    """Continuous piecewise-linear vector field: one vector per vertex."""

    def __init__(self, mesh, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (mesh.n_vertices, 2):
            raise ValueError("values must be (n_vertices, 2)")
        self.mesh = mesh
        self.values = values


# -- evaluation ----------------------------------------------------------------


def eval_velocity(field, k, bary):
    """Velocity vector at barycentric point(s) of element k."""
    vals = field.node_values[field.dofmap.elem_nodes[k]]     # (6, 2)
    return p2_basis(bary) @ vals


def eval_velocity_gradient(field, k, bary):
    """Velocity gradient G[c, d] = d u_c / d x_d at point(s) of element k."""
    vals = field.node_values[field.dofmap.elem_nodes[k]]
    dlam = p2_basis_dlam(bary)                               # (..., 6, 3)
    grad = dlam @ field.dofmap.mesh.lam_grad[k]              # (..., 6, 2)
    return np.einsum("...ad,ac->...cd", grad, vals)


def eval_scalar(field, k, bary):
    vals = field.coeffs[field.dofmap.elem_nodes[k]]
    return p2_basis(bary) @ vals


def eval_pressure(field, k, bary):
    vals = field.coeffs[field.dofmap.elem_nodes[k]]
    return np.asarray(bary, dtype=float) @ vals


def interpolate_p1(field: VelocityField) -> P1VectorField:
    """Linear interpolant: keep the vertex values, drop the midpoints."""
    mesh = field.dofmap.mesh
    return P1VectorField(mesh, field.node_values[:mesh.n_vertices].copy())


def interpolate_function(f, dofmap):
    """Nodal interpolation of a callable ``f(x1, x2)``.

    With a :class:`VelocityDofMap` the callable must return the pair
    ``(u1, u2)``; with a :class:`PressureDofMap` a single array.  Callables
    must accept numpy arrays.
    """
    if isinstance(dofmap, VelocityDofMap):
        x = dofmap.node_xy
        u1, u2 = f(x[:, 0], x[:, 1])
        coeffs = np.empty(dofmap.n_dofs)
        coeffs[0::2] = u1
        coeffs[1::2] = u2
        return VelocityField(dofmap, coeffs)
    if isinstance(dofmap, PressureDofMap):
        x = dofmap.mesh.vertices
        return PressureField(dofmap, np.asarray(f(x[:, 0], x[:, 1]), dtype=float))
    raise TypeError(f"unsupported dof map {type(dofmap)!r}")


# -- norms ----------------------------------------------------------------------


def _velocity_dofmap_of(field):
    if isinstance(field, (VelocityField, ScalarP2Field)):
        return field.dofmap
    if isinstance(field, PressureField):
        return None
    raise TypeError(f"unsupported field {type(field)!r}")


def _l2_sq(field):
    if isinstance(field, PressureField):
        mesh = field.dofmap.mesh
        vals = field.coeffs[mesh.elements]                   # (ne, 3)
        rule = triangle_rule(4)
        pq = vals @ rule.points.T                            # (ne, nq)
        return float(np.einsum("e,q,eq->", mesh.areas, rule.weights, pq**2))
    dm = _velocity_dofmap_of(field)
    t = dm.tables()
    if isinstance(field, VelocityField):
        vals = field.node_values[dm.elem_nodes]              # (ne, 6, 2)
        uq = np.einsum("qa,eac->eqc", t["N"], vals)
        return float(np.einsum("e,q,eqc->", dm.mesh.areas, t["w"], uq**2))
    vals = field.coeffs[dm.elem_nodes]                       # (ne, 6)
    uq = vals @ t["N"].T
    return float(np.einsum("e,q,eq->", dm.mesh.areas, t["w"], uq**2))


def _h1_semi_sq(field):
    if isinstance(field, PressureField):
        mesh = field.dofmap.mesh
        vals = field.coeffs[mesh.elements]
        g = np.einsum("ea,ead->ed", vals, mesh.lam_grad)     # constant per elem
        return float(np.einsum("e,ed->", mesh.areas, g**2))
    dm = _velocity_dofmap_of(field)
    t = dm.tables()
    if isinstance(field, VelocityField):
        vals = field.node_values[dm.elem_nodes]
        gq = np.einsum("eqad,eac->eqcd", t["gradN"], vals)
        return float(np.einsum("e,q,eqcd->", dm.mesh.areas, t["w"], gq**2))
    vals = field.coeffs[dm.elem_nodes]
    gq = np.einsum("eqad,ea->eqd", t["gradN"], vals)
    return float(np.einsum("e,q,eqd->", dm.mesh.areas, t["w"], gq**2))


def norm_l2(field) -> float:
    return np.sqrt(max(_l2_sq(field), 0.0))


def seminorm_h1(field) -> float:
    return np.sqrt(max(_h1_semi_sq(field), 0.0))


def norm_h1(field) -> float:
    return np.sqrt(max(_l2_sq(field) + _h1_semi_sq(field), 0.0))


def time_series_norms(fields, dt):
    """Norms over a time series f^0, ..., f^N.

    Returns ``(max_n ||f^n||_H1, sqrt(dt * sum_{n>=1} ||f^n||_L2^2))``; the
    summed norm deliberately skips the initial entry.
    """
    fields = list(fields)
    if not fields:
        raise ValueError("empty series")
    linf_h1 = max(norm_h1(f) for f in fields)
    l2_sq = sum(_l2_sq(f) for f in fields[1:])
    return linf_h1, float(np.sqrt(dt * l2_sq))
