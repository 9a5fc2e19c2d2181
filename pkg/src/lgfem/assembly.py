"""Global matrices, boundary data, and the time-step right-hand side.

The saddle system couples the velocity block (mass/dt + viscous stiffness)
with the divergence constraint and a single bordered row enforcing the
zero-mean pressure, which keeps the matrix symmetric and nonsingular.
Dirichlet velocity dofs are eliminated symmetrically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .mesh import LID, WALL
from .quadrature import triangle_rule
from .spaces import (PressureDofMap, VelocityDofMap, VelocityField,
                     p2_basis, p2_basis_dlam)
from .transport import NonInjectiveError, TransportTables

__all__ = [
    "LidProfile",
    "SaddleSystem",
    "CompositeStats",
    "assemble_stiffness",
    "assemble_divergence",
    "assemble_velocity_mass",
    "assemble_scalar_stiffness",
    "assemble_scalar_mass",
    "assemble_source",
    "assemble_rhs",
    "mean_pressure_constraint",
    "lid_dirichlet",
    "dirichlet_from_function",
]


def _scatter_vector_block(local, elem_nodes, n_nodes):
    """Scatter (ne, 6, 6) per-component blocks into the 2n x 2n matrix."""
    ne = local.shape[0]
    rows_n = np.repeat(elem_nodes, 6, axis=1)            # (ne, 36)
    cols_n = np.tile(elem_nodes, (1, 6))
    data = np.concatenate([local.reshape(ne, 36)] * 2, axis=1).ravel()
    rows = np.concatenate([2 * rows_n, 2 * rows_n + 1], axis=1).ravel()
    cols = np.concatenate([2 * cols_n, 2 * cols_n + 1], axis=1).ravel()
    n = 2 * n_nodes
    return sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()


def assemble_stiffness(vmap: VelocityDofMap, nu: float) -> sp.csr_matrix:
    """Viscous block: nu * (grad u, grad v), identical for both components."""
    t = vmap.tables()
    mesh = vmap.mesh
    local = nu * np.einsum("q,e,eqad,eqbd->eab", t["w"], mesh.areas,
                           t["gradN"], t["gradN"])
    return _scatter_vector_block(local, vmap.elem_nodes, vmap.n_nodes)


def assemble_velocity_mass(vmap: VelocityDofMap) -> sp.csr_matrix:
    t = vmap.tables()
    mesh = vmap.mesh
    local = np.einsum("q,e,qa,qb->eab", t["w"], mesh.areas, t["N"], t["N"])
    return _scatter_vector_block(local, vmap.elem_nodes, vmap.n_nodes)


def assemble_divergence(vmap: VelocityDofMap,
                        pmap: PressureDofMap) -> sp.csr_matrix:
    """B with B[i, j] = -(div phi_j, psi_i); continuity reads B u = 0."""
    t = vmap.tables()
    mesh = vmap.mesh
    local = -np.einsum("q,e,qp,eqbd->epbd", t["w"], mesh.areas, t["bary"],
                       t["gradN"])                        # (ne, 3, 6, 2)
    ne = mesh.n_elements
    rows = np.repeat(pmap.elem_nodes, 12, axis=1).ravel()
    cols_n = np.repeat(vmap.elem_nodes, 2, axis=1)        # (ne, 12)
    cols_n = 2 * cols_n
    cols_n[:, 1::2] += 1
    cols = np.tile(cols_n, (1, 3)).ravel()
    return sp.coo_matrix((local.reshape(ne, -1).ravel(), (rows, cols)),
                         shape=(pmap.n_dofs, vmap.n_dofs)).tocsr()


def assemble_scalar_stiffness(vmap: VelocityDofMap) -> sp.csr_matrix:
    """Scalar quadratic Laplacian (used by the stream-function solve)."""
    t = vmap.tables()
    mesh = vmap.mesh
    local = np.einsum("q,e,eqad,eqbd->eab", t["w"], mesh.areas,
                      t["gradN"], t["gradN"])
    ne = mesh.n_elements
    rows = np.repeat(vmap.elem_nodes, 6, axis=1).ravel()
    cols = np.tile(vmap.elem_nodes, (1, 6)).ravel()
    return sp.coo_matrix((local.ravel(), (rows, cols)),
                         shape=(vmap.n_nodes, vmap.n_nodes)).tocsr()


def assemble_scalar_mass(vmap: VelocityDofMap) -> sp.csr_matrix:
    t = vmap.tables()
    mesh = vmap.mesh
    local = np.einsum("q,e,qa,qb->eab", t["w"], mesh.areas, t["N"], t["N"])
    rows = np.repeat(vmap.elem_nodes, 6, axis=1).ravel()
    cols = np.tile(vmap.elem_nodes, (1, 6)).ravel()
    return sp.coo_matrix((local.ravel(), (rows, cols)),
                         shape=(vmap.n_nodes, vmap.n_nodes)).tocsr()


def mean_pressure_constraint(pmap: PressureDofMap) -> np.ndarray:
    """c_i = int psi_i dx; each element spreads a third of its area."""
    mesh = pmap.mesh
    c = np.zeros(pmap.n_dofs)
    np.add.at(c, mesh.elements.ravel(),
              np.repeat(mesh.areas / 3.0, 3))
    return c


def assemble_source(vmap: VelocityDofMap, f, degree: int = 6) -> np.ndarray:
    """Load vector (f, phi_i) for a vectorized callable f(x1, x2)."""
    rule = triangle_rule(degree)
    mesh = vmap.mesh
    N = p2_basis(rule.points)
    pts = np.einsum("qi,eid->eqd", rule.points, mesh.tri_coords)
    f1, f2 = f(pts[..., 0].ravel(), pts[..., 1].ravel())
    nq = len(rule.weights)
    fv = np.stack([np.asarray(f1, dtype=float).reshape(-1, nq),
                   np.asarray(f2, dtype=float).reshape(-1, nq)], axis=-1)
    local = np.einsum("q,e,eqc,qa->eac", rule.weights, mesh.areas, fv, N)
    out = np.zeros((vmap.n_nodes, 2))
    np.add.at(out, vmap.elem_nodes.ravel(), local.reshape(-1, 2))
    return out.reshape(-1)


# -- boundary data ---------------------------------------------------------------


@dataclass(frozen=True)
class LidProfile:
    """Regularized lid velocity: unit speed with smooth ramps at both ends.

    ``ramp_fraction`` is the ramp width as a fraction of the lid length;
    zero recovers the discontinuous profile away from the endpoints.  The
    profile is C1: 3t^2 - 2t^3 over each ramp, constant in between.
    """

    ramp_fraction: float = 1.0 / 16.0
    speed: float = 1.0

    def value(self, s, length):
        s = np.asarray(s, dtype=float)
        eps = self.ramp_fraction * length
        if eps <= 0.0:
            return np.full_like(s, self.speed)
        t = np.minimum(s, length - s) / eps
        t = np.clip(t, 0.0, 1.0)
        return self.speed * t * t * (3.0 - 2.0 * t)


def _lid_arclength(vmap):
    """Arclength of each LID node along the lid chain."""
    mesh = vmap.mesh
    lid_edges = [e for e in mesh.boundary_edge_ids if mesh.edge_label[e] == LID]
    if not lid_edges:
        raise ValueError("mesh has no lid edges")
    nbr = {}
    for e in lid_edges:
        a, b = mesh.edges[e]
        nbr.setdefault(int(a), []).append((int(b), int(e)))
        nbr.setdefault(int(b), []).append((int(a), int(e)))
    ends = sorted(v for v, n in nbr.items() if len(n) == 1)
    if len(ends) != 2:
        raise ValueError("lid edges do not form a single open chain")
    start = min(ends, key=lambda v: tuple(mesh.vertices[v]))
    s = {start: 0.0}
    arc = {}
    prev_edge = -1
    v = start
    while True:
        steps = [(w, e) for (w, e) in nbr[v] if e != prev_edge]
        if not steps:
            break
        w, e = steps[0]
        seg = float(np.linalg.norm(mesh.vertices[w] - mesh.vertices[v]))
        arc[mesh.n_vertices + e] = s[v] + 0.5 * seg   # midpoint node
        s[w] = s[v] + seg
        prev_edge = e
        v = w
    return s, arc, s[v]


def lid_dirichlet(vmap: VelocityDofMap, profile: LidProfile = LidProfile()):
    """Dirichlet data: (g(s), 0) on the lid and zero on the walls.

    Returns interleaved dof ids and values; raises on unlabeled boundary
    edges.
    """
    mesh = vmap.mesh
    if np.any(mesh.edge_label[mesh.boundary_edge_ids] == 0):
        raise ValueError("boundary edge without a WALL/LID label")
    vs, arc, length = _lid_arclength(vmap)
    nodes = vmap.boundary_nodes()
    values = np.zeros((len(nodes), 2))
    for i, node in enumerate(nodes):
        if vmap.node_label[node] == LID:
            s = vs.get(int(node), arc.get(int(node)))
            if s is None:
                continue  # labeled via a wall edge only
            values[i, 0] = profile.value(s, length)
    dofs = np.empty(2 * len(nodes), dtype=np.int64)
    dofs[0::2] = 2 * nodes
    dofs[1::2] = 2 * nodes + 1
    return dofs, values.reshape(-1)


def dirichlet_from_function(vmap: VelocityDofMap, u):
    """Constrain every boundary node to the trace of a callable field."""
    nodes = vmap.boundary_nodes()
    x = vmap.node_xy[nodes]
    u1, u2 = u(x[:, 0], x[:, 1])
    dofs = np.empty(2 * len(nodes), dtype=np.int64)
    dofs[0::2] = 2 * nodes
    dofs[1::2] = 2 * nodes + 1
    values = np.empty(2 * len(nodes))
    values[0::2] = u1
    values[1::2] = u2
    return dofs, values


# -- the saddle system -------------------------------------------------------------


@dataclass
class CompositeStats:
    """Bookkeeping from one composite-load assembly."""

    n_deficit_elements: int = 0
    n_extension_points: int = 0


class SaddleSystem:
    """Time-independent block system with symmetric Dirichlet elimination.

    Unknowns after reduction: free velocity dofs, all pressures, and one
    multiplier for the zero-mean pressure constraint.  ``dt=None`` builds
    the stationary Stokes operator (no mass term).
    """

    def __init__(self, vmap, pmap, nu, dt=None, dirichlet=None):
        self.vmap = vmap
        self.pmap = pmap
        self.nu = float(nu)
        self.dt = dt
        A = assemble_stiffness(vmap, nu)
        if dt is not None:
            A = A + assemble_velocity_mass(vmap) / dt
        self.K = A.tocsr()
        self.B = assemble_divergence(vmap, pmap)
        self.c = mean_pressure_constraint(pmap)

        if dirichlet is None:
            dirichlet = lid_dirichlet(vmap)
        self.dirichlet_dofs, self.dirichlet_values = dirichlet
        mask = np.ones(vmap.n_dofs, dtype=bool)
        mask[self.dirichlet_dofs] = False
        self.free = np.flatnonzero(mask)
        self.n_free = len(self.free)

        K_csc = self.K.tocsc()
        self.K_ff = K_csc[:, self.free][self.free, :]
        self.K_fc = K_csc[:, self.dirichlet_dofs][self.free, :]
        B_csc = self.B.tocsc()
        self.B_f = B_csc[:, self.free]
        self.B_c = B_csc[:, self.dirichlet_dofs]
        np_ = pmap.n_dofs
        self.matrix = sp.bmat(
            [[self.K_ff, self.B_f.T, None],
             [self.B_f, None, self.c[:, None]],
             [None, self.c[None, :], None]], format="csc")
        self.n_unknowns = self.n_free + np_ + 1

    def reduced_rhs(self, load_full, div_data=None):
        """Move the constrained columns to the right-hand side."""
        g = self.dirichlet_values
        rv = load_full[self.free] - self.K_fc @ g
        rq = -(self.B_c @ g)
        if div_data is not None:
            rq = rq + div_data
        return np.concatenate([rv, rq, [0.0]])

    def expand(self, x):
        """Reduced solution vector -> full velocity/pressure/multiplier."""
        U = np.empty(self.vmap.n_dofs)
        U[self.free] = x[:self.n_free]
        U[self.dirichlet_dofs] = self.dirichlet_values
        P = x[self.n_free:self.n_free + self.pmap.n_dofs]
        mu = x[-1]
        return U, P, mu

    def divergence_residual(self, U):
        """max_i |b(u, psi_i)|: discrete incompressibility defect."""
        return float(np.abs(self.B @ U).max())


def assemble_rhs(u_prev: VelocityField, dt: float, f=None, *,
                 mode: str = "exact", quad_degree: int = 4,
                 source_degree: int = 6):
    """Step right-hand side: composite term / dt plus the source load.

    ``mode`` is ``"exact"`` (supermesh clipping, the default scheme) or
    ``"quadrature"`` (conventional scheme; ``quad_degree`` picks the rule).
    Returns ``(vector, CompositeStats)``; raises :class:`NonInjectiveError`
    when the foot map folds on some element.
    """
    vmap = u_prev.dofmap
    tables = TransportTables.for_dofmap(vmap)
    mesh = vmap.mesh
    rhs = np.zeros((vmap.n_nodes, 2))
    stats = CompositeStats()
    if mode == "exact":
        deficit = np.zeros(mesh.n_elements, dtype=np.uint8)
        w_verts = np.ascontiguousarray(
            u_prev.node_values[:mesh.n_vertices])
        status, bad_k, bad_det, n_ext = _kernels.assemble_composite_exact(
            tables.tris, tables.tri_pts, tables.areas, tables.lam_const,
            tables.lam_grad, tables.elem_nodes, w_verts,
            u_prev.node_values, dt, tables.qb, tables.qw,
            *tables.grid_args, tables.dom_poly, tables.loc_eps,
            rhs, deficit)
        if status != 0:
            raise NonInjectiveError(int(bad_k), float(bad_det))
        stats.n_deficit_elements = int(deficit.sum())
        stats.n_extension_points = int(n_ext)
    elif mode == "quadrature":
        rule = triangle_rule(quad_degree)
        n_out = _kernels.assemble_composite_quadrature(
            tables.tri_pts, tables.areas, tables.lam_const, tables.lam_grad,
            tables.elem_nodes, u_prev.node_values, u_prev.node_values, dt,
            rule.points, rule.weights, *tables.grid_args, tables.dom_poly,
            tables.loc_eps, rhs)
        stats.n_extension_points = int(n_out)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    out = rhs.reshape(-1) / dt
    if f is not None:
        out = out + assemble_source(vmap, f, degree=source_degree)
    return out, stats
