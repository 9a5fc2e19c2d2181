"""Factorize the saddle matrix once, solve repeatedly; Stokes projection.

The left-hand side of the time stepping never changes, so a direct sparse LU
with fill-reducing ordering amortizes over all steps.  A MINRES fallback with
block-diagonal preconditioning is available for memory-constrained runs.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import SaddleSystem, assemble_divergence, dirichlet_from_function
from .quadrature import triangle_rule
from .spaces import (PressureDofMap, PressureField, VelocityDofMap,
                     VelocityField, interpolate_function, p2_basis_dlam)

__all__ = [
    "Factorization",
    "SingularSystemError",
    "SolveDiagnostics",
    "factorize",
    "solve_step",
    "stokes_projection",
    "RESIDUAL_TOL",
]

RESIDUAL_TOL = 1e-10


class SingularSystemError(RuntimeError):
    pass


class SolveDiagnostics(RuntimeError):
    def __init__(self, residual):
        self.residual = residual
        super().__init__(f"solve residual {residual:.3e} exceeds "
                         f"{RESIDUAL_TOL:.0e}")


class Factorization:
    """Reusable solver for one assembled saddle system."""

    def __init__(self, system: SaddleSystem, method: str = "direct"):
        self.system = system
        self.method = method
        if method == "direct":
            try:
                self._lu = spla.splu(system.matrix)
            except RuntimeError as exc:
                raise SingularSystemError(
                    f"saddle matrix is singular ({exc}); check the mean "
                    "pressure constraint and mesh orientation") from exc
            # SuperLU can factor a singular matrix without complaint; a
            # deterministic probe solve exposes it
            probe = np.sin(1.0 + np.arange(system.matrix.shape[0]))
            x = self._lu.solve(probe)
            resid = np.linalg.norm(system.matrix @ x - probe)
            if not np.isfinite(resid) or resid > 1e-6 * np.linalg.norm(probe):
                raise SingularSystemError(
                    f"saddle matrix is numerically singular (probe residual "
                    f"{resid:.3e}); check the mean pressure constraint")
            nnz_f = self._lu.L.nnz + self._lu.U.nnz
            self.stats = {
                "n": system.matrix.shape[0],
                "nnz_matrix": system.matrix.nnz,
                "nnz_factors": nnz_f,
                "fill_ratio": nnz_f / max(system.matrix.nnz, 1),
            }
        elif method == "minres":
            diag = system.matrix.diagonal().copy()
            nf = system.n_free
            npr = system.pmap.n_dofs
            # pressure/multiplier rows have zero diagonal: use the lumped
            # pressure mass (the mean-constraint weights) instead
            diag[nf:nf + npr] = system.c
            diag[-1] = 1.0
            self._prec = spla.LinearOperator(
                system.matrix.shape, matvec=lambda x: x / diag)
            self.stats = {"n": system.matrix.shape[0],
                          "nnz_matrix": system.matrix.nnz}
        else:
            raise ValueError(f"unknown method {method!r}")

    def solve_reduced(self, rhs):
        if self.method == "direct":
            x = self._lu.solve(rhs)
        else:
            x, info = spla.minres(self.system.matrix, rhs, M=self._prec,
                                  rtol=1e-13, maxiter=20 * len(rhs))
            if info != 0:
                raise SolveDiagnostics(np.inf)
        scale = np.linalg.norm(rhs)
        resid = np.linalg.norm(self.system.matrix @ x - rhs)
        if resid > RESIDUAL_TOL * max(scale, 1e-300):
            raise SolveDiagnostics(resid / max(scale, 1e-300))
        return x


def factorize(system: SaddleSystem, method: str = "direct") -> Factorization:
    return Factorization(system, method)


def solve_step(fact: Factorization, load_full, div_data=None):
    """One saddle solve; returns velocity and zero-mean pressure fields."""
    system = fact.system
    x = fact.solve_reduced(system.reduced_rhs(load_full, div_data))
    U, P, _mu = system.expand(x)
    return (VelocityField(system.vmap, U), PressureField(system.pmap, P))


def stokes_projection(u0, vmap: VelocityDofMap, pmap: PressureDofMap,
                      nu: float = 1.0, grad_u0=None, degree: int = 8,
                      fact: Factorization | None = None):
    """Discrete Stokes projection of the pair (u0, 0).

    With ``grad_u0`` (callable returning the four entries du1/dx1, du1/dx2,
    du2/dx1, du2/dx2) the viscous load is integrated from the exact gradient;
    otherwise u0 is interpolated first and the load formed algebraically.
    The data must be divergence-free.  Boundary values are taken from the
    trace of u0.  Pass a cached ``fact`` to reuse the Stokes factorization.
    """
    if fact is None:
        system = SaddleSystem(vmap, pmap, nu=nu, dt=None,
                              dirichlet=dirichlet_from_function(vmap, u0))
        fact = factorize(system)
    else:
        system = fact.system

    div_data = None
    if grad_u0 is not None:
        rule = triangle_rule(degree)
        mesh = vmap.mesh
        pts = np.einsum("qi,eid->eqd", rule.points, mesh.tri_coords)
        g11, g12, g21, g22 = grad_u0(pts[..., 0].ravel(), pts[..., 1].ravel())
        nq = len(rule.weights)
        G = np.stack([np.asarray(g, dtype=float).reshape(-1, nq)
                      for g in (g11, g12, g21, g22)], axis=-1)
        G = G.reshape(mesh.n_elements, nq, 2, 2)
        dN = p2_basis_dlam(rule.points)
        gradN = np.einsum("qat,etd->eqad", dN, mesh.lam_grad)
        local = nu * np.einsum("q,e,eqcd,eqad->eac", rule.weights,
                               mesh.areas, G, gradN)
        load = np.zeros((vmap.n_nodes, 2))
        np.add.at(load, vmap.elem_nodes.ravel(), local.reshape(-1, 2))
        load = load.reshape(-1)
    else:
        U0 = interpolate_function(u0, vmap).coeffs
        load = system.K @ U0
        div_data = system.B @ U0

    return solve_step(fact, load, div_data)
