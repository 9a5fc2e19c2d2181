"""Stream function, streamline contours, stagnation tracking, and exports.

The whole boundary is a single streamline (the lid moves tangentially), so
the stream function solves a Poisson problem with homogeneous Dirichlet data
and the vorticity as its source.  Contours are marched on the four linear
sub-triangles of each quadratic element.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse.linalg as spla

from .assembly import assemble_scalar_mass, assemble_scalar_stiffness
from .quadrature import triangle_rule
from .spaces import ScalarP2Field, VelocityField, p2_basis_dlam
from .transport import AffineMap  # noqa: F401  (re-exported convenience)

__all__ = [
    "StreamFunctionField",
    "Contour",
    "StagnationResult",
    "compute_stream_function",
    "project_vorticity",
    "extract_contours",
    "default_levels",
    "find_stagnation_point",
    "boundary_side_nodes",
    "export_vtk",
    "export_svg",
    "export_csv",
    "read_stagnation_csv",
    "pressure_on_nodes",
    "reynolds_rescale",
]


class StreamFunctionField(ScalarP2Field):
    """Quadratic stream function, zero on the entire boundary."""


def _curl_load(u: VelocityField) -> np.ndarray:
    """(curl u, N_i) integrated exactly (curl of a quadratic is linear)."""
    vmap = u.dofmap
    t = vmap.tables()
    mesh = vmap.mesh
    vals = u.node_values[vmap.elem_nodes]                    # (ne, 6, 2)
    gq = np.einsum("eqad,eac->eqcd", t["gradN"], vals)       # (ne, nq, 2, 2)
    curl = gq[..., 1, 0] - gq[..., 0, 1]                     # du2/dx1 - du1/dx2
    local = np.einsum("q,e,eq,qa->ea", t["w"], mesh.areas, curl, t["N"])
    out = np.zeros(vmap.n_nodes)
    np.add.at(out, vmap.elem_nodes.ravel(), local.ravel())
    return out


def project_vorticity(u: VelocityField) -> ScalarP2Field:
    """Global L2 projection of the element-wise curl onto the quadratic space."""
    vmap = u.dofmap
    M = assemble_scalar_mass(vmap)
    w = spla.spsolve(M.tocsc(), _curl_load(u))
    return ScalarP2Field(vmap, w)


def compute_stream_function(u: VelocityField) -> StreamFunctionField:
    """Solve -laplace(psi) = curl u with psi = 0 on the boundary."""
    vmap = u.dofmap
    K = assemble_scalar_stiffness(vmap).tocsc()
    rhs = _curl_load(u)
    interior = np.flatnonzero(vmap.node_label == 0)
    psi = np.zeros(vmap.n_nodes)
    psi[interior] = spla.spsolve(K[interior][:, interior], rhs[interior])
    return StreamFunctionField(vmap, psi)


# -- contours -------------------------------------------------------------------


@dataclass
class Contour:
    level: float
    points: np.ndarray        # (m, 2) polyline vertices
    closed: bool

    def enclosed_area(self) -> float:
        if not self.closed or len(self.points) < 3:
            return 0.0
        x, y = self.points[:, 0], self.points[:, 1]
        return 0.5 * abs(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def default_levels(psi: ScalarP2Field, count: int = 20,
                   ratio: float = 0.7) -> np.ndarray:
    """Geometrically spaced levels on both sides of zero."""
    lo = float(psi.coeffs.min())
    hi = float(psi.coeffs.max())
    levels = []
    if hi > 0:
        levels.extend(hi * ratio ** np.arange(1, count + 1))
    if lo < 0:
        levels.extend(lo * ratio ** np.arange(1, count + 1))
    return np.sort(np.array(levels))


_SUBTRIS = np.array([[0, 3, 5], [3, 1, 4], [5, 4, 2], [3, 4, 5]])


def extract_contours(psi: ScalarP2Field, levels=None) -> list[Contour]:
    """March level sets over each element's four linear sub-triangles.

    Segments are chained into polylines; chains whose endpoints meet are
    flagged closed.
    """
    if levels is None:
        levels = default_levels(psi)
    vmap = psi.dofmap
    xy = vmap.node_xy
    nodes = vmap.elem_nodes[:, _SUBTRIS]            # (ne, 4, 3)
    tri_nodes = nodes.reshape(-1, 3)
    vals = psi.coeffs[tri_nodes]                    # (nt, 3)
    pts = xy[tri_nodes]                             # (nt, 3, 2)
    scale = psi.dofmap.mesh.diameter
    out = []
    for level in np.atleast_1d(levels):
        segs = _march(vals - level, pts)
        out.extend(_chain(segs, float(level), 1e-12 * scale))
    return out


def _march(d, pts):
    """One segment per sub-triangle crossed by the zero level of d."""
    pos = d >= 0.0
    npos = pos.sum(axis=1)
    cross = (npos == 1) | (npos == 2)
    segs = []
    for t in np.flatnonzero(cross):
        ends = []
        for i in range(3):
            j = (i + 1) % 3
            if pos[t, i] != pos[t, j]:
                w = d[t, i] / (d[t, i] - d[t, j])
                ends.append(pts[t, i] + w * (pts[t, j] - pts[t, i]))
        if len(ends) == 2:
            segs.append((ends[0], ends[1]))
    return segs


def _chain(segs, level, tol):
    """Stitch segments into polylines by matching endpoints."""
    if not segs:
        return []

    def key(p):
        return (round(p[0] / tol), round(p[1] / tol))

    ends = {}
    for i, (a, b) in enumerate(segs):
        ends.setdefault(key(a), []).append((i, 0))
        ends.setdefault(key(b), []).append((i, 1))
    used = [False] * len(segs)
    chains = []
    for start in range(len(segs)):
        if used[start]:
            continue
        used[start] = True
        a, b = segs[start]
        chain = [a, b]
        for head in (1, 0):
            while True:
                k = key(chain[-1] if head else chain[0])
                nxts = [(i, e) for (i, e) in ends.get(k, []) if not used[i]]
                if not nxts:
                    break
                i, e = nxts[0]
                used[i] = True
                nxt = segs[i][1 - e]
                if head:
                    chain.append(nxt)
                else:
                    chain.insert(0, nxt)
        pts = np.array(chain)
        closed = bool(np.linalg.norm(pts[0] - pts[-1]) < 2 * tol) \
            and len(pts) > 3
        chains.append(Contour(level, pts, closed))
    return chains


# -- stagnation point ----------------------------------------------------------


@dataclass
class StagnationResult:
    node: int
    x1: float
    x2: float
    re: float | None = None
    branch: str | None = None


def boundary_side_nodes(vmap, side: str = "left") -> np.ndarray:
    """Quadratic node ids on one straight side of the domain polygon.

    Sides of the triangular cavity are named ``lid`` (the side carrying lid
    edges) and, among the remaining ones, ``left``/``right`` by the x1 of
    their midpoints.  Nodes are ordered by ascending x2 (wall corner last).
    """
    mesh = vmap.mesh
    corners = mesh.corner_polygon
    m = len(corners)
    bnodes = vmap.boundary_nodes()
    xy = vmap.node_xy[bnodes]
    sides = []
    for i in range(m):
        a, b = corners[i], corners[(i + 1) % m]
        ab = b - a
        L2 = ab @ ab
        t = ((xy - a) @ ab) / L2
        d = xy - (a + np.clip(t, 0, 1)[:, None] * ab)
        on = np.linalg.norm(d, axis=1) <= 10 * mesh.geo_tol
        nodes = bnodes[on]
        # a side is the lid when its non-corner nodes carry the lid label
        inner = nodes[(t[on] > 1e-6) & (t[on] < 1 - 1e-6)]
        has_lid = len(inner) > 0 and np.all(vmap.node_label[inner] == 2)
        sides.append({"nodes": nodes, "mid": 0.5 * (a + b), "lid": has_lid})
    lid_sides = [s for s in sides if s["lid"]]
    wall_sides = [s for s in sides if not s["lid"]]
    if side == "lid":
        chosen = lid_sides[0]
    else:
        wall_sides.sort(key=lambda s: s["mid"][0])
        if side == "left":
            chosen = wall_sides[0]
        elif side == "right":
            chosen = wall_sides[-1]
        else:
            raise ValueError(f"unknown side {side!r}")
    nodes = chosen["nodes"]
    return nodes[np.argsort(vmap.node_xy[nodes][:, 1], kind="stable")]


def find_stagnation_point(field, side: str = "left", re=None, branch=None):
    """Wall node separating recirculation regions of opposite stream sign.

    ``field`` is a velocity or stream-function field of a stationary state.
    For each wall node the sign of psi at the nearest interior node along
    the inward normal is the indicator; the returned node sits between the
    topmost consecutive pair with opposite indicators (resolution: one
    boundary mesh width).  Returns None when no sign change exists (e.g.
    for the zero field).
    """
    if isinstance(field, VelocityField):
        psi = compute_stream_function(field)
    else:
        psi = field
    vmap = psi.dofmap
    mesh = vmap.mesh
    nodes = boundary_side_nodes(vmap, side)
    if len(nodes) < 3:
        return None
    xy = vmap.node_xy[nodes]
    a, b = xy[0], xy[-1]
    tang = (b - a) / np.linalg.norm(b - a)
    normal = np.array([-tang[1], tang[0]])
    centroid = mesh.corner_polygon.mean(axis=0)
    if (centroid - 0.5 * (a + b)) @ normal < 0:
        normal = -normal
    h0 = np.linalg.norm(b - a) / max(len(nodes) - 1, 1)

    interior = np.flatnonzero(vmap.node_label == 0)
    if len(interior) == 0:
        return None
    ixy = vmap.node_xy[interior]
    probes = xy + h0 * normal
    # nearest interior node to each probe point
    d2 = ((ixy[None, :, :] - probes[:, None, :]) ** 2).sum(axis=2)
    nearest = interior[np.argmin(d2, axis=1)]
    vals = psi.coeffs[nearest]
    sign = np.sign(vals)

    change = None
    for i in range(len(nodes) - 1):
        if sign[i] * sign[i + 1] < 0:
            change = i
    if change is None:
        return None
    pick = change if abs(vals[change]) <= abs(vals[change + 1]) else change + 1
    node = int(nodes[pick])
    x1, x2 = vmap.node_xy[node]
    return StagnationResult(node, float(x1), float(x2), re, branch)


# -- exports --------------------------------------------------------------------


def reynolds_rescale(re: float, domain: str) -> float:
    """Convert cavity Reynolds numbers to the larger-domain convention.

    The equilateral domain is smaller than the literature one by 2*sqrt(3),
    the isosceles one by 2.
    """
    if domain == "equilateral":
        return re / (2.0 * np.sqrt(3.0))
    if domain == "isosceles":
        return re / 2.0
    raise ValueError(f"no rescale factor for domain {domain!r}")


def export_vtk(path, vmap, point_data=None, quadratic=True,
               title="lgfem output") -> None:
    """Legacy ASCII unstructured grid with quadratic-triangle cells.

    ``point_data`` maps names to per-node arrays on the quadratic node set:
    (nn,) scalars or (nn, 2) vectors.  With ``quadratic=False`` each element
    is written as its four linear sub-triangles instead.
    """
    xy = vmap.node_xy
    nn = len(xy)
    lines = ["# vtk DataFile Version 3.0", title, "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {nn} double"]
    for p in xy:
        lines.append(f"{p[0]:.17g} {p[1]:.17g} 0")
    if quadratic:
        cells = vmap.elem_nodes
        lines.append(f"CELLS {len(cells)} {7 * len(cells)}")
        for c in cells:
            lines.append("6 " + " ".join(str(int(v)) for v in c))
        lines.append(f"CELL_TYPES {len(cells)}")
        lines.extend(["22"] * len(cells))
    else:
        subs = vmap.elem_nodes[:, _SUBTRIS].reshape(-1, 3)
        lines.append(f"CELLS {len(subs)} {4 * len(subs)}")
        for c in subs:
            lines.append("3 " + " ".join(str(int(v)) for v in c))
        lines.append(f"CELL_TYPES {len(subs)}")
        lines.extend(["5"] * len(subs))
    if point_data:
        lines.append(f"POINT_DATA {nn}")
        for name, arr in point_data.items():
            arr = np.asarray(arr, dtype=float)
            if arr.ndim == 2:
                lines.append(f"VECTORS {name} double")
                for v in arr:
                    lines.append(f"{v[0]:.17g} {v[1]:.17g} 0")
            else:
                lines.append(f"SCALARS {name} double 1")
                lines.append("LOOKUP_TABLE default")
                for v in arr:
                    lines.append(f"{v:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


def pressure_on_nodes(p_field, vmap) -> np.ndarray:
    """Linear pressure sampled at all quadratic nodes (exact at midpoints)."""
    mesh = vmap.mesh
    out = np.empty(vmap.n_nodes)
    out[:mesh.n_vertices] = p_field.coeffs
    mids = 0.5 * (p_field.coeffs[mesh.edges[:, 0]]
                  + p_field.coeffs[mesh.edges[:, 1]])
    out[mesh.n_vertices:] = mids
    return out


def export_svg(path, contours, mesh, width=640) -> None:
    """SVG 1.1 streamline plot with the domain outline.

    The viewBox matches the domain bounding box; x2 is negated so the lid
    appears at the top of the image.
    """
    lo, hi = mesh.bbox
    w = hi[0] - lo[0]
    h = hi[1] - lo[1]
    pad = 0.03 * max(w, h)
    vb = (lo[0] - pad, -(hi[1] + pad), w + 2 * pad, h + 2 * pad)
    sw = 0.0015 * max(w, h)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{width}" height="{int(width * vb[3] / vb[2])}" '
        f'viewBox="{vb[0]:g} {vb[1]:g} {vb[2]:g} {vb[3]:g}">',
        f'<g fill="none" stroke-width="{sw:g}">',
    ]
    loop = mesh.vertices[np.concatenate([mesh.boundary_loop,
                                         mesh.boundary_loop[:1]])]
    pts = " ".join(f"{p[0]:.6g},{-p[1]:.6g}" for p in loop)
    parts.append(f'<polyline points="{pts}" stroke="#000000"/>')
    for c in contours:
        color = "#1f77b4" if c.level >= 0 else "#d62728"
        pts = " ".join(f"{p[0]:.6g},{-p[1]:.6g}" for p in c.points)
        parts.append(f'<polyline points="{pts}" stroke="{color}"/>')
    parts.append("</g></svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def export_csv(path, results) -> None:
    """Stagnation series: one row per (re, branch) observation."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["re", "branch", "node", "x1", "x2"])
        for r in results:
            w.writerow([f"{r.re:g}" if r.re is not None else "",
                        r.branch or "", r.node,
                        f"{r.x1:.17g}", f"{r.x2:.17g}"])


def read_stagnation_csv(path) -> list[StagnationResult]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(StagnationResult(
                int(row["node"]), float(row["x1"]), float(row["x2"]),
                float(row["re"]) if row["re"] else None,
                row["branch"] or None))
    return out
