"""Conforming triangulations of 2D polygonal cavity domains.

Meshes are immutable after construction.  The text exchange format is
FreeFem-style: a count header, then vertices, elements and labeled boundary
edges with 1-based indices (label 1 = fixed wall, 2 = moving lid).
"""

from __future__ import annotations

import hashlib
import io
import warnings
from pathlib import Path

import numpy as np

__all__ = [
    "WALL",
    "LID",
    "Mesh",
    "MeshError",
    "MeshParseError",
    "generate_cavity_mesh",
    "read_mesh",
    "write_mesh",
    "locate_point",
    "mesh_hash",
    "EQUILATERAL_CORNERS",
    "isosceles_corners",
]

WALL = 1
LID = 2

# relative geometric tolerance (scaled by the domain diameter)
GEO_TOL = 1e-10

# lid on y=0 from (0,0) to (1,0), apex below; the moving side is parallel
# to the x1-axis and the cavity hangs underneath it
EQUILATERAL_CORNERS = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, -np.sqrt(3.0) / 2.0]])


def isosceles_corners(base: float = 1.0, height: float = 2.0) -> np.ndarray:
    """Isosceles cavity: lid of length ``base`` on top, apex ``height`` below."""
    return np.array([[0.0, 0.0], [base, 0.0], [base / 2.0, -height]])


class MeshError(Exception):
    pass


class MeshParseError(MeshError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def _signed_areas(verts, tris):
    a = verts[tris[:, 0]]
    b = verts[tris[:, 1]]
    c = verts[tris[:, 2]]
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                  - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))


class Mesh:
    """Conforming triangulation with labeled boundary edges.

    Parameters
    ----------
    vertices : (nv, 2) float array
    elements : (ne, 3) int array, counter-clockwise vertex triples
    boundary_edges : (nb, 3) int array of (v0, v1, label)
    """

    def __init__(self, vertices, elements, boundary_edges):
        verts = np.ascontiguousarray(np.asarray(vertices, dtype=float))
        tris = np.ascontiguousarray(np.asarray(elements, dtype=np.int64))
        bnd = np.ascontiguousarray(np.asarray(boundary_edges, dtype=np.int64))
        if verts.ndim != 2 or verts.shape[1] != 2:
            raise MeshError("vertices must be (nv, 2)")
        if not np.all(np.isfinite(verts)):
            raise MeshError("non-finite vertex coordinates")
        if tris.ndim != 2 or tris.shape[1] != 3:
            raise MeshError("elements must be (ne, 3)")
        if bnd.ndim != 2 or bnd.shape[1] != 3:
            raise MeshError("boundary_edges must be (nb, 3)")
        nv = len(verts)
        if tris.min(initial=0) < 0 or tris.max(initial=-1) >= nv:
            raise MeshError("element vertex index out of range")

        areas = _signed_areas(verts, tris)
        if np.any(areas <= 0.0):
            bad = int(np.argmin(areas))
            raise MeshError(f"element {bad} is not counter-clockwise "
                            f"(signed area {areas[bad]:.3e})")

        self.vertices = verts
        self.elements = tris
        self.areas = areas
        self.n_vertices = nv
        self.n_elements = len(tris)

        self._build_edges(bnd)
        self._build_geometry()
        self._validate()
        self._grid = None

        for arr in (self.vertices, self.elements, self.areas, self.edges,
                    self.elem_edges, self.edge_elements, self.edge_label,
                    self.boundary_edges, self.lam_grad, self.lam_const,
                    self.tri_coords, self.boundary_loop, self.corners):
            arr.flags.writeable = False

    # -- construction helpers -------------------------------------------------

    def _build_edges(self, bnd):
        tris = self.elements
        raw = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
        key = np.sort(raw, axis=1)
        edges, inverse = np.unique(key, axis=0, return_inverse=True)
        ned = len(edges)
        self.edges = edges
        self.n_edges = ned
        # local edge e of element k is edge id elem_edges[k, e]; locals are
        # (v0,v1), (v1,v2), (v2,v0) to match quadratic midpoint numbering
        self.elem_edges = inverse.reshape(3, self.n_elements).T.copy()

        edge_elems = np.full((ned, 2), -1, dtype=np.int64)
        counts = np.zeros(ned, dtype=np.int64)
        order = np.argsort(inverse, kind="stable")
        elem_of_entry = np.tile(np.arange(self.n_elements), 3)
        for idx in order:
            e = inverse[idx]
            if counts[e] >= 2:
                raise MeshError(f"edge {tuple(edges[e])} shared by more than "
                                "two elements (non-conforming mesh)")
            edge_elems[e, counts[e]] = elem_of_entry[idx]
            counts[e] += 1
        self.edge_elements = edge_elems

        derived_boundary = np.flatnonzero(counts == 1)
        given = {(min(a, b), max(a, b)): lab for a, b, lab in bnd}
        if len(given) != len(bnd):
            raise MeshError("duplicate boundary edge")
        derived_set = {tuple(edges[e]) for e in derived_boundary}
        if set(given) != derived_set:
            missing = derived_set - set(given)
            extra = set(given) - derived_set
            raise MeshError(f"boundary edges inconsistent with element "
                            f"adjacency (missing={sorted(missing)[:3]}, "
                            f"extra={sorted(extra)[:3]})")
        label = np.zeros(ned, dtype=np.int64)
        for (a, b), lab in given.items():
            e = np.searchsorted(edges[:, 0] * (self.n_vertices + 1) + edges[:, 1],
                                a * (self.n_vertices + 1) + b)
            label[e] = lab
        self.edge_label = label
        self.boundary_edge_ids = derived_boundary
        self.boundary_edges = np.column_stack([
            edges[derived_boundary], label[derived_boundary]])

    def _build_geometry(self):
        verts, tris = self.vertices, self.elements
        self.tri_coords = verts[tris]                        # (ne, 3, 2)
        two_area = 2.0 * self.areas
        a, b, c = (self.tri_coords[:, i, :] for i in range(3))
        # gradients of the barycentric coordinates, constant per element
        g = np.empty((self.n_elements, 3, 2))
        g[:, 0, 0] = b[:, 1] - c[:, 1]
        g[:, 0, 1] = c[:, 0] - b[:, 0]
        g[:, 1, 0] = c[:, 1] - a[:, 1]
        g[:, 1, 1] = a[:, 0] - c[:, 0]
        g[:, 2, 0] = a[:, 1] - b[:, 1]
        g[:, 2, 1] = b[:, 0] - a[:, 0]
        g /= two_area[:, None, None]
        self.lam_grad = g
        # lam_i(x) = lam_const[i] + lam_grad[i] . x
        self.lam_const = np.empty((self.n_elements, 3))
        self.lam_const[:, 0] = 1.0 - np.einsum("ed,ed->e", g[:, 0, :], a)
        self.lam_const[:, 1] = -np.einsum("ed,ed->e", g[:, 1, :], a)
        self.lam_const[:, 2] = -np.einsum("ed,ed->e", g[:, 2, :], a)

        edge_vec = self.tri_coords[:, [1, 2, 0], :] - self.tri_coords
        self.edge_lengths = np.linalg.norm(edge_vec, axis=2)
        self.h = float(self.edge_lengths.max())
        self.h_min = float(self.edge_lengths.min())
        lo, hi = verts.min(axis=0), verts.max(axis=0)
        self.bbox = (lo, hi)
        self.diameter = float(np.linalg.norm(hi - lo))
        self.geo_tol = GEO_TOL * self.diameter

        self._trace_boundary_loop()

    def _trace_boundary_loop(self):
        bnd = self.boundary_edges
        adj = {}
        for a, b, _lab in bnd:
            adj.setdefault(int(a), []).append(int(b))
            adj.setdefault(int(b), []).append(int(a))
        for v, nbrs in adj.items():
            if len(nbrs) != 2:
                raise MeshError(f"boundary vertex {v} has {len(nbrs)} incident "
                                "boundary edges; boundary is not a closed loop")
        start = min(adj)
        loop = [start]
        prev, cur = None, start
        while True:
            nxt = [w for w in adj[cur] if w != prev]
            nxt = nxt[0] if nxt else prev  # two-vertex degenerate guard
            prev, cur = cur, nxt
            if cur == start:
                break
            loop.append(cur)
            if len(loop) > len(bnd):
                raise MeshError("boundary loop does not close")
        if len(loop) != len(bnd):
            raise MeshError("boundary has more than one loop")
        loop = np.array(loop, dtype=np.int64)
        pts = self.vertices[loop]
        area2 = np.sum(pts[:, 0] * np.roll(pts[:, 1], -1)
                       - np.roll(pts[:, 0], -1) * pts[:, 1])
        if area2 < 0:
            loop = loop[::-1].copy()
            pts = self.vertices[loop]
            area2 = -area2
        self.boundary_loop = loop
        self.domain_area = 0.5 * float(area2)

        # domain corners: loop vertices where the boundary actually turns
        nxt = np.roll(np.arange(len(loop)), -1)
        prv = np.roll(np.arange(len(loop)), 1)
        d1 = pts[nxt] - pts
        d0 = pts - pts[prv]
        cross = d0[:, 0] * d1[:, 1] - d0[:, 1] * d1[:, 0]
        dot = np.einsum("id,id->i", d0, d1)
        turn = np.abs(np.arctan2(cross, dot))
        corner_mask = turn > np.deg2rad(15.0)
        self.corners = loop[corner_mask]
        corner_pts = self.vertices[self.corners]
        z = corner_pts - corner_pts.mean(axis=0)
        znext = np.roll(z, -1, axis=0)
        self.domain_convex = bool(
            np.all(z[:, 0] * znext[:, 1] - z[:, 1] * znext[:, 0] > 0))

    def _validate(self):
        total = float(self.areas.sum())
        if abs(total - self.domain_area) > 1e-12 * max(self.domain_area, 1.0):
            raise MeshError(
                f"element areas sum to {total!r} but the boundary loop "
                f"encloses {self.domain_area!r}; mesh has gaps or overlaps")

    # -- queries ---------------------------------------------------------------

    @property
    def corner_polygon(self) -> np.ndarray:
        """Counter-clockwise polygon of the domain corners."""
        return self.vertices[self.corners]

    def min_angle(self) -> float:
        """Smallest interior angle over all elements (radians)."""
        l2 = self.edge_lengths**2
        worst = np.pi
        for i in range(3):
            adj1 = l2[:, (i + 2) % 3]
            adj2 = l2[:, i]
            opp = l2[:, (i + 1) % 3]
            cosang = (adj1 + adj2 - opp) / (2.0 * np.sqrt(adj1 * adj2))
            worst = min(worst, float(np.arccos(np.clip(cosang, -1, 1)).min()))
        return worst

    def barycentric(self, k, p):
        """Barycentric coordinates of point(s) ``p`` in element ``k``."""
        p = np.asarray(p, dtype=float)
        return self.lam_const[k] + p @ self.lam_grad[k].T

    def element_centroids(self) -> np.ndarray:
        return self.tri_coords.mean(axis=1)

    def locate_grid(self):
        """Uniform bucket grid over element bounding boxes (built lazily)."""
        if self._grid is None:
            self._grid = _BucketGrid(self)
        return self._grid


class _BucketGrid:
    """Background grid: cell size about twice the mesh width."""

    def __init__(self, mesh, cell_factor=2.0):
        lo, hi = mesh.bbox
        pad = mesh.geo_tol + 1e-300
        self.origin = lo - pad
        extent = (hi - lo) + 2 * pad
        cell = max(cell_factor * mesh.h, 1e-12 * mesh.diameter)
        self.nx = max(1, int(np.ceil(extent[0] / cell)))
        self.ny = max(1, int(np.ceil(extent[1] / cell)))
        self.inv_cell = np.array([self.nx / extent[0], self.ny / extent[1]])

        tc = mesh.tri_coords
        lo_idx = self._cell_of(tc.min(axis=1) - mesh.geo_tol)
        hi_idx = self._cell_of(tc.max(axis=1) + mesh.geo_tol)
        buckets = [[] for _ in range(self.nx * self.ny)]
        for k in range(mesh.n_elements):
            for ix in range(lo_idx[k, 0], hi_idx[k, 0] + 1):
                for iy in range(lo_idx[k, 1], hi_idx[k, 1] + 1):
                    buckets[ix * self.ny + iy].append(k)
        counts = np.array([len(b) for b in buckets], dtype=np.int64)
        self.ptr = np.concatenate([[0], np.cumsum(counts)])
        self.items = np.array([k for b in buckets for k in b], dtype=np.int64)
        self.ptr.flags.writeable = False
        self.items.flags.writeable = False

    def _cell_of(self, p):
        idx = ((p - self.origin) * self.inv_cell).astype(np.int64)
        return np.clip(idx, 0, [self.nx - 1, self.ny - 1])

    def candidates(self, p):
        ix, iy = self._cell_of(np.asarray(p, dtype=float))
        b = int(ix) * self.ny + int(iy)
        return self.items[self.ptr[b]:self.ptr[b + 1]]


def locate_point(mesh, p, hint=None):
    """Find the element containing ``p``.

    Returns ``(element_id, (l1, l2, l3))`` or ``None`` when the point lies
    outside the domain by more than the geometric tolerance.  Points on shared
    edges or vertices resolve to the lowest incident element id.
    """
    p = np.asarray(p, dtype=float)
    eps = max(1e-13, mesh.geo_tol / mesh.h_min)
    if hint is not None and 0 <= hint < mesh.n_elements:
        k = _walk(mesh, p, hint, eps)
        if k is not None:
            lam = mesh.barycentric(k, p)
            # on an edge or vertex the lowest incident id must win; the bucket
            # scan below guarantees that, so fall through in the ambiguous case
            if lam.min() > eps:
                return k, tuple(lam)
    for k in mesh.locate_grid().candidates(p):
        lam = mesh.barycentric(int(k), p)
        if lam.min() >= -eps:
            return int(k), tuple(lam)
    return None


def _walk(mesh, p, start, eps, max_steps=None):
    """Straight walk toward ``p`` across edge neighbors; None when it exits."""
    if max_steps is None:
        max_steps = 4 * int(np.sqrt(mesh.n_elements)) + 16
    k = start
    for _ in range(max_steps):
        lam = mesh.barycentric(k, p)
        worst = int(np.argmin(lam))
        if lam[worst] >= -eps:
            return k
        # local edges (v0,v1),(v1,v2),(v2,v0); the edge opposite local
        # vertex i is local edge (i+1) % 3
        e = mesh.elem_edges[k, (worst + 1) % 3]
        k0, k1 = mesh.edge_elements[e]
        nxt = k1 if k0 == k else k0
        if nxt < 0:
            return None
        k = int(nxt)
    return None


# -- structured cavity meshes -------------------------------------------------


def generate_cavity_mesh(domain="equilateral", n=32, base=1.0, height=2.0):
    """Structured triangulation of a triangular cavity, n segments per side.

    ``domain`` is ``"equilateral"`` (unit side, lid on top), ``"isosceles"``
    (``base`` x ``height``, lid on top) or an explicit (3, 2) corner array
    whose first side (corner 0 to corner 1) is the lid.  Produces n*n
    positively oriented elements; lid edges carry label 2, walls label 1.
    """
    if n < 2:
        raise MeshError(f"resolution n={n} is too coarse (need n >= 2)")
    if isinstance(domain, str):
        if domain == "equilateral":
            corners = EQUILATERAL_CORNERS
        elif domain == "isosceles":
            corners = isosceles_corners(base, height)
        else:
            raise MeshError(f"unknown domain preset {domain!r}")
    else:
        corners = np.asarray(domain, dtype=float)
        if corners.shape != (3, 2):
            raise MeshError("explicit domain must be three corner points")
    a, b, c = corners
    e1 = (b - a) / n
    e2 = (c - a) / n

    ids = np.full((n + 1, n + 1), -1, dtype=np.int64)
    verts = []
    for j in range(n + 1):
        for i in range(n + 1 - j):
            ids[i, j] = len(verts)
            verts.append(a + i * e1 + j * e2)
    verts = np.array(verts)

    tris = []
    for j in range(n):
        for i in range(n - j):
            tris.append((ids[i, j], ids[i + 1, j], ids[i, j + 1]))
            if i + j < n - 1:
                tris.append((ids[i + 1, j], ids[i + 1, j + 1], ids[i, j + 1]))
    tris = np.array(tris, dtype=np.int64)
    flip = _signed_areas(verts, tris) < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]

    bedges = []
    for i in range(n):  # lid: corner a -> corner b
        bedges.append((ids[i, 0], ids[i + 1, 0], LID))
    for k in range(n):  # side b -> c
        bedges.append((ids[n - k, k], ids[n - k - 1, k + 1], WALL))
    for k in range(n, 0, -1):  # side c -> a
        bedges.append((ids[0, k], ids[0, k - 1], WALL))
    return Mesh(verts, tris, np.array(bedges, dtype=np.int64))


# -- text IO -------------------------------------------------------------------


def write_mesh(mesh, dest=None) -> str | None:
    """Serialize to the text format; returns the string when dest is None."""
    buf = io.StringIO()
    nv, nt, nb = mesh.n_vertices, mesh.n_elements, len(mesh.boundary_edges)
    buf.write(f"{nv} {nt} {nb}\n")
    vlabel = np.zeros(nv, dtype=np.int64)
    for a, b, lab in mesh.boundary_edges:
        for v in (a, b):
            vlabel[v] = max(vlabel[v], lab)  # lid wins at the corners
    for v in range(nv):
        x, y = mesh.vertices[v]
        buf.write(f"{x:.17g} {y:.17g} {vlabel[v]}\n")
    for t in mesh.elements:
        buf.write(f"{t[0] + 1} {t[1] + 1} {t[2] + 1} 0\n")
    for a, b, lab in mesh.boundary_edges:
        buf.write(f"{a + 1} {b + 1} {lab}\n")
    text = buf.getvalue()
    if dest is None:
        return text
    if isinstance(dest, (str, Path)):
        Path(dest).write_text(text)
    else:
        dest.write(text)
    return None


def read_mesh(source, strict=False) -> Mesh:
    """Parse the text format; ``strict`` rejects clockwise elements.

    Without ``strict`` a clockwise element is reoriented with a warning.
    """
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source
                                    and Path(source).exists()):
        text = Path(source).read_text()
    elif isinstance(source, str):
        text = source
    else:
        text = source.read()
    lines = text.splitlines()

    def fields(lineno, expect, kinds):
        if lineno > len(lines):
            raise MeshParseError("unexpected end of file", lineno)
        parts = lines[lineno - 1].split()
        if len(parts) < expect:
            raise MeshParseError(f"expected {expect} fields, got {len(parts)}",
                                 lineno)
        out = []
        for p, kind in zip(parts, kinds):
            try:
                out.append(kind(p))
            except ValueError:
                raise MeshParseError(f"bad value {p!r}", lineno) from None
        return out

    nv, nt, nb = fields(1, 3, (int, int, int))
    if nv < 3 or nt < 1 or nb < 3:
        raise MeshParseError(f"implausible counts nv={nv} nt={nt} ne={nb}", 1)
    verts = np.empty((nv, 2))
    for v in range(nv):
        x, y, _lab = fields(2 + v, 3, (float, float, int))
        verts[v] = (x, y)

    def index(value, lineno):
        if not 1 <= value <= nv:
            raise MeshParseError(f"vertex index {value} outside 1..{nv}", lineno)
        return value - 1

    tris = np.empty((nt, 3), dtype=np.int64)
    for t in range(nt):
        lineno = 2 + nv + t
        v0, v1, v2, _region = fields(lineno, 4, (int, int, int, int))
        tris[t] = [index(v0, lineno), index(v1, lineno), index(v2, lineno)]
    flip = _signed_areas(verts, tris) < 0
    if flip.any():
        if strict:
            bad = int(np.flatnonzero(flip)[0])
            raise MeshParseError(f"element {bad + 1} is clockwise", 2 + nv + bad)
        warnings.warn(f"reoriented {int(flip.sum())} clockwise element(s)",
                      stacklevel=2)
        tris[flip] = tris[flip][:, [0, 2, 1]]

    bedges = np.empty((nb, 3), dtype=np.int64)
    for e in range(nb):
        lineno = 2 + nv + nt + e
        a, b, lab = fields(lineno, 3, (int, int, int))
        bedges[e] = [index(a, lineno), index(b, lineno), lab]
    try:
        return Mesh(verts, tris, bedges)
    except MeshError as exc:
        raise MeshParseError(str(exc)) from exc


def mesh_hash(mesh) -> str:
    """Stable content hash of the mesh data model."""
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(mesh.vertices).tobytes())
    h.update(np.ascontiguousarray(mesh.elements).tobytes())
    h.update(np.ascontiguousarray(mesh.boundary_edges).tobytes())
    return h.hexdigest()
