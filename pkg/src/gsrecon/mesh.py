"""Triangulated poloidal cross-sections.

A :class:`Mesh` holds nodes in the (r, z) half plane, counter-clockwise
triangles, the ordered vessel boundary loop and the limiter node set.  The text
format read by :func:`parse_mesh` is::

    nodes N triangles T boundary B limiter L
    r z            (N lines)
    i j k          (T lines, 0-based node indices)
    b              (B lines, boundary node indices in loop order)
    l              (L lines, limiter node indices)
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources

import numpy as np
from scipy.spatial import Delaunay

from .errors import MeshError

__all__ = [
    "Mesh",
    "parse_mesh",
    "load_mesh",
    "format_mesh",
    "save_mesh",
    "bundled_mesh",
    "rectangle_mesh",
    "tokamak_mesh",
    "refine_uniform",
    "gradient_at",
]

_BARY_TOL = 1e-12


@dataclass(eq=False)
class Mesh:
    nodes: np.ndarray
    triangles: np.ndarray
    boundary_nodes: np.ndarray
    limiter_nodes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __post_init__(self):
        self.nodes = np.ascontiguousarray(self.nodes, dtype=float)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        self.boundary_nodes = np.asarray(self.boundary_nodes, dtype=np.int64).ravel()
        self.limiter_nodes = np.asarray(self.limiter_nodes, dtype=np.int64).ravel()
        self._validate()

    # -- validation -------------------------------------------------------
    def _validate(self):
        nodes, tris = self.nodes, self.triangles
        if nodes.ndim != 2 or nodes.shape[1] != 2 or len(nodes) < 3:
            raise MeshError("nodes must be an (N, 2) array with N >= 3")
        if tris.ndim != 2 or tris.shape[1] != 3 or len(tris) < 1:
            raise MeshError("triangles must be a (T, 3) array with T >= 1")
        if not np.all(np.isfinite(nodes)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(nodes), axis=1))[0])
            raise MeshError(f"node {bad} has non-finite coordinates")
        bad_r = np.flatnonzero(nodes[:, 0] <= 0.0)
        if bad_r.size:
            raise MeshError(f"node {int(bad_r[0])} has r <= 0")
        n = len(nodes)
        out = np.flatnonzero(np.any((tris < 0) | (tris >= n), axis=1))
        if out.size:
            raise MeshError(f"triangle {int(out[0])} references a node outside 0..{n - 1}")
        area2 = self._signed_area2()
        bad_a = np.flatnonzero(area2 <= 0.0)
        if bad_a.size:
            raise MeshError(f"triangle {int(bad_a[0])} has non-positive area")

        edges = np.sort(tris[:, [1, 2, 2, 0, 0, 1]].reshape(-1, 2), axis=1)
        uniq, counts = np.unique(edges, axis=0, return_counts=True)
        if np.any(counts > 2):
            e = uniq[np.argmax(counts > 2)]
            raise MeshError(f"edge ({e[0]}, {e[1]}) is shared by more than 2 triangles")

        b = self.boundary_nodes
        if len(b) < 3:
            raise MeshError("boundary loop needs at least 3 nodes")
        if np.any((b < 0) | (b >= n)):
            raise MeshError("boundary loop references a node outside the mesh")
        if len(np.unique(b)) != len(b):
            raise MeshError("boundary loop visits a node twice (self-intersecting)")
        open_edges = {tuple(e) for e in uniq[counts == 1]}
        loop_edges = {tuple(sorted((int(b[i]), int(b[(i + 1) % len(b)])))) for i in range(len(b))}
        missing = loop_edges - open_edges
        if missing:
            e = sorted(missing)[0]
            raise MeshError(f"boundary loop step {e} is not a boundary edge of the triangulation")
        if loop_edges != open_edges:
            raise MeshError("boundary loop does not cover every boundary edge (not a single closed loop)")
        if np.any((self.limiter_nodes < 0) | (self.limiter_nodes >= n)):
            raise MeshError("limiter list references a node outside the mesh")

    def _signed_area2(self):
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]

    # -- basic geometry ---------------------------------------------------
    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def r(self) -> np.ndarray:
        return self.nodes[:, 0]

    @property
    def z(self) -> np.ndarray:
        return self.nodes[:, 1]

    @cached_property
    def areas(self) -> np.ndarray:
        return 0.5 * self._signed_area2()

    @cached_property
    def hat_gradients(self) -> np.ndarray:
        """(T, 3, 2) constant gradients of the three P1 hat functions per triangle."""
        p = self.nodes[self.triangles]
        area2 = self._signed_area2()
        # grad v_k = (-e_z, e_r) / (2|T|) with e = p_{k+2} - p_{k+1}
        g = np.empty((self.n_triangles, 3, 2))
        for k in range(3):
            e = p[:, (k + 2) % 3] - p[:, (k + 1) % 3]
            g[:, k, 0] = -e[:, 1] / area2
            g[:, k, 1] = e[:, 0] / area2
        return g

    @cached_property
    def is_boundary(self) -> np.ndarray:
        mask = np.zeros(self.n_nodes, dtype=bool)
        mask[self.boundary_nodes] = True
        return mask

    @cached_property
    def boundary_arclength(self) -> tuple[np.ndarray, float]:
        """Cumulative arclength of each boundary node from the first one, and the perimeter."""
        p = self.nodes[self.boundary_nodes]
        seg = np.linalg.norm(np.roll(p, -1, axis=0) - p, axis=1)
        s = np.concatenate([[0.0], np.cumsum(seg)[:-1]])
        return s, float(seg.sum())

    @cached_property
    def triangle_neighbors(self) -> np.ndarray:
        """(T, 3) index of the triangle across the edge opposite local vertex k, -1 on the boundary."""
        T = self.n_triangles
        nb = -np.ones((T, 3), dtype=np.int64)
        owner = {}
        for t, tri in enumerate(self.triangles):
            for k in range(3):
                key = (min(tri[(k + 1) % 3], tri[(k + 2) % 3]), max(tri[(k + 1) % 3], tri[(k + 2) % 3]))
                other = owner.pop(key, None)
                if other is None:
                    owner[key] = (t, k)
                else:
                    nb[t, k] = other[0]
                    nb[other[0], other[1]] = t
        return nb

    @cached_property
    def node_neighbors(self) -> list[np.ndarray]:
        """Sorted 1-ring neighbour node indices of every node."""
        rings = [set() for _ in range(self.n_nodes)]
        for a, b, c in self.triangles:
            rings[a].update((b, c))
            rings[b].update((a, c))
            rings[c].update((a, b))
        return [np.array(sorted(s), dtype=np.int64) for s in rings]

    @cached_property
    def node_triangles(self) -> list[np.ndarray]:
        lists = [[] for _ in range(self.n_nodes)]
        for t, tri in enumerate(self.triangles):
            for v in tri:
                lists[v].append(t)
        return [np.array(l, dtype=np.int64) for l in lists]

    @cached_property
    def diameter(self) -> float:
        lo, hi = self.nodes.min(axis=0), self.nodes.max(axis=0)
        return float(np.hypot(*(hi - lo)))

    @cached_property
    def max_edge(self) -> float:
        p = self.nodes[self.triangles]
        return float(max(np.linalg.norm(p[:, i] - p[:, j], axis=1).max() for i, j in ((0, 1), (1, 2), (2, 0))))

    # -- point location ---------------------------------------------------
    def barycentric(self, t: int, point) -> np.ndarray:
        p = self.nodes[self.triangles[t]]
        x = np.asarray(point, dtype=float)
        d1, d2, dx = p[1] - p[0], p[2] - p[0], x - p[0]
        det = d1[0] * d2[1] - d1[1] * d2[0]
        l1 = (dx[0] * d2[1] - dx[1] * d2[0]) / det
        l2 = (d1[0] * dx[1] - d1[1] * dx[0]) / det
        return np.array([1.0 - l1 - l2, l1, l2])

    def _all_barycentric(self, point) -> np.ndarray:
        p = self.nodes[self.triangles]
        x = np.asarray(point, dtype=float)
        d1, d2, dx = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], x - p[:, 0]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        l1 = (dx[:, 0] * d2[:, 1] - dx[:, 1] * d2[:, 0]) / det
        l2 = (d1[:, 0] * dx[:, 1] - d1[:, 1] * dx[:, 0]) / det
        return np.stack([1.0 - l1 - l2, l1, l2], axis=1)

    def locate(self, point, start: int = 0, tol: float = _BARY_TOL) -> int:
        """Index of the triangle containing `point`.

        Walks from `start` towards the point; falls back to a brute-force scan
        when the walk leaves the mesh. Points on shared edges or vertices
        resolve to the lowest-index containing triangle.
        """
        t = int(start) if 0 <= start < self.n_triangles else 0
        nb = self.triangle_neighbors
        found = -1
        for _ in range(self.n_triangles):
            lam = self.barycentric(t, point)
            k = int(np.argmin(lam))
            if lam[k] >= -tol:
                found = t
                break
            nxt = nb[t, k]
            if nxt < 0:
                break
            t = int(nxt)
        if found >= 0 and np.all(self.barycentric(found, point) > tol):
            return found
        lam = self._all_barycentric(point)
        hits = np.flatnonzero(np.all(lam >= -tol, axis=1))
        if hits.size == 0:
            raise MeshError(f"point ({point[0]:.6g}, {point[1]:.6g}) is outside the mesh")
        return int(hits[0])

    def contains(self, point, tol: float = _BARY_TOL) -> bool:
        return bool(np.any(np.all(self._all_barycentric(point) >= -tol, axis=1)))

    def interpolate(self, values, point, t: int | None = None) -> float:
        if t is None:
            t = self.locate(point)
        return float(self.barycentric(t, point) @ np.asarray(values)[self.triangles[t]])


def gradient_at(mesh: Mesh, psi, point) -> np.ndarray:
    """P1 gradient (d/dr, d/dz) of `psi` at `point`."""
    t = mesh.locate(point)
    psi = np.asarray(psi, dtype=float)
    return psi[mesh.triangles[t]] @ mesh.hat_gradients[t]


# -- text format -------------------------------------------------------------

def parse_mesh(text: str) -> Mesh:
    lines = [(i + 1, ln.strip()) for i, ln in enumerate(text.splitlines())]
    lines = [(i, ln) for i, ln in lines if ln]
    if not lines:
        raise MeshError("line 1: empty mesh file")
    lineno, header = lines[0]
    tok = header.split()
    if len(tok) != 8 or tok[0::2] != ["nodes", "triangles", "boundary", "limiter"]:
        raise MeshError(f"line {lineno}: expected 'nodes N triangles T boundary B limiter L'")
    try:
        n, t, b, l = (int(x) for x in tok[1::2])
    except ValueError:
        raise MeshError(f"line {lineno}: counts must be integers") from None
    if min(n, t, b, l) < 0:
        raise MeshError(f"line {lineno}: counts must be non-negative")
    body = lines[1:]
    if len(body) != n + t + b + l:
        raise MeshError(
            f"line {lineno}: header announces {n + t + b + l} data lines, file has {len(body)}"
        )

    def rows(chunk, width, kind, conv):
        out = []
        for ln_no, ln in chunk:
            parts = ln.split()
            if len(parts) != width:
                raise MeshError(f"line {ln_no}: expected {width} value(s) for {kind}, got {len(parts)}")
            try:
                out.append([conv(p) for p in parts])
            except ValueError:
                raise MeshError(f"line {ln_no}: cannot parse {kind} entry {ln!r}") from None
        return out

    nodes = rows(body[:n], 2, "node", float)
    tris = rows(body[n:n + t], 3, "triangle", int)
    bnd = rows(body[n + t:n + t + b], 1, "boundary node", int)
    lim = rows(body[n + t + b:], 1, "limiter node", int)
    return Mesh(
        np.array(nodes, dtype=float).reshape(-1, 2),
        np.array(tris, dtype=np.int64).reshape(-1, 3),
        np.array(bnd, dtype=np.int64).ravel(),
        np.array(lim, dtype=np.int64).ravel(),
    )


def load_mesh(path) -> Mesh:
    path = os.fspath(path)
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise MeshError(f"cannot read mesh file {path}: {exc.strerror}") from None
    return parse_mesh(text)


def format_mesh(mesh: Mesh) -> str:
    out = [
        f"nodes {mesh.n_nodes} triangles {mesh.n_triangles} "
        f"boundary {len(mesh.boundary_nodes)} limiter {len(mesh.limiter_nodes)}"
    ]
    out += [f"{r:.17g} {z:.17g}" for r, z in mesh.nodes]
    out += [f"{i} {j} {k}" for i, j, k in mesh.triangles]
    out += [str(int(b)) for b in mesh.boundary_nodes]
    out += [str(int(l)) for l in mesh.limiter_nodes]
    return "\n".join(out) + "\n"


def save_mesh(mesh: Mesh, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_mesh(mesh))


def bundled_mesh(name: str = "ts412.mesh") -> Mesh:
    """One of the meshes shipped in ``gsrecon/data``."""
    return parse_mesh(resources.files("gsrecon").joinpath("data", name).read_text(encoding="utf-8"))


# -- generators --------------------------------------------------------------

def _orient_ccw(nodes, tris):
    p = nodes[tris]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    neg = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0] < 0
    tris = tris.copy()
    tris[neg] = tris[neg][:, [0, 2, 1]]
    return tris


def rectangle_mesh(rmin, rmax, zmin, zmax, nr, nz, limiter=None) -> Mesh:
    """Structured (nr x nz cells) right-triangle mesh of a rectangle.

    Cells are split along alternating diagonals so the mesh has no preferred
    direction.  `limiter` is an optional callable (r, z) -> bool selecting
    limiter nodes.
    """
    rs = np.linspace(rmin, rmax, nr + 1)
    zs = np.linspace(zmin, zmax, nz + 1)
    R, Z = np.meshgrid(rs, zs, indexing="ij")
    nodes = np.column_stack([R.ravel(), Z.ravel()])
    idx = np.arange((nr + 1) * (nz + 1)).reshape(nr + 1, nz + 1)
    tris = []
    for i in range(nr):
        for j in range(nz):
            a, b, c, d = idx[i, j], idx[i + 1, j], idx[i + 1, j + 1], idx[i, j + 1]
            if (i + j) % 2 == 0:
                tris += [(a, b, c), (a, c, d)]
            else:
                tris += [(a, b, d), (b, c, d)]
    bnd = (
        [idx[i, 0] for i in range(nr)]
        + [idx[nr, j] for j in range(nz)]
        + [idx[i, nz] for i in range(nr, 0, -1)]
        + [idx[0, j] for j in range(nz, 0, -1)]
    )
    lim = np.zeros(0, dtype=int)
    if limiter is not None:
        lim = np.flatnonzero([bool(limiter(r, z)) for r, z in nodes])
    return Mesh(nodes, _orient_ccw(nodes, np.array(tris)), np.array(bnd), lim)


def _ring_counts(n_rings, n_outer, n_total):
    """Node counts per ring: inner rings proportional to ring index, outer ring fixed."""
    inner = n_total - 1 - n_outer
    k = np.arange(1, n_rings)
    ideal = inner * k / k.sum()
    counts = np.floor(ideal).astype(int)
    short = inner - counts.sum()
    counts[np.argsort(-(ideal - counts), kind="stable")[:short]] += 1
    return list(counts) + [n_outer]


def tokamak_mesh(R0=2.4, a=0.8, n_rings=12, n_outer=60, n_total=412, limiter_ring=11) -> Mesh:
    """Unstructured mesh of a circular vessel cross-section.

    Nodes sit on concentric rings around (R0, 0); the outermost ring is the
    vessel wall and ring `limiter_ring` is a full poloidal limiter.  With the
    defaults the Delaunay triangulation has 412 nodes and 762 triangles, the
    size of the Tore Supra production mesh.
    """
    counts = _ring_counts(n_rings, n_outer, n_total)
    pts = [(R0, 0.0)]
    ring_of = [0]
    for k, c in enumerate(counts, start=1):
        rho = a * k / n_rings
        # half-step twist on alternate rings avoids cocircular Delaunay ties
        th = 2 * np.pi * (np.arange(c) + 0.5 * (k % 2)) / c
        pts += list(zip(R0 + rho * np.cos(th), rho * np.sin(th)))
        ring_of += [k] * c
    nodes = np.array(pts)
    ring_of = np.array(ring_of)
    tri = Delaunay(nodes)
    tris = _orient_ccw(nodes, tri.simplices.astype(np.int64))
    bnd = np.flatnonzero(ring_of == n_rings)
    lim = np.flatnonzero(ring_of == limiter_ring)
    return Mesh(nodes, tris, bnd, lim)


def refine_uniform(mesh: Mesh) -> Mesh:
    """Split every triangle into four through its edge midpoints."""
    nodes = [tuple(p) for p in mesh.nodes]
    mid = {}

    def midpoint(i, j):
        key = (min(i, j), max(i, j))
        if key not in mid:
            mid[key] = len(nodes)
            nodes.append(tuple(0.5 * (mesh.nodes[i] + mesh.nodes[j])))
        return mid[key]

    tris = []
    for a, b, c in mesh.triangles:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        tris += [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
    bnd = []
    loop = list(mesh.boundary_nodes)
    for i, v in enumerate(loop):
        bnd += [v, mid[tuple(sorted((v, loop[(i + 1) % len(loop)])))]]
    lim = set(int(v) for v in mesh.limiter_nodes)
    lim |= {m for (i, j), m in mid.items() if i in lim and j in lim}
    return Mesh(np.array(nodes), np.array(tris), np.array(bnd), np.array(sorted(lim), dtype=int))
