"""Flux-surface geometry: magnetic axis, X-point, plasma boundary and domain.

The flux is assumed maximal on the magnetic axis, so the plasma is the
axis-connected super-level set ``{psi >= psi_b}`` and the normalised flux
``psibar = (psi - psi_axis) / (psi_b - psi_axis)`` runs from 0 on the axis to 1
on the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DataError, NoPlasmaError
from .fem import QUAD_BARY, at_quad_points
from .mesh import Mesh

__all__ = [
    "BoundaryKind",
    "PlasmaDomain",
    "Contour",
    "find_axis",
    "find_xpoint",
    "compute_boundary_flux",
    "normalize_flux",
    "plasma_mask",
    "plasma_domain",
    "flux_contour",
]


class BoundaryKind(str, Enum):
    LIMITER = "Limiter"
    XPOINT = "XPoint"


@dataclass(frozen=True, eq=False)
class PlasmaDomain:
    psi_axis: float
    axis_point: tuple
    psi_b: float
    boundary_kind: BoundaryKind
    xpoint: tuple | None
    quad_membership: np.ndarray  # (T, 3) bool, chi_Omega_p at quadrature points
    triangle_mask: np.ndarray  # (T,) bool, triangles of the axis-connected component
    psibar_q: np.ndarray  # (T, 3) normalised flux at quadrature points

    def psibar(self, psi):
        return normalize_flux(psi, self.psi_axis, self.psi_b)


# -- local quadratic fits ------------------------------------------------------

class _PatchFits:
    """Least-squares quadratic fit operators on the 1-ring patch of every node."""

    def __init__(self, mesh: Mesh):
        n = mesh.n_nodes
        patches = []
        for i in range(n):
            patch = np.concatenate([[i], mesh.node_neighbors[i]])
            if len(patch) < 7:
                second = np.unique(np.concatenate([mesh.node_neighbors[j] for j in patch]))
                patch = np.concatenate([[i], np.setdiff1d(second, [i])])
            patches.append(patch)
        kmax = max(len(p) for p in patches)
        self.index = np.empty((n, kmax), dtype=np.int64)
        self.pinv = np.zeros((n, 6, kmax))
        self.scale = np.empty(n)
        for i, patch in enumerate(patches):
            d = mesh.nodes[patch] - mesh.nodes[i]
            s = np.max(np.hypot(d[:, 0], d[:, 1]))
            x, y = d[:, 0] / s, d[:, 1] / s
            V = np.column_stack([np.ones_like(x), x, y, x * x, x * y, y * y])
            k = len(patch)
            self.index[i, :k] = patch
            self.index[i, k:] = i
            self.pinv[i, :, :k] = np.linalg.pinv(V)
            self.scale[i] = s

    def coefficients(self, psi, nodes):
        return np.einsum("nck,nk->nc", self.pinv[nodes], psi[self.index[nodes]])


def _patch_fits(mesh: Mesh) -> _PatchFits:
    fits = mesh.__dict__.get("_patch_fits")
    if fits is None:
        fits = mesh.__dict__["_patch_fits"] = _PatchFits(mesh)
    return fits


def _stationary(c):
    """Stationary points (local scaled coords) and Hessian determinants of fits c (N, 6)."""
    h11, h12, h22 = 2 * c[:, 3], c[:, 4], 2 * c[:, 5]
    det = h11 * h22 - h12 * h12
    with np.errstate(divide="ignore", invalid="ignore"):
        x = (-h22 * c[:, 1] + h12 * c[:, 2]) / det
        y = (h12 * c[:, 1] - h11 * c[:, 2]) / det
    return np.column_stack([x, y]), det, h11


def _fit_value(c, xy):
    x, y = xy[..., 0], xy[..., 1]
    return c[..., 0] + c[..., 1] * x + c[..., 2] * y + c[..., 3] * x * x + c[..., 4] * x * y + c[..., 5] * y * y


def _in_patch(mesh: Mesh, node: int, point, tol=1e-12) -> bool:
    for t in mesh.node_triangles[node]:
        if np.all(mesh.barycentric(t, point) >= -tol):
            return True
    return False


# -- axis and X-point ------------------------------------------------------------

def find_axis(mesh: Mesh, psi):
    """Magnetic axis ``(axis_point, psi_axis)``.

    The maximal node is refined by a quadratic fit over its patch; the fitted
    maximiser is pulled back into the patch if it falls outside, and the axis
    flux is never below the largest nodal value.
    """
    psi = np.asarray(psi, dtype=float)
    if not np.all(np.isfinite(psi)):
        raise DataError("flux contains non-finite values")
    i = int(np.argmax(psi))
    pmax = psi[i]
    if psi[mesh.boundary_nodes].max() >= pmax:
        raise NoPlasmaError("no plasma: flux maximum lies on the domain boundary")
    fits = _patch_fits(mesh)
    c = fits.coefficients(psi, np.array([i]))
    xs, det, h11 = _stationary(c)
    base = mesh.nodes[i]
    if not (det[0] > 0 and h11[0] < 0 and np.all(np.isfinite(xs))):
        return (float(base[0]), float(base[1])), float(pmax)
    target = base + xs[0] * fits.scale[i]
    if not _in_patch(mesh, i, target):
        lo, hi = 0.0, 1.0
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            if _in_patch(mesh, i, base + mid * (target - base)):
                lo = mid
            else:
                hi = mid
        target = base + lo * (target - base)
    value = float(_fit_value(c[0], (target - base) / fits.scale[i]))
    return (float(target[0]), float(target[1])), max(value, float(pmax))


def find_xpoint(mesh: Mesh, psi):
    """Saddle point of largest flux as ``(xpoint, psi_X)``, or None.

    A node is a candidate when the quadratic fit on its patch is indefinite
    and the fit's stationary point lies inside the node's own patch and is
    closer to this node than to any patch neighbour.
    """
    psi = np.asarray(psi, dtype=float)
    fits = _patch_fits(mesh)
    interior = np.flatnonzero(~mesh.is_boundary)
    if interior.size == 0:
        return None
    c = fits.coefficients(psi, interior)
    xs, det, _ = _stationary(c)
    span = psi[fits.index[interior]].max(axis=1) - psi[fits.index[interior]].min(axis=1)
    # Hessian (scaled coords) must be non-negligible relative to the patch flux range
    ok = (det < -1e-6 * span**2) & np.all(np.isfinite(xs), axis=1) & (span > 0)
    ok &= np.hypot(xs[:, 0], xs[:, 1]) <= 1.0
    best = None
    for j in np.flatnonzero(ok):
        i = int(interior[j])
        point = mesh.nodes[i] + xs[j] * fits.scale[i]
        nbrs = mesh.node_neighbors[i]
        d_self = np.hypot(*(point - mesh.nodes[i]))
        if np.any(np.hypot(*(mesh.nodes[nbrs] - point).T) < d_self):
            continue
        if not _in_patch(mesh, i, point):
            continue
        value = float(_fit_value(c[j], xs[j]))
        if best is None or value > best[1]:
            best = ((float(point[0]), float(point[1])), value)
    return best


def compute_boundary_flux(psi, mesh: Mesh, axis, xp):
    """``(psi_b, kind)``: the larger of the limiter flux and the X-point flux.

    Ties go to the limiter.  Without limiter nodes the vessel wall acts as
    the limiter.
    """
    psi = np.asarray(psi, dtype=float)
    lim = mesh.limiter_nodes if len(mesh.limiter_nodes) else mesh.boundary_nodes
    psi_b, kind = float(psi[lim].max()), BoundaryKind.LIMITER
    if xp is not None and xp[1] > psi_b:
        psi_b, kind = float(xp[1]), BoundaryKind.XPOINT
    if psi_b >= axis[1]:
        raise NoPlasmaError(f"no plasma: boundary flux {psi_b:.6g} >= axis flux {axis[1]:.6g}")
    return psi_b, kind


def normalize_flux(psi_value, psi_axis, psi_b):
    if psi_b == psi_axis:
        raise NoPlasmaError("cannot normalise flux: psi_b equals psi_axis")
    return (np.asarray(psi_value, dtype=float) - psi_axis) / (psi_b - psi_axis)


def _flood(mesh: Mesh, seeds, allowed):
    mask = np.zeros(mesh.n_triangles, dtype=bool)
    stack = [int(s) for s in seeds if allowed[s]]
    nb = mesh.triangle_neighbors
    while stack:
        t = stack.pop()
        if mask[t]:
            continue
        mask[t] = True
        for u in nb[t]:
            if u >= 0 and allowed[u] and not mask[u]:
                stack.append(int(u))
    return mask


def _axis_seeds(mesh: Mesh, psi, axis_point):
    seeds = [mesh.locate(axis_point)]
    seeds += list(mesh.node_triangles[int(np.argmax(psi))])
    return seeds


def plasma_mask(mesh: Mesh, psi, psi_b, axis_point, psi_axis=None, boundary_kind=BoundaryKind.LIMITER,
                xpoint=None) -> PlasmaDomain:
    """Mark quadrature points inside the axis-connected plasma region."""
    psi = np.asarray(psi, dtype=float)
    if psi_axis is None:
        psi_axis = float(psi.max())
    psi_q = at_quad_points(mesh, psi)
    inside = psi_q >= psi_b
    touching = inside.any(axis=1)
    comp = _flood(mesh, _axis_seeds(mesh, psi, axis_point), touching)
    member = inside & comp[:, None]
    if not member.any():
        raise NoPlasmaError("empty plasma: no quadrature point has psi >= psi_b")
    return PlasmaDomain(
        psi_axis=float(psi_axis),
        axis_point=tuple(axis_point),
        psi_b=float(psi_b),
        boundary_kind=BoundaryKind(boundary_kind),
        xpoint=xpoint,
        quad_membership=member,
        triangle_mask=comp,
        psibar_q=normalize_flux(psi_q, psi_axis, psi_b),
    )


def plasma_domain(mesh: Mesh, psi) -> PlasmaDomain:
    """Axis, X-point, boundary flux and plasma mask in one call."""
    axis_point, psi_axis = find_axis(mesh, psi)
    xp = find_xpoint(mesh, psi)
    if xp is not None and xp[1] >= psi_axis:
        xp = None
    psi_b, kind = compute_boundary_flux(psi, mesh, (axis_point, psi_axis), xp)
    return plasma_mask(
        mesh, psi, psi_b, axis_point, psi_axis=psi_axis, boundary_kind=kind,
        xpoint=xp[0] if kind is BoundaryKind.XPOINT else None,
    )


# -- contours --------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Contour:
    level: float
    points: np.ndarray  # (k + 1, 2) closed polyline, points[0] == points[-1]
    triangles: np.ndarray  # (k,) triangle holding segment i

    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())


def flux_contour(mesh: Mesh, psi, level: float, domain: PlasmaDomain) -> Contour:
    """Closed counter-clockwise iso-flux line at normalised flux `level`."""
    if not 0.0 < level <= 1.0:
        raise DataError(f"contour level {level} outside (0, 1]")
    psi = np.asarray(psi, dtype=float)
    value = domain.psi_axis + level * (domain.psi_b - domain.psi_axis)
    above = psi >= value
    tri_above = above[mesh.triangles]
    n_above = tri_above.sum(axis=1)
    comp = _flood(mesh, _axis_seeds(mesh, psi, domain.axis_point), n_above > 0)
    crossing = np.flatnonzero(comp & (n_above > 0) & (n_above < 3))
    if crossing.size == 0:
        raise DataError(f"contour at level {level} is empty")

    def edge_point(i, j):
        t = (value - psi[i]) / (psi[j] - psi[i])
        return mesh.nodes[i] + t * (mesh.nodes[j] - mesh.nodes[i])

    # each crossing triangle contributes one segment between two crossed edges
    seg_edges = {}
    by_edge = {}
    for t in crossing:
        tri = mesh.triangles[t]
        ends = []
        for k in range(3):
            i, j = int(tri[k]), int(tri[(k + 1) % 3])
            if above[i] != above[j]:
                ends.append((min(i, j), max(i, j)))
        seg_edges[int(t)] = ends
        for e in ends:
            by_edge.setdefault(e, []).append(int(t))

    loops = []
    unused = set(seg_edges)
    while unused:
        t0 = min(unused)
        unused.discard(t0)
        start, cur = seg_edges[t0]
        edges, tris = [start, cur], [t0]
        t = t0
        closed = False
        while True:
            nxt = [u for u in by_edge[cur] if u != t]
            if not nxt:
                break
            t = nxt[0]
            if t == t0:
                closed = True
                break
            if t not in unused:
                break
            unused.discard(t)
            a, b = seg_edges[t]
            cur = b if a == cur else a
            edges.append(cur)
            tris.append(t)
        if closed and edges[-1] == start:
            loops.append((edges, tris))

    if not loops:
        raise DataError(f"contour at level {level} is not closed inside the mesh")

    def build(edges, tris):
        pts = np.array([edge_point(i, j) for i, j in edges])
        return pts, np.array(tris, dtype=np.int64)

    ax = np.asarray(domain.axis_point)
    best = None
    for edges, tris in loops:
        pts, tr = build(edges, tris)
        enclosing = _winding(pts, ax) != 0
        key = (enclosing, _polyline_length(pts))
        if best is None or key > best[0]:
            best = (key, pts, tr)
    _, pts, tr = best
    if _signed_area(pts) < 0:
        pts, tr = pts[::-1].copy(), tr[::-1].copy()
    keep = np.linalg.norm(np.diff(pts, axis=0), axis=1) > 0.0
    ring = pts[:-1][keep]
    return Contour(level=float(level), points=np.vstack([ring, ring[:1]]), triangles=tr[keep])


def _polyline_length(pts):
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


def _signed_area(pts):
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.sum(x[:-1] * y[1:] - x[1:] * y[:-1]))


def _winding(pts, p):
    d = pts - p
    ang = np.arctan2(d[:, 1], d[:, 0])
    dang = np.diff(ang)
    dang = (dang + np.pi) % (2 * np.pi) - np.pi
    return int(round(dang.sum() / (2 * np.pi)))
