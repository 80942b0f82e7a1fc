"""Measurement model: flux loops, magnetic probes, interferometry and polarimetry chords.

Measurement files are JSON documents (schema version 1)::

    {
      "version": 1,
      "plasma_current": 1.0e6,
      "flux_loops": [{"s": 0.0, "psi": 0.12, "sigma": 1e-3}, ...],
      "probes": [{"r": 3.2, "z": 0.0, "nr": 1.0, "nz": 0.0, "value": -0.05, "sigma": 1e-3}, ...],
      "chords": [{"points": [[2.1, -1.0], [2.1, 1.0]],
                  "alpha": 1.2e17, "beta": 4.1e19,
                  "sigma_alpha": 1e15, "sigma_beta": 4e17,
                  "polarimetry": true, "interferometry": true}, ...]
    }

``s`` is the arclength along the vessel boundary loop, measured from the first
boundary node in loop order.  ``(nr, nz)`` is the probe orientation: the probe
reads ``(1/r) dpsi/dn`` along that unit vector.  All units are SI.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import MeasurementError
from .geometry import PlasmaDomain
from .mesh import Mesh
from .profiles import BasisFamily, basis_matrix

__all__ = [
    "FluxLoop",
    "Probe",
    "Chord",
    "MeasurementSet",
    "ChordQuadrature",
    "load_measurements",
    "save_measurements",
    "interpolate_dirichlet",
    "probe_rows",
    "chord_quadrature",
    "interferometry_matrix",
    "polarimetry_rows",
    "weight_matrix",
    "point_on_boundary",
]

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
PSIBAR_CLAMP_TOL = 1e-9


@dataclass
class FluxLoop:
    s: float
    psi: float
    sigma: float = 1.0


@dataclass
class Probe:
    point: tuple
    normal: tuple
    value: float
    sigma: float = 1.0


@dataclass
class Chord:
    points: np.ndarray
    alpha: float = 0.0
    beta: float = 0.0
    sigma_alpha: float = 1.0
    sigma_beta: float = 1.0
    polarimetry: bool = True
    interferometry: bool = True

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)
        if len(self.points) < 2:
            raise MeasurementError("a chord needs at least two points")


@dataclass
class MeasurementSet:
    flux_loops: list = field(default_factory=list)
    probes: list = field(default_factory=list)
    chords: list = field(default_factory=list)
    plasma_current: float = 0.0

    def validate(self, mesh: Mesh | None = None):
        sigmas = [l.sigma for l in self.flux_loops] + [p.sigma for p in self.probes]
        for c in self.chords:
            if c.polarimetry:
                sigmas.append(c.sigma_alpha)
            if c.interferometry:
                sigmas.append(c.sigma_beta)
        if any(not (s > 0 and np.isfinite(s)) for s in sigmas):
            raise MeasurementError("all measurement standard deviations must be positive")
        if not (np.isfinite(self.plasma_current) and self.plasma_current != 0):
            raise MeasurementError("plasma current must be finite and non-zero")
        if mesh is not None:
            for i, p in enumerate(self.probes):
                if not point_on_boundary(mesh, p.point):
                    raise MeasurementError(f"probe {i} at {tuple(p.point)} is not on the vessel boundary")
            for i, c in enumerate(self.chords):
                try:
                    chord_quadrature(mesh, c)
                except MeasurementError:
                    raise MeasurementError(f"chord {i} does not intersect the mesh") from None
        return self

    @property
    def polarimetry_chords(self):
        return [c for c in self.chords if c.polarimetry]

    @property
    def interferometry_chords(self):
        return [c for c in self.chords if c.interferometry]

    def to_dict(self):
        return {
            "version": SCHEMA_VERSION,
            "plasma_current": float(self.plasma_current),
            "flux_loops": [{"s": float(l.s), "psi": float(l.psi), "sigma": float(l.sigma)}
                           for l in self.flux_loops],
            "probes": [{"r": float(p.point[0]), "z": float(p.point[1]),
                        "nr": float(p.normal[0]), "nz": float(p.normal[1]),
                        "value": float(p.value), "sigma": float(p.sigma)} for p in self.probes],
            "chords": [{"points": c.points.tolist(), "alpha": float(c.alpha), "beta": float(c.beta),
                        "sigma_alpha": float(c.sigma_alpha), "sigma_beta": float(c.sigma_beta),
                        "polarimetry": bool(c.polarimetry), "interferometry": bool(c.interferometry)}
                       for c in self.chords],
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("version") != SCHEMA_VERSION:
            raise MeasurementError(f"unsupported measurement schema version {doc.get('version')!r}")
        try:
            loops = [FluxLoop(float(d["s"]), float(d["psi"]), float(d.get("sigma", 1.0)))
                     for d in doc.get("flux_loops", [])]
            probes = []
            for d in doc.get("probes", []):
                n = np.array([float(d["nr"]), float(d["nz"])])
                norm = np.hypot(*n)
                if norm == 0:
                    raise MeasurementError("probe normal must be non-zero")
                if abs(norm - 1.0) > 1e-12:
                    n = n / norm
                probes.append(Probe((float(d["r"]), float(d["z"])), tuple(float(v) for v in n),
                                    float(d["value"]), float(d.get("sigma", 1.0))))
            chords = [Chord(np.asarray(d["points"], dtype=float), float(d.get("alpha", 0.0)),
                            float(d.get("beta", 0.0)), float(d.get("sigma_alpha", 1.0)),
                            float(d.get("sigma_beta", 1.0)), bool(d.get("polarimetry", True)),
                            bool(d.get("interferometry", True)))
                      for d in doc.get("chords", [])]
            ip = float(doc["plasma_current"])
        except (KeyError, TypeError, ValueError) as exc:
            raise MeasurementError(f"malformed measurement document: {exc!r}") from None
        return cls(loops, probes, chords, ip).validate()


def load_measurements(path) -> MeasurementSet:
    path = os.fspath(path)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise MeasurementError(f"cannot read measurement file {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise MeasurementError(f"{path}: line {exc.lineno}: invalid JSON ({exc.msg})") from None
    return MeasurementSet.from_dict(doc)


def dumps_measurements(meas: MeasurementSet) -> str:
    return json.dumps(meas.to_dict(), indent=1, sort_keys=True) + "\n"


def save_measurements(meas: MeasurementSet, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_measurements(meas))


# -- boundary helpers ------------------------------------------------------------

def boundary_point(mesh: Mesh, s: float):
    """Point and outward unit normal at arclength `s` along the boundary loop."""
    snodes, perim = mesh.boundary_arclength
    s = float(s) % perim
    k = int(np.searchsorted(snodes, s, side="right") - 1)
    b = mesh.boundary_nodes
    p0, p1 = mesh.nodes[b[k]], mesh.nodes[b[(k + 1) % len(b)]]
    seg = np.linalg.norm(p1 - p0)
    t = (s - snodes[k]) / seg
    tangent = (p1 - p0) / seg
    sign = 1.0 if _loop_area(mesh) > 0 else -1.0
    normal = sign * np.array([tangent[1], -tangent[0]])
    return p0 + t * (p1 - p0), normal


def _loop_area(mesh: Mesh) -> float:
    p = mesh.nodes[mesh.boundary_nodes]
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def point_on_boundary(mesh: Mesh, point, rtol: float = 1e-9) -> bool:
    p = mesh.nodes[mesh.boundary_nodes]
    a, b = p, np.roll(p, -1, axis=0)
    d = b - a
    x = np.asarray(point, dtype=float)
    t = np.clip(np.einsum("ij,ij->i", x - a, d) / np.einsum("ij,ij->i", d, d), 0.0, 1.0)
    dist = np.linalg.norm(a + t[:, None] * d - x, axis=1).min()
    return bool(dist <= rtol * mesh.diameter)


# -- flux loops -----------------------------------------------------------------

def interpolate_dirichlet(flux_loops, mesh: Mesh) -> np.ndarray:
    """Periodic cubic-spline interpolation of loop fluxes onto every boundary node."""
    if len(flux_loops) < 4:
        raise MeasurementError(f"need at least 4 flux loops, got {len(flux_loops)}")
    snodes, perim = mesh.boundary_arclength
    s = np.array([l.s for l in flux_loops], dtype=float) % perim
    v = np.array([l.psi for l in flux_loops], dtype=float)
    order = np.argsort(s, kind="stable")
    s, v = s[order], v[order]
    gaps = np.diff(np.concatenate([s, [s[0] + perim]]))
    if np.any(gaps <= 1e-12 * perim):
        raise MeasurementError("flux loop positions must be distinct")
    spline = CubicSpline(np.concatenate([s, [s[0] + perim]]), np.concatenate([v, [v[0]]]),
                         bc_type="periodic")
    x = np.where(snodes < s[0], snodes + perim, snodes)
    return spline(x)


# -- probes ----------------------------------------------------------------------

def probe_rows(mesh: Mesh, probes) -> np.ndarray:
    """Rows mapping nodal flux to probe readings (1/r) dpsi/dn."""
    C = np.zeros((len(probes), mesh.n_nodes))
    for i, p in enumerate(probes):
        if not point_on_boundary(mesh, p.point):
            raise MeasurementError(f"probe {i} at {tuple(p.point)} is not on the vessel boundary")
        t = mesh.locate(p.point)
        n = np.asarray(p.normal, dtype=float)
        C[i, mesh.triangles[t]] = (mesh.hat_gradients[t] @ n) / p.point[0]
    return C


# -- chords ----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ChordQuadrature:
    """Two-point Gauss rule on every chord/triangle intersection."""

    points: np.ndarray  # (Q, 2)
    weights: np.ndarray  # (Q,)
    triangles: np.ndarray  # (Q,)
    bary: np.ndarray  # (Q, 3)
    normals: np.ndarray  # (Q, 2) unit normal of the chord piece

    @property
    def length(self) -> float:
        return float(self.weights.sum())


def _gauss_rule(order: int):
    """Gauss-Legendre nodes and weights on [0, 1]."""
    if order < 1:
        raise ValueError("quadrature order must be at least 1")
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


def chord_quadrature(mesh: Mesh, chord, order: int = 2) -> ChordQuadrature:
    """Clip a chord polyline against every triangle and place Gauss points.

    `order` is the number of Gauss points per piece (2 by default; 1 gives
    the midpoint rule).  The chord normal is the direction vector
    rotated by +90 degrees, ``nu = (-d_z, d_r)``.
    """
    nodes_1d, w_1d = _gauss_rule(order)
    pts = chord.points if isinstance(chord, Chord) else np.asarray(chord, dtype=float)
    P = mesh.nodes[mesh.triangles]  # (T, 3, 2)
    # inward edge normals of the CCW triangles
    E = np.roll(P, -1, axis=1) - P
    N = np.stack([-E[..., 1], E[..., 0]], axis=-1)
    out_p, out_w, out_t, out_n = [], [], [], []
    for a, b in zip(pts[:-1], pts[1:]):
        d = b - a
        L = float(np.hypot(*d))
        if L == 0.0:
            continue
        num = np.einsum("tkd,tkd->tk", N, a - P)  # >= 0 inside at t = 0
        den = np.einsum("tkd,d->tk", N, d)
        with np.errstate(divide="ignore", invalid="ignore"):
            tt = -num / den
        t0 = np.where(den > 0, tt, -np.inf).max(axis=1)
        t1 = np.where(den < 0, tt, np.inf).min(axis=1)
        parallel_out = np.any((den == 0) & (num < 0), axis=1)
        t0 = np.maximum(t0, 0.0)
        t1 = np.minimum(t1, 1.0)
        keep = (~parallel_out) & (t1 - t0 > 1e-12)
        idx = np.flatnonzero(keep)
        pieces = sorted(zip(t0[idx], t1[idx], idx))
        # drop overlap from chords running exactly along a shared edge
        last = 0.0
        nu = np.array([-d[1], d[0]]) / L
        for s0, s1, t in pieces:
            s0 = max(s0, last)
            if s1 - s0 <= 1e-12:
                continue
            last = s1
            for g, wg in zip(nodes_1d, w_1d):
                out_p.append(a + (s0 + g * (s1 - s0)) * d)
                out_w.append(wg * (s1 - s0) * L)
                out_t.append(t)
                out_n.append(nu)
    if not out_w:
        raise MeasurementError("chord does not intersect the mesh")
    points = np.array(out_p)
    tris = np.array(out_t, dtype=np.int64)
    p = P[tris]
    d1, d2, dx = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], points - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    l1 = (dx[:, 0] * d2[:, 1] - dx[:, 1] * d2[:, 0]) / det
    l2 = (d1[:, 0] * dx[:, 1] - d1[:, 1] * dx[:, 0]) / det
    bary = np.column_stack([1.0 - l1 - l2, l1, l2])
    return ChordQuadrature(points, np.array(out_w), tris, bary, np.array(out_n))


def _chord_psibar(mesh: Mesh, quad: ChordQuadrature, psi, domain: PlasmaDomain):
    """Clamped psibar at the chord points and the in-plasma indicator."""
    psi_pts = np.einsum("qk,qk->q", quad.bary, np.asarray(psi)[mesh.triangles[quad.triangles]])
    x = (psi_pts - domain.psi_axis) / (domain.psi_b - domain.psi_axis)
    inside = (x <= 1.0) & domain.triangle_mask[quad.triangles]
    if np.any(inside & (x < -PSIBAR_CLAMP_TOL)):
        log.warning("psibar below 0 by %.3g on a chord; clamped", -x[inside].min())
    return np.clip(x, 0.0, 1.0), inside


def interferometry_matrix(mesh: Mesh, quads, psi, domain: PlasmaDomain, family: BasisFamily) -> np.ndarray:
    """M[i, j] = int_{C_i} Phi_j(psibar) dl over the in-plasma part of chord i."""
    M = np.zeros((len(quads), family.m))
    for i, q in enumerate(quads):
        x, inside = _chord_psibar(mesh, q, psi, domain)
        M[i] = (q.weights * inside) @ basis_matrix(family, x)
    return M


def polarimetry_rows(mesh: Mesh, quads, ne_coeffs, family: BasisFamily, psi, domain: PlasmaDomain) -> np.ndarray:
    """Rows mapping nodal flux to int (n_e / r) dpsi/dnu dl along each chord."""
    C = np.zeros((len(quads), mesh.n_nodes))
    ne_coeffs = np.asarray(ne_coeffs, dtype=float)
    for i, q in enumerate(quads):
        x, inside = _chord_psibar(mesh, q, psi, domain)
        ne = (basis_matrix(family, x) @ ne_coeffs) * inside
        g = mesh.hat_gradients[q.triangles]  # (Q, 3, 2)
        dn = np.einsum("qkd,qd->qk", g, q.normals)
        contrib = (q.weights * ne / q.points[:, 0])[:, None] * dn
        np.add.at(C[i], mesh.triangles[q.triangles], contrib)
    return C


def weight_matrix(probe_sigmas, polarimetry_sigmas, K1: float) -> np.ndarray:
    """Diagonal of D: 1/sigma^2 for probe rows, K1/sigma^2 for polarimetry rows."""
    sp = np.asarray(probe_sigmas, dtype=float)
    sa = np.asarray(polarimetry_sigmas, dtype=float)
    if np.any(sp <= 0) or np.any(sa <= 0):
        raise MeasurementError("standard deviations must be positive")
    return np.concatenate([1.0 / sp**2, K1 / sa**2])
