"""Reduced-basis flux functions on [0, 1] and the physical profiles built from them."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import BSpline
from scipy.linalg import block_diag

from .errors import DataError, NumericalError
from .fem import MU0

__all__ = [
    "BasisKind",
    "BasisFamily",
    "ProfileCoefficients",
    "RegularizationMatrix",
    "DerivedProfiles",
    "eval_basis",
    "basis_matrix",
    "regularization_matrix",
    "eval_profile",
    "affine_coefficients",
    "toroidal_current_density",
    "derived_profiles",
    "safety_factor",
    "recovered_gradient",
]


class BasisKind(str, Enum):
    PIECEWISE_LINEAR = "piecewise_linear"
    CUBIC_BSPLINE = "cubic_bspline"


@dataclass(frozen=True)
class BasisFamily:
    """m basis functions on [0, 1] with uniform knots.

    Piecewise-linear hats sit on m knots; cubic B-splines use a clamped knot
    vector with m - 3 uniform intervals.
    """

    kind: BasisKind = BasisKind.CUBIC_BSPLINE
    m: int = 7

    def __post_init__(self):
        object.__setattr__(self, "kind", BasisKind(self.kind))
        if not 4 <= int(self.m) <= 20:
            raise DataError(f"basis dimension m={self.m} outside [4, 20]")
        object.__setattr__(self, "m", int(self.m))

    @cached_property
    def breakpoints(self) -> np.ndarray:
        if self.kind is BasisKind.PIECEWISE_LINEAR:
            return np.linspace(0.0, 1.0, self.m)
        return np.linspace(0.0, 1.0, self.m - 2)

    @cached_property
    def knots(self) -> np.ndarray:
        if self.kind is BasisKind.PIECEWISE_LINEAR:
            return self.breakpoints
        b = self.breakpoints
        return np.concatenate([[0.0] * 3, b, [1.0] * 3])

    @cached_property
    def _spline(self):
        return BSpline(self.knots, np.eye(self.m), 3, extrapolate=False)

    @cached_property
    def _spline_dd(self):
        return self._spline.derivative(2)

    @cached_property
    def greville(self) -> np.ndarray:
        """Abscissae at which coefficients of an affine function equal its values."""
        if self.kind is BasisKind.PIECEWISE_LINEAR:
            return self.breakpoints
        t = self.knots
        return np.array([t[i + 1:i + 4].mean() for i in range(self.m)])

    def to_dict(self):
        return {"kind": self.kind.value, "m": self.m}


def basis_matrix(family: BasisFamily, x, deriv: int = 0) -> np.ndarray:
    """(len(x), m) values of the basis (or its second derivative) at points in [0, 1]."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any((x < 0.0) | (x > 1.0)) or not np.all(np.isfinite(x)):
        raise DataError("basis evaluated outside [0, 1]")
    m = family.m
    if family.kind is BasisKind.PIECEWISE_LINEAR:
        if deriv == 2:
            return np.zeros((x.size, m))
        h = 1.0 / (m - 1)
        k = np.minimum((x / h).astype(np.int64), m - 2)
        frac = x / h - k
        out = np.zeros((x.size, m))
        rows = np.arange(x.size)
        out[rows, k] = 1.0 - frac
        out[rows, k + 1] += frac
        return out
    if deriv not in (0, 2):
        raise ValueError("only deriv=0 or deriv=2 is supported")
    spline = family._spline if deriv == 0 else family._spline_dd
    return spline(x)


def eval_basis(family: BasisFamily, x: float, deriv: int = 0) -> np.ndarray:
    return basis_matrix(family, [x], deriv)[0]


@dataclass(frozen=True, eq=False)
class RegularizationMatrix:
    lam1: np.ndarray

    @property
    def lam2(self) -> np.ndarray:
        return self.lam1

    @property
    def full(self) -> np.ndarray:
        return block_diag(self.lam1, self.lam2)

    def weighted(self, eps1: float, eps2: float) -> np.ndarray:
        """diag(eps1 * Lambda_1, eps2 * Lambda_2)."""
        return block_diag(eps1 * self.lam1, eps2 * self.lam2)


def regularization_matrix(family: BasisFamily) -> RegularizationMatrix:
    """Curvature penalty matrix int_0^1 Phi_i'' Phi_j'' dx.

    For cubic B-splines the integral is exact (second derivatives are linear
    on each knot interval, so two Gauss points per interval suffice).  Hat
    functions have no classical second derivative; their penalty is the Gram
    matrix of divided second differences of the coefficient sequence.
    """
    m = family.m
    if family.kind is BasisKind.PIECEWISE_LINEAR:
        h = 1.0 / (m - 1)
        D = np.zeros((m - 2, m))
        for k in range(m - 2):
            D[k, k:k + 3] = (1.0, -2.0, 1.0)
        D /= h * h
        lam = h * D.T @ D
    else:
        b = family.breakpoints
        g = np.array([-1.0, 1.0]) / np.sqrt(3.0)
        mids, halves = 0.5 * (b[1:] + b[:-1]), 0.5 * (b[1:] - b[:-1])
        x = (mids[:, None] + halves[:, None] * g[None, :]).ravel()
        w = np.repeat(halves, 2)
        dd = basis_matrix(family, x, deriv=2)
        lam = dd.T @ (w[:, None] * dd)
    return RegularizationMatrix(0.5 * (lam + lam.T))


def eval_profile(coeffs, family: BasisFamily, x):
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (family.m,):
        raise DataError(f"expected {family.m} coefficients, got {coeffs.size}")
    values = basis_matrix(family, x) @ coeffs
    return float(values[0]) if np.ndim(x) == 0 else values


def affine_coefficients(family: BasisFamily, value0: float, value1: float) -> np.ndarray:
    """Coefficients of x -> value0 + (value1 - value0) x (exact for both kinds)."""
    return value0 + (value1 - value0) * family.greville


@dataclass(eq=False)
class ProfileCoefficients:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        self.c = np.asarray(self.c, dtype=float)
        if not (self.a.shape == self.b.shape == self.c.shape) or self.a.ndim != 1:
            raise DataError("profile coefficient vectors must share one length")
        if not all(np.all(np.isfinite(v)) for v in (self.a, self.b, self.c)):
            raise DataError("profile coefficients must be finite")

    @property
    def u(self) -> np.ndarray:
        return np.concatenate([self.a, self.b])

    @classmethod
    def from_u(cls, u, c):
        u = np.asarray(u, dtype=float)
        m = u.size // 2
        return cls(u[:m], u[m:], c)


def toroidal_current_density(coeffs, family, lam, R0, r, psibar, inside=True):
    """j_phi = lambda [(r/R0) A + (R0/r) B] inside the plasma, 0 outside."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0.0):
        raise DataError("toroidal current density needs r > 0")
    u = np.asarray(coeffs.u if isinstance(coeffs, ProfileCoefficients) else coeffs, dtype=float)
    m = family.m
    x = np.clip(np.asarray(psibar, dtype=float), 0.0, 1.0)
    phi = basis_matrix(family, np.ravel(x)).reshape(np.shape(x) + (m,))
    A, B = phi @ u[:m], phi @ u[m:]
    j = lam * ((r / R0) * A + (R0 / r) * B)
    return np.where(inside, j, 0.0)


@dataclass(eq=False)
class DerivedProfiles:
    psibar: np.ndarray
    A: np.ndarray
    B: np.ndarray
    ne: np.ndarray
    pprime: np.ndarray
    ffprime: np.ndarray
    p: np.ndarray
    f: np.ndarray
    q: np.ndarray | None = None
    lam: float = 1.0
    R0: float = 1.0
    family: BasisFamily = field(default_factory=BasisFamily)
    u: np.ndarray | None = None

    def jphi(self, r, psibar, inside=True):
        return toroidal_current_density(self.u, self.family, self.lam, self.R0, r, psibar, inside)

    def table(self) -> np.ndarray:
        q = self.q if self.q is not None else np.full_like(self.psibar, np.nan)
        return np.column_stack([self.psibar, self.A, self.B, self.ne, self.pprime,
                                self.ffprime, self.p, self.f, q])


PROFILE_COLUMNS = ("psibar", "A", "B", "ne", "pprime", "ffprime", "p", "f", "q")


def derived_profiles(coeffs: ProfileCoefficients, family: BasisFamily, lam, R0, f_b,
                     psi_axis, psi_b, grid=101, mu0=MU0) -> DerivedProfiles:
    """p', ff', p and f sampled on a uniform normalised-flux grid.

    p(1) = 0 and f(1) = f_b; both are integrated with the composite
    trapezoidal rule in physical flux.
    """
    if psi_b == psi_axis:
        raise NumericalError("psi_b equals psi_axis")
    x = np.linspace(0.0, 1.0, grid) if np.ndim(grid) == 0 else np.asarray(grid, dtype=float)
    phi = basis_matrix(family, x)
    A, B, ne = phi @ coeffs.a, phi @ coeffs.b, phi @ coeffs.c
    pprime = lam * A / R0
    ffprime = lam * mu0 * R0 * B
    dpsi = psi_b - psi_axis

    def tail_integral(g):
        # int_x^1 g dx on the grid
        cum = cumulative_trapezoid(g, x, initial=0.0)
        return cum[-1] - cum

    p = -dpsi * tail_integral(pprime)
    f2 = f_b * f_b - 2.0 * dpsi * tail_integral(ffprime)
    bad = np.flatnonzero(f2 < 0.0)
    if bad.size:
        i = int(bad[0])
        raise NumericalError(f"f^2 < 0 at grid point {i} (psibar={x[i]:.4g}): unphysical B profile")
    f = np.sign(f_b if f_b != 0 else 1.0) * np.sqrt(f2)
    return DerivedProfiles(psibar=x, A=A, B=B, ne=ne, pprime=pprime, ffprime=ffprime, p=p, f=f,
                           lam=float(lam), R0=float(R0), family=family, u=coeffs.u)


def recovered_gradient(mesh, psi) -> np.ndarray:
    """(N, 2) nodal gradients: area-weighted average of the P1 gradients around each node."""
    psi = np.asarray(psi, dtype=float)
    g = np.einsum("tk,tkd->td", psi[mesh.triangles], mesh.hat_gradients) * mesh.areas[:, None]
    G = np.zeros((mesh.n_nodes, 2))
    W = np.zeros(mesh.n_nodes)
    for k in range(3):
        np.add.at(G, mesh.triangles[:, k], g)
        np.add.at(W, mesh.triangles[:, k], mesh.areas)
    return G / W[:, None]


def safety_factor(mesh, psi, domain, f_values, levels, resolution=256) -> np.ndarray:
    """q(level) = (1/2pi) * closed integral of f / (r |grad psi|) dl.

    Contour segments are subdivided to roughly `resolution` pieces and
    integrated with the midpoint rule.  |grad psi| comes from the recovered
    nodal gradient interpolated linearly; the raw P1 gradient is constant per
    triangle and costs a few percent in q on the bundled mesh.
    """
    from .geometry import flux_contour

    psi = np.asarray(psi, dtype=float)
    levels = np.atleast_1d(np.asarray(levels, dtype=float))
    f_values = np.broadcast_to(np.asarray(f_values, dtype=float), levels.shape)
    G = recovered_gradient(mesh, psi)
    q = np.empty(levels.size)
    for n, (lev, f) in enumerate(zip(levels, f_values)):
        c = flux_contour(mesh, psi, float(lev), domain)
        a, b = c.points[:-1], c.points[1:]
        k = max(1, int(np.ceil(resolution / len(a))))
        s = (np.arange(k) + 0.5) / k
        mid = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
        dl = np.linalg.norm(b - a, axis=1)[:, None] / k
        tri = mesh.triangles[c.triangles]
        P = mesh.nodes[tri]
        # barycentric coordinates of every sample in its segment's triangle
        d1, d2 = P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        dx = mid - P[:, None, 0]
        l1 = (dx[..., 0] * d2[:, None, 1] - dx[..., 1] * d2[:, None, 0]) / det[:, None]
        l2 = (d1[:, None, 0] * dx[..., 1] - d1[:, None, 1] * dx[..., 0]) / det[:, None]
        bary = np.stack([1.0 - l1 - l2, l1, l2], axis=-1)
        grad = np.einsum("sjk,skd->sjd", bary, G[tri])
        integrand = 1.0 / (mid[..., 0] * np.hypot(grad[..., 0], grad[..., 1]))
        q[n] = f * float(np.sum(integrand * dl)) / (2.0 * np.pi)
    return q
