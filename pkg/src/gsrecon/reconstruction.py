"""Equilibrium reconstruction by fixed-point iteration.

Each iteration freezes the flux of the previous iterate, identifies the
profile coefficients u = (a, b) by regularised least squares against the
magnetic and polarimetric data, renormalises the current to the measured
plasma current, and solves the (now linear) direct problem for the new flux.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
import scipy.linalg as sla

from .errors import ConvergenceError, DataError, GSReconError, NoPlasmaError, NumericalError
from .fem import StiffnessSystem, build_system, dirichlet_rhs, load_vector, quad_points, quad_weights, scatter_matrix
from .geometry import PlasmaDomain, plasma_domain
from .mesh import Mesh
from .observations import (
    MeasurementSet,
    chord_quadrature,
    interferometry_matrix,
    interpolate_dirichlet,
    polarimetry_rows,
    probe_rows,
    weight_matrix,
)
from .profiles import (
    BasisFamily,
    DerivedProfiles,
    ProfileCoefficients,
    affine_coefficients,
    basis_matrix,
    derived_profiles,
    regularization_matrix,
    safety_factor,
)

__all__ = [
    "Mode",
    "ReconstructionConfig",
    "EquilibriumState",
    "ConvergenceHistory",
    "ReconstructionContext",
    "load_config",
    "current_source_matrix",
    "normalize_lambda",
    "reference_lambda",
    "plasma_current",
    "estimate_density",
    "normal_equation_terms",
    "solve_normal_equation",
    "solve_reduced",
    "objective",
    "objective_gradient",
    "cold_start",
    "reconstruct_step",
    "reconstruct",
    "predict",
]

log = logging.getLogger(__name__)

PROFILE_GRID = np.linspace(0.0, 1.0, 101)


class Mode(str, Enum):
    FULL = "full"
    REALTIME = "realtime"


@dataclass(frozen=True)
class ReconstructionConfig:
    """Reconstruction parameters (JSON config file keys match the field names).

    ``R0`` (major radius, m) and ``f_b`` (vacuum r*B_phi, T m) have no
    defaults.  ``density_unit`` rescales densities before the regularised
    density fit so that ``eps3`` acts on O(1) coefficients.
    """

    R0: float
    f_b: float
    K1: float = 1.0
    K2: float = 1.0
    eps1: float = 5e-5
    eps2: float = 5e-5
    eps3: float = 5e-5
    tol: float = 1e-6
    max_iter: int = 30
    mode: Mode = Mode.FULL
    realtime_iters: int = 2
    basis: BasisFamily = field(default_factory=BasisFamily)
    density_unit: float = 1e19

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if isinstance(self.basis, dict):
            object.__setattr__(self, "basis", BasisFamily(**self.basis))
        if not self.tol > 0:
            raise DataError("tol must be positive")
        if min(self.eps1, self.eps2, self.eps3) < 0:
            raise DataError("regularisation parameters must be non-negative")
        if min(self.K1, self.K2) < 0:
            raise DataError("misfit weights must be non-negative")
        if int(self.max_iter) < 1:
            raise DataError("max_iter must be >= 1")
        if int(self.realtime_iters) not in (1, 2):
            raise DataError("realtime_iters must be 1 or 2")
        if not self.R0 > 0:
            raise DataError("R0 must be positive")
        if not self.density_unit > 0:
            raise DataError("density_unit must be positive")

    @property
    def iteration_cap(self) -> int:
        if self.mode is Mode.REALTIME:
            return min(int(self.max_iter), int(self.realtime_iters))
        return int(self.max_iter)

    def to_dict(self):
        d = {k: getattr(self, k) for k in
             ("R0", "f_b", "K1", "K2", "eps1", "eps2", "eps3", "tol", "max_iter", "realtime_iters",
              "density_unit")}
        d["mode"] = self.mode.value
        d["basis"] = self.basis.to_dict()
        return d

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        missing = [k for k in ("R0", "f_b") if k not in doc]
        if missing:
            raise DataError(f"config is missing required key(s): {', '.join(missing)}")
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(doc) - known)
        if unknown:
            raise DataError(f"unknown config key(s): {', '.join(unknown)}")
        try:
            return cls(**doc)
        except (TypeError, ValueError) as exc:
            raise DataError(f"invalid config: {exc}") from None


def load_config(path) -> ReconstructionConfig:
    path = os.fspath(path)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read config file {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: line {exc.lineno}: invalid JSON ({exc.msg})") from None
    return ReconstructionConfig.from_dict(doc)


@dataclass(eq=False)
class EquilibriumState:
    psi: np.ndarray
    domain: PlasmaDomain
    coeffs: ProfileCoefficients
    lam: float
    iteration: int = 0
    flipped: bool = False

    def physical_psi(self) -> np.ndarray:
        """Flux in the caller's sign convention (undoes the orientation flip)."""
        return -self.psi if self.flipped else self.psi


@dataclass(eq=False)
class ConvergenceHistory:
    psi_residuals: list = field(default_factory=list)
    a_residuals: list = field(default_factory=list)
    b_residuals: list = field(default_factory=list)
    times: list = field(default_factory=list)
    status: str = "MaxIterReached"

    @property
    def iterations(self) -> int:
        return len(self.psi_residuals)


# -- assembly ---------------------------------------------------------------------

def current_source_matrix(mesh: Mesh, domain: PlasmaDomain, family: BasisFamily, lam, R0,
                          scatter=None) -> np.ndarray:
    """Y (n x 2m): y = Y u is the load vector of the plasma current for coefficients u.

    Boundary rows are zero; the Dirichlet rows of the linear system carry the
    boundary flux instead.
    """
    if not domain.quad_membership.any():
        raise NoPlasmaError("empty plasma domain")
    S = scatter_matrix(mesh) if scatter is None else scatter
    rq = quad_points(mesh)[..., 0].ravel()
    chi = domain.quad_membership.ravel()
    phi = basis_matrix(family, np.clip(domain.psibar_q.ravel(), 0.0, 1.0)) * chi[:, None]
    G = np.hstack([(lam * rq / R0)[:, None] * phi, (lam * R0 / rq)[:, None] * phi])
    Y = np.asarray(S @ G)
    Y[mesh.boundary_nodes] = 0.0
    return Y


def plasma_current(mesh: Mesh, domain: PlasmaDomain, family: BasisFamily, u, lam, R0) -> float:
    """int over the plasma of j_phi with the same quadrature as the source matrix."""
    return lam * _bracket_integral(mesh, domain, family, u, R0)[0]


def _bracket_integral(mesh, domain, family, u, R0):
    u = np.asarray(u, dtype=float)
    m = family.m
    rq = quad_points(mesh)[..., 0]
    w = quad_weights(mesh) * domain.quad_membership
    phi = basis_matrix(family, np.clip(domain.psibar_q.ravel(), 0.0, 1.0))
    A = (phi @ u[:m]).reshape(rq.shape)
    B = (phi @ u[m:]).reshape(rq.shape)
    bracket = (rq / R0) * A + (R0 / rq) * B
    return float(np.sum(w * bracket)), float(np.sum(w * np.abs(bracket)))


def reference_lambda(mesh: Mesh, domain: PlasmaDomain, Ip) -> float:
    """Gauge used to assemble the normal equation: the lambda of a unit bracket, Ip / |Omega_p|.

    It depends on the plasma domain only, never on the incoming coefficients,
    so the optimisation step is invariant under (A, B, lambda) -> (gA, gB, lambda/g).
    """
    area = float(np.sum(quad_weights(mesh) * domain.quad_membership))
    if area <= 0.0:
        raise NoPlasmaError("empty plasma domain")
    return float(Ip) / area


def normalize_lambda(u, family: BasisFamily, domain: PlasmaDomain, mesh: Mesh, Ip, R0) -> float:
    """lambda such that the plasma current integral equals Ip."""
    total, total_abs = _bracket_integral(mesh, domain, family, u, R0)
    if not np.isfinite(total) or total_abs == 0.0 or abs(total) <= 1e-12 * total_abs:
        raise NumericalError("current normalisation integral is zero or sign-degenerate")
    return float(Ip / total)


# -- least squares ------------------------------------------------------------------

def estimate_density(M, beta, sigma_beta, K2, eps3, lam1) -> np.ndarray:
    """Regularised density coefficients from the interferometry data.

    Solves (M^T D M + eps3 Lambda_1) c = M^T D beta with D = diag(K2 / sigma^2).
    """
    M = np.asarray(M, dtype=float)
    beta = np.asarray(beta, dtype=float)
    d = K2 / np.asarray(sigma_beta, dtype=float) ** 2
    lhs = M.T @ (d[:, None] * M) + eps3 * np.asarray(lam1)
    rhs = M.T @ (d * beta)
    return _spd_solve(lhs, rhs, "density normal equation")


def _spd_solve(lhs, rhs, what):
    lhs = 0.5 * (lhs + lhs.T)
    try:
        cf = sla.cho_factor(lhs)
        x = sla.cho_solve(cf, rhs)
    except (sla.LinAlgError, ValueError):
        ev = np.linalg.eigvalsh(lhs)
        raise NumericalError(
            f"{what} is singular or indefinite (smallest eigenvalue {ev[0]:.3e}, largest {ev[-1]:.3e})"
        ) from None
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"{what} produced non-finite values")
    return x


def normal_equation_terms(C, system: StiffnessSystem, Y, h, k, d):
    """Weighted reduced operator and data, (D^1/2 E, D^1/2 F).

    E = C K^-1 Y and F = k - C K^-1 H, with W = K^-T C^T formed by one solve
    per measurement row.
    """
    C = np.atleast_2d(np.asarray(C, dtype=float))
    W = system.solve(np.ascontiguousarray(C.T), trans="T")
    if W.ndim == 1:
        W = W[:, None]
    H = dirichlet_rhs(system, np.zeros(system.n), h)
    E = W.T @ Y
    F = np.asarray(k, dtype=float) - W.T @ H
    sd = np.sqrt(np.asarray(d, dtype=float))
    return sd[:, None] * E, sd * F


def solve_normal_equation(C, system: StiffnessSystem, Y, h, k, d, eps, Lam) -> np.ndarray:
    """Minimiser u of 1/2 |E u - F|_D^2 + 1/2 u^T (eps Lambda) u.

    `eps` is a scalar or an (eps1, eps2) pair acting on the A and B blocks.
    """
    Et, Ft = normal_equation_terms(C, system, Y, h, k, d)
    return solve_reduced(Et, Ft, eps, Lam)


def _penalty(eps, Lam):
    """eps * Lambda, with eps a scalar or an (eps1, eps2) pair on the two blocks."""
    Lam = np.asarray(Lam, dtype=float)
    if np.ndim(eps) == 0:
        return float(eps) * Lam
    e1, e2 = eps
    n = Lam.shape[0]
    scale = np.concatenate([np.full(n // 2, float(e1)), np.full(n - n // 2, float(e2))])
    return scale[:, None] * Lam


def objective(Et, Ft, eps, Lam, u) -> float:
    """J(u) = 1/2 |Et u - Ft|^2 + 1/2 u^T (eps Lambda) u."""
    u = np.asarray(u, dtype=float)
    r = Et @ u - Ft
    return 0.5 * float(r @ r) + 0.5 * float(u @ (_penalty(eps, Lam) @ u))


def objective_gradient(Et, Ft, eps, Lam, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    return Et.T @ (Et @ u - Ft) + _penalty(eps, Lam) @ u


def solve_reduced(Et, Ft, eps, Lam):
    """Stationary point of `objective`: (Et^T Et + eps Lambda) u = Et^T Ft.

    Solved by Householder QR of the stacked system [Et; (eps Lambda)^1/2],
    which has the same minimiser as the normal equation without squaring
    the condition number of Et.
    """
    Et = np.asarray(Et, dtype=float)
    Ft = np.asarray(Ft, dtype=float)
    if not (np.all(np.isfinite(Et)) and np.all(np.isfinite(Ft))):
        raise NumericalError("non-finite entries in the reduced least-squares system")
    R = _penalty(eps, Lam)
    R = 0.5 * (R + R.T)
    w, V = np.linalg.eigh(R)
    root = np.sqrt(np.clip(w, 0.0, None))[:, None] * V.T
    A = np.vstack([Et, root])
    b = np.concatenate([Ft, np.zeros(root.shape[0])])
    Q, Rq = sla.qr(A, mode="economic")
    diag = np.abs(np.diag(Rq))
    if diag.size == 0 or not diag.max() > 0 or diag.min() <= 1e-14 * diag.max():
        ev = np.linalg.eigvalsh(Et.T @ Et + R)
        raise NumericalError(
            f"profile normal equation is singular (smallest eigenvalue {ev[0]:.3e}, largest {ev[-1]:.3e})"
        )
    u = sla.solve_triangular(Rq, Q.T @ b)
    if not np.all(np.isfinite(u)):
        raise NumericalError("profile normal equation produced non-finite values")
    return u


# -- fixed-point iteration ----------------------------------------------------------

@dataclass(eq=False)
class ReconstructionContext:
    """Everything that stays fixed during the reconstruction of one frame."""

    mesh: Mesh
    config: ReconstructionConfig
    system: StiffnessSystem
    scatter: object
    lam1: np.ndarray
    Lam_eps: np.ndarray
    h: np.ndarray
    Ip: float
    sign: float
    C_probe: np.ndarray
    g: np.ndarray
    sigma_g: np.ndarray
    polar_quads: list
    alpha: np.ndarray
    sigma_alpha: np.ndarray
    interf_quads: list
    beta: np.ndarray
    sigma_beta: np.ndarray

    @classmethod
    def build(cls, mesh: Mesh, measurements: MeasurementSet, config: ReconstructionConfig,
              system: StiffnessSystem | None = None):
        measurements.validate(mesh)
        if system is None:
            system = build_system(mesh)
        sign = 1.0 if measurements.plasma_current > 0 else -1.0
        reg = regularization_matrix(config.basis)
        polar = measurements.polarimetry_chords
        interf = measurements.interferometry_chords
        return cls(
            mesh=mesh,
            config=config,
            system=system,
            scatter=scatter_matrix(mesh),
            lam1=reg.lam1,
            Lam_eps=reg.weighted(config.eps1, config.eps2),
            h=sign * interpolate_dirichlet(measurements.flux_loops, mesh),
            Ip=sign * measurements.plasma_current,
            sign=sign,
            C_probe=probe_rows(mesh, measurements.probes),
            g=sign * np.array([p.value for p in measurements.probes], dtype=float),
            sigma_g=np.array([p.sigma for p in measurements.probes], dtype=float),
            polar_quads=[chord_quadrature(mesh, c) for c in polar],
            alpha=sign * np.array([c.alpha for c in polar], dtype=float),
            sigma_alpha=np.array([c.sigma_alpha for c in polar], dtype=float),
            interf_quads=[chord_quadrature(mesh, c) for c in interf],
            beta=np.array([c.beta for c in interf], dtype=float),
            sigma_beta=np.array([c.sigma_beta for c in interf], dtype=float),
        )


def _density(ctx: ReconstructionContext, psi, domain, prior_c):
    if not ctx.interf_quads:
        return prior_c
    cfg = ctx.config
    M = interferometry_matrix(ctx.mesh, ctx.interf_quads, psi, domain, cfg.basis)
    unit = cfg.density_unit
    c = estimate_density(M, ctx.beta / unit, ctx.sigma_beta / unit, cfg.K2, cfg.eps3, ctx.lam1)
    return c * unit


def _observation(ctx: ReconstructionContext, psi, domain, c):
    if ctx.polar_quads:
        C_pol = polarimetry_rows(ctx.mesh, ctx.polar_quads, c, ctx.config.basis, psi, domain)
        C = np.vstack([ctx.C_probe, C_pol])
        k = np.concatenate([ctx.g, ctx.alpha])
    else:
        C, k = ctx.C_probe, ctx.g
    d = weight_matrix(ctx.sigma_g, ctx.sigma_alpha, ctx.config.K1)
    return C, k, d


def cold_start(ctx: ReconstructionContext) -> EquilibriumState:
    """Start from the flux of a uniform current disk and affine (1 - x) profiles.

    The disk has a third of the mean centroid-to-wall distance as radius and
    carries the measured plasma current.
    """
    mesh, cfg = ctx.mesh, ctx.config
    w = mesh.areas
    centroid = (mesh.nodes[mesh.triangles].mean(axis=1) * w[:, None]).sum(axis=0) / w.sum()
    wall = mesh.nodes[mesh.boundary_nodes]
    radius = np.linalg.norm(wall - centroid, axis=1).mean() / 3.0
    density = ctx.Ip / (np.pi * radius**2)

    def source(r, z):
        return np.where((r - centroid[0]) ** 2 + (z - centroid[1]) ** 2 <= radius**2, density, 0.0)

    y = load_vector(mesh, source)
    psi = ctx.system.solve(dirichlet_rhs(ctx.system, y, ctx.h))
    domain = plasma_domain(mesh, psi)
    fam = cfg.basis
    affine = affine_coefficients(fam, 1.0, 0.0)
    coeffs = ProfileCoefficients(affine, affine.copy(), np.zeros(fam.m))
    lam = normalize_lambda(coeffs.u, fam, domain, mesh, ctx.Ip, cfg.R0)
    return EquilibriumState(psi, domain, coeffs, lam, 0, flipped=ctx.sign < 0)


def reconstruct_step(state: EquilibriumState, measurements: MeasurementSet | None,
                     config: ReconstructionConfig, system: StiffnessSystem | None = None, *,
                     mesh: Mesh | None = None, ctx: ReconstructionContext | None = None) -> EquilibriumState:
    """One optimisation + direct-problem iteration.

    Either a prebuilt `ctx` or the `mesh` (to build one) must be given.
    """
    if ctx is None:
        if mesh is None:
            raise DataError("reconstruct_step needs the mesh or a ReconstructionContext")
        ctx = ReconstructionContext.build(mesh, measurements, config, system)
    mesh, fam = ctx.mesh, config.basis
    try:
        c = _density(ctx, state.psi, state.domain, state.coeffs.c)
        C, k, d = _observation(ctx, state.psi, state.domain, c)
        lam_ref = reference_lambda(mesh, state.domain, ctx.Ip)
        Y = current_source_matrix(mesh, state.domain, fam, lam_ref, config.R0, ctx.scatter)
        u = solve_normal_equation(C, ctx.system, Y, ctx.h, k, d, 1.0, ctx.Lam_eps)
        lam = normalize_lambda(u, fam, state.domain, mesh, ctx.Ip, config.R0)
        y = (lam / lam_ref) * (Y @ u)
        psi = ctx.system.solve(dirichlet_rhs(ctx.system, y, ctx.h))
        if not np.all(np.isfinite(psi)):
            raise ConvergenceError("direct solve produced non-finite flux")
        domain = plasma_domain(mesh, psi)
        # the state's lambda satisfies the current constraint on its own domain
        lam = normalize_lambda(u, fam, domain, mesh, ctx.Ip, config.R0)
    except GSReconError as exc:
        raise type(exc)(f"iteration {state.iteration + 1}: {exc}") from exc
    coeffs = ProfileCoefficients.from_u(u, c)
    return EquilibriumState(psi, domain, coeffs, lam, state.iteration + 1, state.flipped)


def _rel(new, old):
    den = np.linalg.norm(old)
    return float(np.linalg.norm(new - old) / den) if den > 0 else float("inf")


def reconstruct(mesh: Mesh, measurements: MeasurementSet, config: ReconstructionConfig,
                initial: EquilibriumState | None = None, system: StiffnessSystem | None = None,
                derive: bool = True, ctx: ReconstructionContext | None = None):
    """Iterate to convergence (or to the real-time cap).

    Returns ``(state, history, derived)``; `derived` is None when
    ``derive=False``.  Pass the converged state of the previous frame as
    `initial` for a warm start.
    """
    if ctx is None:
        ctx = ReconstructionContext.build(mesh, measurements, config, system)
    state = cold_start(ctx) if initial is None else _rebase(initial, ctx)
    history = ConvergenceHistory()
    fam = config.basis
    phi = basis_matrix(fam, PROFILE_GRID)
    for _ in range(config.iteration_cap):
        t0 = time.perf_counter()
        new = reconstruct_step(state, measurements, config, ctx=ctx)
        history.times.append(time.perf_counter() - t0)
        # residuals compare physical (gauge-free) profiles lambda*A, lambda*B
        a_old, a_new = state.lam * (phi @ state.coeffs.a), new.lam * (phi @ new.coeffs.a)
        b_old, b_new = state.lam * (phi @ state.coeffs.b), new.lam * (phi @ new.coeffs.b)
        res = _rel(new.psi, state.psi)
        if not np.isfinite(res):
            raise ConvergenceError(f"iteration {new.iteration}: non-finite flux residual")
        history.psi_residuals.append(res)
        history.a_residuals.append(_rel(a_new, a_old))
        history.b_residuals.append(_rel(b_new, b_old))
        state = new
        if res <= config.tol:
            history.status = "Converged"
            break
    derived = derive_outputs(ctx, state) if derive else None
    return state, history, derived


def _rebase(initial: EquilibriumState, ctx: ReconstructionContext) -> EquilibriumState:
    """Warm start: keep flux and profiles, restart the counter, refresh lambda."""
    state = replace(initial, iteration=0)
    if state.coeffs.a.size != ctx.config.basis.m:
        raise DataError("initial state basis dimension does not match the config")
    lam = normalize_lambda(state.coeffs.u, ctx.config.basis, state.domain, ctx.mesh, ctx.Ip, ctx.config.R0)
    return replace(state, lam=lam)


def derive_outputs(ctx: ReconstructionContext, state: EquilibriumState, with_q: bool = True) -> DerivedProfiles:
    cfg = ctx.config
    dom = state.domain
    derived = derived_profiles(state.coeffs, cfg.basis, state.lam, cfg.R0, cfg.f_b,
                               dom.psi_axis, dom.psi_b, grid=PROFILE_GRID)
    if with_q:
        q = np.full(PROFILE_GRID.size, np.nan)
        for i, (lev, f) in enumerate(zip(PROFILE_GRID, derived.f)):
            if lev <= 0.0:
                continue
            try:
                q[i] = safety_factor(ctx.mesh, state.psi, dom, f, [lev])[0]
            except GSReconError:
                log.info("no closed contour at psibar=%.3f; q left undefined", lev)
        derived.q = q
    if state.flipped:
        # p and f do not depend on the flux sign; their flux derivatives do
        derived.pprime = -derived.pprime
        derived.ffprime = -derived.ffprime
    return derived


def predict(ctx: ReconstructionContext, state: EquilibriumState) -> dict:
    """Model readings of every sensor family for a state (caller's sign convention)."""
    mesh, fam = ctx.mesh, ctx.config.basis
    out = {"probes": ctx.sign * (ctx.C_probe @ state.psi)}
    c = state.coeffs.c
    if ctx.polar_quads:
        C_pol = polarimetry_rows(mesh, ctx.polar_quads, c, fam, state.psi, state.domain)
        out["polarimetry"] = ctx.sign * (C_pol @ state.psi)
    else:
        out["polarimetry"] = np.zeros(0)
    if ctx.interf_quads:
        out["interferometry"] = interferometry_matrix(mesh, ctx.interf_quads, state.psi, state.domain, fam) @ c
    else:
        out["interferometry"] = np.zeros(0)
    return out
