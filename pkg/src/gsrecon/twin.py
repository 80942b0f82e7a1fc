"""Twin experiments: manufacture a synthetic equilibrium, measure it, invert it.

The truth is obtained by iterating the direct problem with fixed profiles, so
reconstructing noise-free synthetic data is an "inverse crime" (same
discretisation on both sides).  ``chord_order=1`` in
:func:`synthesize_measurements` samples the chords with a coarser rule than
the reconstruction uses, for tests that want a model mismatch.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np

from .errors import ConvergenceError, DataError
from .fem import StiffnessSystem, build_system, dirichlet_rhs, load_vector
from .geometry import PlasmaDomain, plasma_domain
from .mesh import Mesh
from .observations import (
    Chord,
    FluxLoop,
    MeasurementSet,
    Probe,
    boundary_point,
    chord_quadrature,
    interferometry_matrix,
    interpolate_dirichlet,
    polarimetry_rows,
    probe_rows,
)
from .profiles import BasisFamily, ProfileCoefficients, basis_matrix
from .reconstruction import (
    ConvergenceHistory,
    ReconstructionConfig,
    ReconstructionContext,
    current_source_matrix,
    normalize_lambda,
    predict,
    reconstruct,
)

__all__ = [
    "TwinSpec",
    "Truth",
    "RunReport",
    "load_twin_spec",
    "bundled_twin_spec",
    "manufacture_equilibrium",
    "synthesize_measurements",
    "profile_errors",
    "misfits",
    "run_twin",
    "perturbed_specs",
]

FAMILIES = ("flux_loops", "probes", "polarimetry", "interferometry")


@dataclass(frozen=True, eq=False)
class TwinSpec:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    plasma_current: float
    R0: float
    f_b: float
    basis: BasisFamily = field(default_factory=BasisFamily)
    boundary_offset: float = 0.0
    boundary_vertical: float = 0.0
    n_flux_loops: int = 32
    n_probes: int = 32
    chords: tuple = ()
    sigma_rel: dict = field(default_factory=lambda: dict.fromkeys(FAMILIES, 0.01))
    add_noise: bool = True
    noisy_families: tuple = FAMILIES
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.basis, dict):
            object.__setattr__(self, "basis", BasisFamily(**self.basis))
        for name in ("a", "b", "c"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (self.basis.m,):
                raise DataError(f"twin spec: '{name}' needs {self.basis.m} coefficients")
            object.__setattr__(self, name, v)
        object.__setattr__(self, "chords", tuple(np.asarray(c, dtype=float) for c in self.chords))
        sig = dict.fromkeys(FAMILIES, 0.01)
        sig.update(self.sigma_rel)
        if any(v <= 0 for v in sig.values()):
            raise DataError("twin spec: relative sigmas must be positive")
        object.__setattr__(self, "sigma_rel", sig)
        noisy = tuple(self.noisy_families)
        if not set(noisy) <= set(FAMILIES):
            raise DataError(f"twin spec: unknown sensor family in {noisy}")
        object.__setattr__(self, "noisy_families", noisy)

    @property
    def coeffs(self) -> ProfileCoefficients:
        return ProfileCoefficients(self.a, self.b, self.c)

    def boundary_flux(self, r, z):
        return self.boundary_offset + self.boundary_vertical * (np.asarray(r) ** 2 - self.R0**2)

    def config(self, **overrides) -> ReconstructionConfig:
        return ReconstructionConfig(R0=self.R0, f_b=self.f_b, basis=self.basis, **overrides)

    def to_dict(self):
        return {
            "a": self.a.tolist(), "b": self.b.tolist(), "c": self.c.tolist(),
            "plasma_current": self.plasma_current, "R0": self.R0, "f_b": self.f_b,
            "basis": self.basis.to_dict(),
            "boundary_offset": self.boundary_offset, "boundary_vertical": self.boundary_vertical,
            "n_flux_loops": self.n_flux_loops, "n_probes": self.n_probes,
            "chords": [c.tolist() for c in self.chords],
            "sigma_rel": dict(self.sigma_rel), "add_noise": self.add_noise,
            "noisy_families": list(self.noisy_families), "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc):
        try:
            return cls(**doc)
        except TypeError as exc:
            raise DataError(f"invalid twin spec: {exc}") from None


def load_twin_spec(path) -> TwinSpec:
    path = os.fspath(path)
    try:
        with open(path, encoding="utf-8") as fh:
            return TwinSpec.from_dict(json.load(fh))
    except OSError as exc:
        raise DataError(f"cannot read twin spec {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: line {exc.lineno}: invalid JSON ({exc.msg})") from None


def bundled_twin_spec() -> TwinSpec:
    text = resources.files("gsrecon").joinpath("data", "twin_spec.json").read_text(encoding="utf-8")
    return TwinSpec.from_dict(json.loads(text))


# -- truth ---------------------------------------------------------------------

@dataclass(eq=False)
class Truth:
    psi: np.ndarray
    domain: PlasmaDomain
    lam: float
    coeffs: ProfileCoefficients
    h: np.ndarray
    residuals: list


def _loops(mesh: Mesh, spec: TwinSpec):
    _, perim = mesh.boundary_arclength
    s = (np.arange(spec.n_flux_loops) + 0.5) * perim / spec.n_flux_loops
    pts = np.array([boundary_point(mesh, si)[0] for si in s])
    return s, spec.boundary_flux(pts[:, 0], pts[:, 1])


def manufacture_equilibrium(mesh: Mesh, spec: TwinSpec, h=None, system: StiffnessSystem | None = None,
                            tol: float = 1e-10, max_iter: int = 500, start_radius: float | None = None) -> Truth:
    """Forward fixed-point iteration with the spec's profiles held fixed.

    `h` defaults to the spline interpolant of the spec's flux loops, i.e.
    exactly the boundary data a reconstruction from those loops will use.
    """
    if system is None:
        system = build_system(mesh)
    if h is None:
        s, v = _loops(mesh, spec)
        h = interpolate_dirichlet([FluxLoop(si, vi) for si, vi in zip(s, v)], mesh)
    fam = spec.basis
    u = spec.coeffs.u
    Ip = spec.plasma_current

    w = mesh.areas
    centroid = (mesh.nodes[mesh.triangles].mean(axis=1) * w[:, None]).sum(axis=0) / w.sum()
    if start_radius is None:
        start_radius = np.linalg.norm(mesh.nodes[mesh.boundary_nodes] - centroid, axis=1).mean() / 3.0
    dens = Ip / (np.pi * start_radius**2)
    y = load_vector(mesh, lambda r, z: np.where((r - centroid[0]) ** 2 + (z - centroid[1]) ** 2
                                                <= start_radius**2, dens, 0.0))
    psi = system.solve(dirichlet_rhs(system, y, h))
    residuals = []
    for _ in range(max_iter):
        domain = plasma_domain(mesh, psi)
        lam = normalize_lambda(u, fam, domain, mesh, Ip, spec.R0)
        Y = current_source_matrix(mesh, domain, fam, lam, spec.R0)
        new = system.solve(dirichlet_rhs(system, Y @ u, h))
        res = float(np.linalg.norm(new - psi) / np.linalg.norm(psi))
        residuals.append(res)
        psi = new
        if not np.isfinite(res):
            break
        if res <= tol:
            domain = plasma_domain(mesh, psi)
            lam = normalize_lambda(u, fam, domain, mesh, Ip, spec.R0)
            return Truth(psi, domain, lam, spec.coeffs, np.asarray(h), residuals)
    trace = ", ".join(f"{r:.2e}" for r in residuals[-5:])
    raise ConvergenceError(f"forward iteration did not converge in {len(residuals)} steps (last residuals: {trace})")


def synthesize_measurements(mesh: Mesh, truth: Truth, spec: TwinSpec, chord_order: int = 2) -> MeasurementSet:
    """Evaluate every sensor on the truth, then add seeded Gaussian noise.

    Standard deviations are ``sigma_rel[family]`` times the RMS reading of
    that family; noise is only added when ``spec.add_noise`` is set, and then
    only to the families listed in ``spec.noisy_families``.
    """
    rng = np.random.default_rng(spec.seed)
    _, perim = mesh.boundary_arclength
    s_loops, v_loops = _loops(mesh, spec)

    s_probes = (np.arange(spec.n_probes) + 0.5) * perim / spec.n_probes
    geo = [boundary_point(mesh, s) for s in s_probes]
    probes = [Probe(tuple(p), tuple(n), 0.0) for p, n in geo]
    g = probe_rows(mesh, probes) @ truth.psi

    chords = [Chord(c) for c in spec.chords]
    quads = [chord_quadrature(mesh, c, order=chord_order) for c in chords]
    fam = spec.basis
    alpha = polarimetry_rows(mesh, quads, spec.c, fam, truth.psi, truth.domain) @ truth.psi if quads else np.zeros(0)
    beta = interferometry_matrix(mesh, quads, truth.psi, truth.domain, fam) @ spec.c if quads else np.zeros(0)

    def sigma(values, family):
        rms = float(np.sqrt(np.mean(np.square(values)))) if len(values) else 0.0
        if rms == 0.0:
            rms = float(np.ptp(truth.psi)) or 1.0
        return spec.sigma_rel[family] * rms

    sig = {
        "flux_loops": sigma(v_loops, "flux_loops"),
        "probes": sigma(g, "probes"),
        "polarimetry": sigma(alpha, "polarimetry"),
        "interferometry": sigma(beta, "interferometry"),
    }
    # every family draws from the stream in a fixed order, noisy or not, so a
    # family's noise does not depend on which other families are noisy
    def noisy(values, family):
        values = np.asarray(values, dtype=float)
        draw = rng.standard_normal(values.shape)
        if spec.add_noise and family in spec.noisy_families:
            return values + sig[family] * draw
        return values

    v_loops, g, alpha, beta = (noisy(v_loops, "flux_loops"), noisy(g, "probes"),
                               noisy(alpha, "polarimetry"), noisy(beta, "interferometry"))
    for pr, val in zip(probes, g):
        pr.value = float(val)
        pr.sigma = sig["probes"]
    for ch, a, b in zip(chords, alpha, beta):
        ch.alpha, ch.beta = float(a), float(b)
        ch.sigma_alpha, ch.sigma_beta = sig["polarimetry"], sig["interferometry"]
    loops = [FluxLoop(float(s), float(v), sig["flux_loops"]) for s, v in zip(s_loops, v_loops)]
    return MeasurementSet(loops, probes, chords, float(spec.plasma_current)).validate(mesh)


# -- comparison -----------------------------------------------------------------

def profile_errors(family: BasisFamily, coeffs: ProfileCoefficients, lam: float, truth: Truth,
                   n: int = 1001) -> dict:
    """Relative L2 errors on [0, 1] of A, B (in the truth's gauge) and n_e."""
    x = np.linspace(0.0, 1.0, n)
    phi = basis_matrix(family, x)
    scale = lam / truth.lam

    def rel(est, ref):
        num = np.trapezoid((est - ref) ** 2, x)
        den = np.trapezoid(ref**2, x)
        return float(np.sqrt(num / den)) if den > 0 else float(np.sqrt(num))

    return {
        "A": rel(scale * (phi @ coeffs.a), phi @ truth.coeffs.a),
        "B": rel(scale * (phi @ coeffs.b), phi @ truth.coeffs.b),
        "ne": rel(phi @ coeffs.c, phi @ truth.coeffs.c),
    }


def _relative(model, measured):
    # a chord that misses the plasma reads zero; report its absolute misfit instead
    scale = np.abs(measured)
    return np.abs(model - measured) / np.where(scale > 0, scale, 1.0)


def misfits(ctx: ReconstructionContext, state, measurements: MeasurementSet) -> dict:
    """Per-sensor relative misfits |model - measured| / |measured|.

    Probes get one aggregate relative norm plus their chi-square.
    """
    pred = predict(ctx, state)
    out = {}
    meas_g = np.array([p.value for p in measurements.probes])
    out["probes"] = float(np.linalg.norm(pred["probes"] - meas_g) / np.linalg.norm(meas_g)) if len(meas_g) else 0.0
    out["probes_chi2"] = float(np.sum(((pred["probes"] - meas_g) / np.array([p.sigma for p in measurements.probes])) ** 2))
    alpha = np.array([c.alpha for c in measurements.polarimetry_chords])
    beta = np.array([c.beta for c in measurements.interferometry_chords])
    out["polarimetry"] = _relative(pred["polarimetry"], alpha).tolist()
    out["interferometry"] = _relative(pred["interferometry"], beta).tolist()
    return out


@dataclass(eq=False)
class RunReport:
    history: ConvergenceHistory
    misfits: dict
    profile_errors: dict | None = None
    flipped: bool = False
    lam: float | None = None

    def to_text(self) -> str:
        """Deterministic text form (wall times are written separately)."""
        h = self.history
        lines = [f"status {h.status}", f"iterations {h.iterations}", f"flipped {int(self.flipped)}"]
        if self.lam is not None:
            lines.append(f"lambda {self.lam:.17g}")
        lines += ["# iteration psi_residual A_residual B_residual"]
        for i, (p, a, b) in enumerate(zip(h.psi_residuals, h.a_residuals, h.b_residuals), start=1):
            lines.append(f"{i} {p:.17g} {a:.17g} {b:.17g}")
        lines.append(f"misfit probes_rel {self.misfits['probes']:.17g}")
        lines.append(f"misfit probes_chi2 {self.misfits['probes_chi2']:.17g}")
        for fam in ("polarimetry", "interferometry"):
            for i, v in enumerate(self.misfits[fam]):
                lines.append(f"misfit {fam} {i} {v:.17g}")
        if self.profile_errors is not None:
            for k in sorted(self.profile_errors):
                lines.append(f"profile_error {k} {self.profile_errors[k]:.17g}")
        return "\n".join(lines) + "\n"

    def timing_text(self) -> str:
        lines = ["# iteration wall_time_s"]
        lines += [f"{i} {t:.6e}" for i, t in enumerate(self.history.times, start=1)]
        return "\n".join(lines) + "\n"


@dataclass(eq=False)
class TwinResult:
    truth: Truth
    measurements: MeasurementSet
    state: object
    history: ConvergenceHistory
    derived: object
    report: RunReport
    context: ReconstructionContext


def run_twin(mesh: Mesh, spec: TwinSpec, config: ReconstructionConfig | None = None,
             system: StiffnessSystem | None = None, derive: bool = True, chord_order: int = 2) -> TwinResult:
    """Manufacture, synthesise, reconstruct and compare."""
    if system is None:
        system = build_system(mesh)
    if config is None:
        config = spec.config()
    truth = manufacture_equilibrium(mesh, spec, system=system)
    meas = synthesize_measurements(mesh, truth, spec, chord_order=chord_order)
    ctx = ReconstructionContext.build(mesh, meas, config, system)
    state, history, derived = reconstruct(mesh, meas, config, ctx=ctx, derive=derive)
    report = RunReport(history, misfits(ctx, state, meas),
                       profile_errors(config.basis, state.coeffs, state.lam, truth), state.flipped, state.lam)
    return TwinResult(truth, meas, state, history, derived, report, ctx)


def perturbed_specs(spec: TwinSpec, n_frames: int, rel: float = 0.01, seed: int = 0) -> list:
    """Quasi-static frame sequence: each frame's profiles are the previous
    frame's multiplied by (1 + rel * N(0, 1)) coefficient-wise."""
    rng = np.random.default_rng(seed)
    frames = []
    a, b, c = spec.a.copy(), spec.b.copy(), spec.c.copy()
    for k in range(n_frames):
        if k:
            a = a * (1 + rel * rng.standard_normal(a.shape))
            b = b * (1 + rel * rng.standard_normal(b.shape))
            c = c * (1 + rel * rng.standard_normal(c.shape))
        frames.append(replace(spec, a=a, b=b, c=c, seed=spec.seed + k))
    return frames
