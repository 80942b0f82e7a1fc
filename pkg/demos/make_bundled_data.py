"""
Regenerate the data files shipped inside the package
=====================================================

The 412-node mesh, the twin specification, a matching reconstruction config
and the noise-free synthetic measurements are all produced here.  Run from
the repository root:

    python3 demos/make_bundled_data.py
"""

import json
from pathlib import Path

import numpy as np

from gsrecon.mesh import save_mesh, tokamak_mesh
from gsrecon.observations import save_measurements
from gsrecon.profiles import BasisFamily
from gsrecon.twin import TwinSpec, manufacture_equilibrium, synthesize_measurements

out = Path(__file__).resolve().parents[1] / "src" / "gsrecon" / "data"

# Concentric rings around R0 = 2.4 m, minor radius 0.8 m.  Ring 11 of 12 is
# the limiter; the counts match a 412-node / 762-triangle mesh.
mesh = tokamak_mesh()
save_mesh(mesh, out / "ts412.mesh")
print(len(mesh.nodes), "nodes,", len(mesh.triangles), "triangles")

# Profiles are given by their B-spline coefficients.  At the Greville
# abscissae g the coefficients of a smooth function are close to its values:
# A ~ 1 - x^2, B ~ 0.8 (1 - x)^2, and n_e is exactly affine in the
# normalised flux (parabolic in minor radius).
fam = BasisFamily("cubic_bspline", 7)
g = fam.greville
R0 = 2.4
chord_r = (1.8413, 2.0807, 2.3469, 2.6121, 2.8519)
spec = TwinSpec(
    a=np.round(1 - g**2, 12),
    b=np.round(0.8 * (1 - g) ** 2, 12),
    c=np.round(4.0e19 * (1 - 0.9 * g), 3),
    plasma_current=1.0e6,
    R0=R0,
    f_b=9.12,
    basis=fam,
    boundary_vertical=-0.02,
    chords=[[[r, -1.2], [r, 1.2]] for r in chord_r],
    add_noise=False,
    seed=1,
)
(out / "twin_spec.json").write_text(json.dumps(spec.to_dict(), indent=1) + "\n")

config = spec.config(eps1=1e-7, eps2=1e-7)
(out / "config.json").write_text(json.dumps(config.to_dict(), indent=1) + "\n")

truth = manufacture_equilibrium(mesh, spec)
print("truth: %d forward passes, lambda = %.6g" % (len(truth.residuals), truth.lam))
save_measurements(synthesize_measurements(mesh, truth, spec), out / "twin_measurements.json")
