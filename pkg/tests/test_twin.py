import dataclasses
import json

import numpy as np
import pytest

from gsrecon.errors import DataError, GSReconError
from gsrecon.observations import save_measurements
from gsrecon.twin import (
    TwinSpec,
    load_twin_spec,
    manufacture_equilibrium,
    perturbed_specs,
    profile_errors,
    run_twin,
    synthesize_measurements,
)

from test_reconstruction import independent_current


def test_zero_profiles_have_no_current(ts_mesh, ts_system, twin_spec):
    spec = dataclasses.replace(twin_spec, a=np.zeros(7), b=np.zeros(7))
    with pytest.raises(GSReconError):
        manufacture_equilibrium(ts_mesh, spec, system=ts_system)


def test_truth_carries_plasma_current(ts_mesh, truth, twin_spec):
    Ip = independent_current(ts_mesh, truth.domain, twin_spec.basis, truth.coeffs.u, truth.lam, twin_spec.R0)
    assert Ip == pytest.approx(twin_spec.plasma_current, rel=1e-12)
    assert truth.residuals[-1] <= 1e-10


def test_two_cold_starts_agree(ts_mesh, ts_system, twin_spec, truth):
    other = manufacture_equilibrium(ts_mesh, twin_spec, system=ts_system, start_radius=0.12)
    assert np.linalg.norm(other.psi - truth.psi) <= 1e-8 * np.linalg.norm(truth.psi)


def test_seeded_measurement_files_are_identical(ts_mesh, truth, twin_spec, tmp_path):
    spec = dataclasses.replace(twin_spec, add_noise=True, seed=7)
    paths = []
    for name in ("a.json", "b.json"):
        paths.append(tmp_path / name)
        save_measurements(synthesize_measurements(ts_mesh, truth, spec), paths[-1])
    assert paths[0].read_bytes() == paths[1].read_bytes()
    clean = tmp_path / "clean.json"
    save_measurements(synthesize_measurements(ts_mesh, truth, twin_spec), clean)
    assert clean.read_bytes() != paths[0].read_bytes()


def test_noise_restricted_to_listed_families(ts_mesh, truth, twin_spec, clean_measurements):
    spec = dataclasses.replace(twin_spec, add_noise=True, noisy_families=("probes",), seed=4)
    meas = synthesize_measurements(ts_mesh, truth, spec)
    assert [l.psi for l in meas.flux_loops] == [l.psi for l in clean_measurements.flux_loops]
    assert [c.beta for c in meas.chords] == [c.beta for c in clean_measurements.chords]
    assert [p.value for p in meas.probes] != [p.value for p in clean_measurements.probes]


def test_noise_of_one_family_independent_of_others(ts_mesh, truth, twin_spec):
    only = dataclasses.replace(twin_spec, add_noise=True, noisy_families=("probes",), seed=4)
    every = dataclasses.replace(twin_spec, add_noise=True, seed=4)
    a = synthesize_measurements(ts_mesh, truth, only)
    b = synthesize_measurements(ts_mesh, truth, every)
    assert [p.value for p in a.probes] == [p.value for p in b.probes]


def test_probe_chi_square_over_seeds(ts_mesh, ts_system, twin_spec):
    n = twin_spec.n_probes
    chi = []
    for seed in range(20):
        spec = dataclasses.replace(twin_spec, add_noise=True, noisy_families=("probes",), seed=seed)
        res = run_twin(ts_mesh, spec, spec.config(), system=ts_system, derive=False)
        chi.append(res.report.misfits["probes_chi2"])
    chi = np.array(chi)
    assert np.all((chi >= 0.3 * n) & (chi <= 3 * n)), chi


def test_clean_twin_misfits_small(twin_run):
    m = twin_run.report.misfits
    assert max(m["interferometry"]) <= 0.01
    assert max(m["polarimetry"]) <= 0.1
    assert m["probes"] <= 1e-2


def test_profile_errors_of_truth_are_zero(truth, twin_spec):
    errs = profile_errors(twin_spec.basis, truth.coeffs, truth.lam, truth)
    assert errs == {"A": 0.0, "B": 0.0, "ne": 0.0}


def test_profile_errors_gauge_free(truth, twin_spec):
    from gsrecon.profiles import ProfileCoefficients

    c = truth.coeffs
    scaled = ProfileCoefficients(3.0 * c.a, 3.0 * c.b, c.c)
    errs = profile_errors(twin_spec.basis, scaled, truth.lam / 3.0, truth)
    assert max(errs.values()) <= 1e-14


def test_report_text_deterministic(ts_mesh, ts_system, twin_spec, twin_config, twin_run):
    again = run_twin(ts_mesh, twin_spec, twin_config, system=ts_system)
    assert again.report.to_text() == twin_run.report.to_text()
    assert all(t > 0 for t in twin_run.history.times)
    lines = twin_run.report.timing_text().splitlines()[1:]
    assert len(lines) == twin_run.history.iterations
    assert all(float(l.split()[1]) > 0 for l in lines)


def test_perturbed_frames(twin_spec):
    frames = perturbed_specs(twin_spec, 4, rel=0.01, seed=2)
    assert len(frames) == 4
    assert np.array_equal(frames[0].a, twin_spec.a)
    for prev, cur in zip(frames, frames[1:]):
        nz = prev.c != 0
        rel = np.abs(cur.c[nz] / prev.c[nz] - 1)
        assert 0 < rel.max() < 0.06


def test_spec_round_trip(tmp_path, twin_spec):
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(twin_spec.to_dict()))
    back = load_twin_spec(path)
    assert back.to_dict() == twin_spec.to_dict()


@pytest.mark.parametrize("patch", [{"a": [1.0, 2.0]}, {"sigma_rel": {"probes": 0.0}},
                                   {"noisy_families": ["lasers"]}, {"unknown": 1}])
def test_invalid_spec(twin_spec, patch):
    doc = {**twin_spec.to_dict(), **patch}
    with pytest.raises(DataError):
        TwinSpec.from_dict(doc)


def test_spec_file_errors(tmp_path):
    with pytest.raises(DataError, match="missing.json"):
        load_twin_spec(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{\n  oops\n}")
    with pytest.raises(DataError, match="line 2"):
        load_twin_spec(bad)
