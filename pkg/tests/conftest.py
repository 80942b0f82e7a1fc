import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from gsrecon.fem import build_system  # noqa: E402
from gsrecon.mesh import Mesh, bundled_mesh, rectangle_mesh  # noqa: E402
from gsrecon.twin import bundled_twin_spec, manufacture_equilibrium, run_twin, synthesize_measurements  # noqa: E402


@pytest.fixture(scope="session")
def ts_mesh():
    return bundled_mesh()


@pytest.fixture(scope="session")
def ts_system(ts_mesh):
    return build_system(ts_mesh)


@pytest.fixture(scope="session")
def twin_spec():
    return bundled_twin_spec()


@pytest.fixture(scope="session")
def truth(ts_mesh, ts_system, twin_spec):
    return manufacture_equilibrium(ts_mesh, twin_spec, system=ts_system)


@pytest.fixture(scope="session")
def clean_measurements(ts_mesh, truth, twin_spec):
    return synthesize_measurements(ts_mesh, truth, twin_spec)


@pytest.fixture(scope="session")
def twin_config(twin_spec):
    return twin_spec.config(eps1=1e-7, eps2=1e-7)


@pytest.fixture(scope="session")
def twin_run(ts_mesh, ts_system, twin_spec, twin_config):
    return run_twin(ts_mesh, twin_spec, twin_config, system=ts_system)


@pytest.fixture
def single_triangle():
    return Mesh(np.array([[1.0, 0.0], [2.0, 0.0], [1.5, 1.0]]), np.array([[0, 1, 2]]), np.array([0, 1, 2]))


@pytest.fixture(scope="session")
def square_mesh():
    return rectangle_mesh(1.0, 2.0, -0.5, 0.5, 12, 12)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
