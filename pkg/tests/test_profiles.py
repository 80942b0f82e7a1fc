import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gsrecon.errors import DataError, NumericalError
from gsrecon.geometry import plasma_domain
from gsrecon.mesh import tokamak_mesh
from gsrecon.profiles import (
    BasisFamily,
    BasisKind,
    ProfileCoefficients,
    affine_coefficients,
    basis_matrix,
    derived_profiles,
    eval_basis,
    eval_profile,
    regularization_matrix,
    safety_factor,
    toroidal_current_density,
)

from oracles import MU0, clamped_cubic_knots, cox_de_boor, curvature_gram_oracle

KINDS = [BasisKind.PIECEWISE_LINEAR, BasisKind.CUBIC_BSPLINE]
TS = tokamak_mesh()


# -- basis -----------------------------------------------------------------------

@settings(max_examples=200, deadline=None)
@given(st.sampled_from(KINDS), st.integers(4, 20), st.floats(0.0, 1.0))
def test_partition_of_unity_and_nonnegativity(kind, m, x):
    phi = eval_basis(BasisFamily(kind, m), x)
    assert abs(phi.sum() - 1.0) <= 1e-12
    assert phi.min() >= -1e-15


@pytest.mark.parametrize("m", [4, 7, 11])
def test_hat_nodal_property(m):
    fam = BasisFamily(BasisKind.PIECEWISE_LINEAR, m)
    for k, x in enumerate(np.linspace(0, 1, m)):
        assert np.allclose(eval_basis(fam, x), np.eye(m)[k], atol=1e-15)


@pytest.mark.parametrize("m", [4, 6, 7, 12])
def test_cubic_values_match_cox_de_boor(m, rng):
    fam = BasisFamily(BasisKind.CUBIC_BSPLINE, m)
    t = clamped_cubic_knots(m)
    xs = np.concatenate([rng.uniform(0, 1, 98), [0.0, 1.0]])
    got = basis_matrix(fam, xs)
    ref = np.array([[cox_de_boor(t, i, 3, x) for i in range(m)] for x in xs])
    assert np.abs(got - ref).max() <= 1e-12


@pytest.mark.parametrize("x", [-1e-9, 1.0 + 1e-9, np.nan])
def test_basis_outside_unit_interval(x):
    with pytest.raises(DataError):
        eval_basis(BasisFamily(), x)


@pytest.mark.parametrize("m", [3, 21])
def test_basis_dimension_range(m):
    with pytest.raises(DataError):
        BasisFamily(BasisKind.CUBIC_BSPLINE, m)


# -- regularisation --------------------------------------------------------------

@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("m", [4, 7, 15, 20])
def test_curvature_matrix_kernel_and_psd(kind, m):
    fam = BasisFamily(kind, m)
    lam = regularization_matrix(fam).lam1
    norm = np.abs(lam).max()
    assert np.array_equal(lam, lam.T)
    assert np.linalg.eigvalsh(lam).min() >= -1e-12 * np.linalg.norm(lam, 2)
    assert np.abs(lam @ np.ones(m)).max() <= 1e-12 * norm
    assert np.abs(lam @ affine_coefficients(fam, 0.3, -1.7)).max() <= 1e-12 * norm * 2


def test_curvature_matrix_matches_fine_quadrature():
    lam = regularization_matrix(BasisFamily(BasisKind.CUBIC_BSPLINE, 6)).lam1
    ref = curvature_gram_oracle(6)
    assert np.abs(lam - ref).max() <= 1e-10 * max(1.0, np.abs(ref).max())


def test_block_diagonal_layout():
    reg = regularization_matrix(BasisFamily(m=5))
    W = reg.weighted(2.0, 3.0)
    assert np.array_equal(W[:5, :5], 2.0 * reg.lam1)
    assert np.array_equal(W[5:, 5:], 3.0 * reg.lam1)
    assert not W[:5, 5:].any()
    assert np.array_equal(reg.full, reg.weighted(1.0, 1.0))


@pytest.mark.parametrize("kind", KINDS)
def test_affine_coefficients_reproduce_affine_function(kind):
    fam = BasisFamily(kind, 9)
    x = np.linspace(0, 1, 57)
    assert np.allclose(basis_matrix(fam, x) @ affine_coefficients(fam, 2.0, -0.5), 2.0 - 2.5 * x, atol=1e-13)


# -- profile evaluation ----------------------------------------------------------

@pytest.mark.parametrize("kind", KINDS)
def test_constant_coefficients(kind):
    fam = BasisFamily(kind, 8)
    assert np.allclose(eval_profile(np.full(8, 3.25), fam, np.linspace(0, 1, 33)), 3.25, rtol=1e-14)


def test_unit_coefficients_give_hats():
    fam = BasisFamily(BasisKind.PIECEWISE_LINEAR, 6)
    x = np.linspace(0, 1, 41)
    for k in range(6):
        assert np.allclose(eval_profile(np.eye(6)[k], fam, x), np.maximum(0, 1 - np.abs(x * 5 - k)), atol=1e-14)


def test_profile_is_dot_product(rng):
    fam = BasisFamily()
    c = rng.standard_normal(fam.m)
    assert eval_profile(c, fam, 0.37) == pytest.approx(eval_basis(fam, 0.37) @ c, rel=1e-15)


def test_profile_length_mismatch():
    with pytest.raises(DataError):
        eval_profile(np.ones(5), BasisFamily(m=7), 0.5)


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(KINDS), st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 2**31 - 1))
def test_profile_linearity(kind, alpha, beta, seed):
    fam = BasisFamily(kind, 7)
    rng = np.random.default_rng(seed)
    u, v = rng.standard_normal(7), rng.standard_normal(7)
    x = rng.uniform(0, 1, 20)
    lhs = eval_profile(alpha * u + beta * v, fam, x)
    rhs = alpha * eval_profile(u, fam, x) + beta * eval_profile(v, fam, x)
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


# -- current density -------------------------------------------------------------

def _coeffs(rng, m=7):
    return ProfileCoefficients(rng.uniform(0, 1, m), rng.uniform(0, 1, m), np.ones(m))


def test_current_density_outside_is_zero(rng):
    j = toroidal_current_density(_coeffs(rng), BasisFamily(), 2.0, 2.4, 2.1, 0.5, inside=False)
    assert j == 0.0


def test_current_density_on_major_radius(rng):
    c, fam = _coeffs(rng), BasisFamily()
    j = toroidal_current_density(c, fam, 3.0, 2.4, 2.4, 0.3)
    assert j == pytest.approx(3.0 * (eval_profile(c.a, fam, 0.3) + eval_profile(c.b, fam, 0.3)), rel=1e-14)


def test_current_density_needs_positive_radius(rng):
    with pytest.raises(DataError):
        toroidal_current_density(_coeffs(rng), BasisFamily(), 1.0, 2.4, 0.0, 0.5)


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(1.0, 3.5), st.floats(0, 1), st.integers(0, 2**31 - 1))
def test_current_density_gauge(gamma, r, x, seed):
    rng = np.random.default_rng(seed)
    c, fam = _coeffs(rng), BasisFamily()
    j1 = toroidal_current_density(c, fam, 1.7, 2.4, r, x)
    scaled = ProfileCoefficients(gamma * c.a, gamma * c.b, c.c)
    j2 = toroidal_current_density(scaled, fam, 1.7 / gamma, 2.4, r, x)
    assert j2 == pytest.approx(j1, rel=8 * np.finfo(float).eps)


# -- derived profiles ------------------------------------------------------------

def _derive(a, b, fam, lam=2.0e5, f_b=9.0, psi_axis=0.3, psi_b=-0.2):
    c = ProfileCoefficients(a, b, np.zeros(fam.m))
    return derived_profiles(c, fam, lam, 2.4, f_b, psi_axis, psi_b)


def test_zero_pressure_profile():
    fam = BasisFamily()
    d = _derive(np.zeros(7), np.ones(7), fam)
    assert not d.p.any()


def test_vacuum_toroidal_field():
    fam = BasisFamily()
    d = _derive(np.ones(7), np.zeros(7), fam)
    assert np.all(d.f == 9.0)


def test_affine_pressure_gradient_closed_form():
    fam = BasisFamily()
    lam, R0, psi_axis, psi_b = 2.0e5, 2.4, 0.3, -0.2
    d = _derive(affine_coefficients(fam, 1.0, 0.0), np.zeros(7), fam, lam=lam, psi_axis=psi_axis, psi_b=psi_b)
    x = d.psibar
    # p = -(psi_b - psi_axis) * (lam / R0) * int_x^1 (1 - s) ds
    exact = -(psi_b - psi_axis) * lam / R0 * 0.5 * (1 - x) ** 2
    assert np.abs(d.p - exact).max() <= 1e-8 * np.abs(exact).max()


def test_boundary_values_and_definitions(rng):
    fam = BasisFamily()
    a, b = rng.uniform(0, 1, 7), rng.uniform(0, 1, 7)
    d = _derive(a, b, fam)
    assert d.p[-1] == 0.0 and d.f[-1] == 9.0
    x = d.psibar
    assert np.allclose(d.pprime, 2.0e5 * eval_profile(a, fam, x) / 2.4, rtol=1e-14)
    assert np.allclose(d.ffprime, 2.0e5 * MU0 * 2.4 * eval_profile(b, fam, x), rtol=1e-14)


def test_pressure_gradient_by_finite_differences(rng):
    fam = BasisFamily()
    a = rng.uniform(0, 1, 7)
    psi_axis, psi_b = 0.3, -0.2
    errs = []
    for n in (101, 201):
        x = np.linspace(0, 1, n)
        c = ProfileCoefficients(a, np.zeros(7), np.zeros(7))
        d = derived_profiles(c, fam, 2.0e5, 2.4, 9.0, psi_axis, psi_b, grid=x)
        dp = (d.p[2:] - d.p[:-2]) / (2 * (x[1] - x[0]) * (psi_b - psi_axis))
        errs.append(np.abs(dp - d.pprime[1:-1]).max())
    assert errs[0] <= 1e-3 * np.abs(d.pprime).max()
    assert errs[0] / errs[1] > 3.5  # second order


def test_negative_f_squared_names_grid_point():
    fam = BasisFamily()
    with pytest.raises(NumericalError, match="grid point"):
        _derive(np.zeros(7), np.full(7, -1e3), fam, f_b=0.1)


def test_degenerate_flux_range():
    fam = BasisFamily()
    with pytest.raises(NumericalError):
        _derive(np.zeros(7), np.zeros(7), fam, psi_axis=0.1, psi_b=0.1)


def test_profile_table_columns(rng):
    d = _derive(rng.uniform(0, 1, 7), rng.uniform(0, 1, 7), BasisFamily())
    t = d.table()
    assert t.shape == (101, 9)
    assert np.all(np.isnan(t[:, 8]))


# -- safety factor ---------------------------------------------------------------

def _circle_field(k=0.8):
    psi = -k * ((TS.r - 2.4) ** 2 + TS.z**2)
    return psi, plasma_domain(TS, psi)


def test_safety_factor_zero_field():
    psi, dom = _circle_field()
    assert np.all(safety_factor(TS, psi, dom, 0.0, [0.3, 0.6]) == 0.0)


def test_safety_factor_linear_in_f():
    psi, dom = _circle_field()
    q1 = safety_factor(TS, psi, dom, [4.0, 5.0], [0.3, 0.6])
    q2 = safety_factor(TS, psi, dom, [8.0, 10.0], [0.3, 0.6])
    assert np.array_equal(q2, 2 * q1)


@pytest.mark.parametrize("level", [0.25, 0.5, 0.8])
def test_safety_factor_concentric_circles(level):
    k, R0, f = 0.8, 2.4, 9.0
    psi, dom = _circle_field(k)
    rho = np.sqrt(-(dom.psi_axis + level * (dom.psi_b - dom.psi_axis)) / k)
    # |grad psi| = 2 k rho on the circle and (1/2pi) closed int dl / r = rho / sqrt(R0^2 - rho^2)
    exact = f / (2 * k * np.sqrt(R0**2 - rho**2))
    q = safety_factor(TS, psi, dom, f, [level])[0]
    assert q == pytest.approx(exact, rel=0.02)
