import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from cyclicqm.errors import (
    BoundaryMassError,
    BoundaryMassWarning,
    CouplingRangeError,
    IllConditionedWarning,
    NegativeEntryError,
    SpecError,
)
from cyclicqm.experiments import fit_slope
from cyclicqm.kernels import (
    SIGMA_X,
    SIGMA_Z,
    DriftDiffusion,
    Electromagnetic,
    Factor,
    MeasurementCoupling,
    NonRelativistic,
    ProductGrid,
    Tabulated,
    TwoLevelParams,
    build_em_energy,
    build_factor,
    dynamical_from_hamiltonian,
    dynamical_matrix,
    energy_nonrel,
    free_particle,
    harmonic,
    induced_coupling,
    kernel_moments,
    matrix_factor,
    measurement_covariance,
    measurement_kernel,
    split_sym_antisym,
    truncate_two_level,
    two_level_factor,
)
from cyclicqm.lattice import make_grid

# --------------------------------------------------------------------------
# energies


def test_energy_nonrel_examples():
    free2 = NonRelativistic(2.0)
    assert energy_nonrel(0.3, 0.3, free_particle(), 0.1) == 0.0
    assert energy_nonrel(0.1, 0.0, free2, 0.1) == pytest.approx(1.0, rel=1e-14)
    quad = NonRelativistic(2.0, potential=lambda x, t: x**2)
    assert energy_nonrel(0.1, 0.0, quad, 0.1) == pytest.approx(1.005, rel=1e-14)


def _em(A=None, V=None, m=1.3, e=0.7, c=2.0):
    return Electromagnetic(m, e, c, V, A)


def test_em_energy_field_off_is_kinetic():
    x, y = np.array([0.1, 0.2, -0.3]), np.array([0.4, 0.0, 0.1])
    eps = 0.05
    expect = 0.5 * 1.3 * np.sum(((y - x) / eps) ** 2)
    assert build_em_energy(y, x, _em(), eps) == pytest.approx(expect, rel=1e-14)


def test_em_energy_zero_displacement():
    x = np.array([0.5, -0.2, 1.0])
    A = lambda p, t: np.stack([p[..., 1], p[..., 0] * 2, np.ones(p.shape[:-1])], axis=-1)
    V = lambda p, t: p[..., 0] ** 2 + t
    spec = _em(A, V)
    val = build_em_energy(x, x, spec, 0.01, t=0.3)
    a = np.array([-0.2, 1.0, 1.0])
    assert val == pytest.approx(0.25 + 0.3 + 0.7**2 / (1.3 * 4.0) * a @ a, rel=1e-14)


def test_em_energy_constant_vector_potential():
    A0, u, eps = 0.8, 0.03, 0.01
    spec = _em(lambda p, t: np.broadcast_to([A0, 0.0, 0.0], p.shape))
    x = np.zeros(3)
    y = np.array([u, 0.0, 0.0])
    kin = 0.5 * 1.3 * (u / eps) ** 2
    expect = kin + (0.7 / 2.0) * (u / eps) * A0 + 0.7**2 / (1.3 * 4.0) * A0**2
    assert build_em_energy(y, x, spec, eps) == pytest.approx(expect, rel=1e-14)


def test_spec_validation():
    with pytest.raises(SpecError):
        NonRelativistic(0.0)
    with pytest.raises(SpecError):
        DriftDiffusion(-1.0)
    with pytest.raises(CouplingRangeError):
        MeasurementCoupling(1.0, 1.0, 1.0)
    with pytest.raises(SpecError):
        Tabulated(np.ones((2, 3)))


# --------------------------------------------------------------------------
# factors


def test_free_row_mass_is_one():
    g = make_grid(-10, 10, 401)
    F = build_factor(free_particle(), g, 0.05)
    rm = F.row_mass()
    inner = np.abs(g.points) <= 6
    assert np.max(np.abs(rm[inner] - 1.0)) < 1e-8
    assert np.all(F.matrix >= 0)


def test_row_mass_law_quadratic_remainder():
    # for V = x^2 the remainder is eps^2 (x'^4 - 1)/2 + O(eps^3)
    g = make_grid(-6, 6, 481)
    x = g.points
    spec = NonRelativistic(1.0, potential=lambda x, t: x**2)
    inner = np.abs(x) <= 2
    eps_list = [0.04, 0.02, 0.01, 0.005]
    rem = []
    for eps in eps_list:
        F = build_factor(spec, g, eps)
        r = F.row_mass() - (1 - eps * x**2)
        rem.append(np.max(np.abs(r[inner])))
    assert abs(fit_slope(eps_list, rem) - 2.0) < 0.3
    # the leading coefficient matches the hand expansion
    eps = 0.005
    F = build_factor(spec, g, eps)
    r = F.row_mass() - (1 - eps * x**2)
    j = np.argmin(np.abs(x - 1.5))
    assert r[j] / eps**2 == pytest.approx((x[j] ** 4 - 1) / 2, rel=0.05)


def test_drift_without_velocity_is_symmetric():
    g = make_grid(-5, 5, 101)
    F = build_factor(DriftDiffusion(1.5, 0.0, 0.8), g, 0.1)
    assert np.array_equal(F.matrix, F.matrix.T)


def test_drift_split_hyperbolic_forms():
    g = make_grid(-5, 5, 101)
    gam, v, h, eps = 1.5, 0.7, 0.8, 0.1
    F = build_factor(DriftDiffusion(gam, v, h), g, eps)
    Ks, Ka = split_sym_antisym(F)
    u = g.points[:, None] - g.points[None, :]
    Z = math.sqrt(2 * math.pi * h * eps / gam)
    base = np.exp(-gam * u**2 / (2 * h * eps) - gam * v**2 * eps / (2 * h)) / Z
    np.testing.assert_allclose(Ks.matrix, base * np.cosh(gam * v * u / h), rtol=1e-12, atol=1e-300)
    np.testing.assert_allclose(Ka.matrix, base * np.sinh(gam * v * u / h), rtol=1e-12, atol=1e-300)
    assert not Ka.stoquastic


@settings(max_examples=50)
@given(arrays(np.float64, (5, 5), elements=st.floats(0, 10)))
def test_split_exactness(M):
    F = matrix_factor(M)
    Ks, Ka = split_sym_antisym(F)
    assert np.array_equal(Ks.matrix, Ks.matrix.T)
    assert np.array_equal(Ka.matrix, -Ka.matrix.T)
    assert np.max(np.abs(Ks.matrix + Ka.matrix - M)) <= 1e-15 * max(1.0, M.max())


def test_symmetric_split_of_symmetric_factor():
    M = np.array([[1.0, 2.0], [2.0, 3.0]])
    Ks, Ka = split_sym_antisym(matrix_factor(M))
    assert np.array_equal(Ks.matrix, M)
    assert not Ka.matrix.any()


def test_factor_guards():
    with pytest.raises(NegativeEntryError):
        Factor(np.array([[1.0, -0.1], [0.0, 1.0]]))
    F = Factor(np.eye(2))
    with pytest.raises(ValueError):
        F.matrix[0, 0] = 3.0
    with pytest.raises(ValueError):
        Factor(np.array([[np.nan]]))


def test_boundary_mass_warning_and_strict():
    g = make_grid(-1, 1, 41)
    with pytest.warns(BoundaryMassWarning):
        build_factor(free_particle(), g, 0.5)
    with pytest.raises(BoundaryMassError):
        build_factor(free_particle(), g, 0.5, strict=True)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        build_factor(free_particle(), make_grid(-10, 10, 201), 0.5)


def test_tabulated_factor():
    H = np.array([[0.0, 1.0], [2.0, 0.5]])
    g = make_grid(0, 1, 2)
    F = build_factor(Tabulated(H), g, 0.3, 1.5)
    np.testing.assert_allclose(F.matrix, np.exp(-0.3 * H / 1.5), rtol=1e-15)
    assert not F.includes_normalization


# --------------------------------------------------------------------------
# dynamical matrix


def test_identity_factor_gives_zero_J():
    J = dynamical_matrix(Factor(np.eye(3)), 0.1)
    assert not J.J.any()


def test_J_split_and_hamiltonian_parts():
    rng = np.random.default_rng(0)
    F = matrix_factor(np.eye(4) + 0.05 * rng.random((4, 4)))
    D = dynamical_matrix(F, 0.1, hbar_cycle=2.0)
    assert np.array_equal(D.J, D.J_s + D.J_a)
    assert np.array_equal(D.J_s, D.J_s.T) and np.array_equal(D.J_a, -D.J_a.T)
    np.testing.assert_array_equal(D.H_s, -2.0 * D.J_s)
    np.testing.assert_array_equal(D.H_a, -2.0 * D.J_a)
    H = D.hamiltonian
    assert np.max(np.abs(H - H.conj().T)) == 0.0
    back = dynamical_from_hamiltonian(H, 2.0)
    np.testing.assert_allclose(back.J, D.J, rtol=0, atol=1e-14)


def test_ill_conditioned_warning():
    F = matrix_factor(np.eye(3) * 2.0)
    with pytest.warns(IllConditionedWarning):
        dynamical_matrix(F, 0.1)


def test_free_J_on_parabola():
    # the free Gaussian has variance hbar eps / m, so (F f - f)/eps = hbar/m for f = x^2
    g = make_grid(-8, 8, 321)
    hbar, m = 1.3, 0.7
    c = 160
    for eps in (0.05, 0.02):
        D = dynamical_matrix(build_factor(NonRelativistic(m), g, eps, hbar), eps, hbar, warn=False)
        val = (D.J @ g.points**2)[c]
        assert val == pytest.approx(hbar / m, rel=1e-8)


def test_laplacian_limit_first_order():
    g = make_grid(-10, 10, 801)
    x = g.points
    f = np.exp(-(x**2) / 2) * np.cos(x)
    d2 = np.exp(-(x**2) / 2) * ((x**2 - 2) * np.cos(x) + 2 * x * np.sin(x))
    inner = np.abs(x) <= 5
    eps_list = [0.04, 0.02, 0.01]
    errs = []
    for eps in eps_list:
        D = dynamical_matrix(build_factor(free_particle(), g, eps), eps, warn=False)
        errs.append(np.max(np.abs((D.J @ f - 0.5 * d2)[inner])))
    assert abs(fit_slope(eps_list, errs) - 1.0) < 0.2


def test_potential_part_of_J_is_minus_V():
    g = make_grid(-10, 10, 801)
    x = g.points
    V = lambda x, t: 0.5 * x**2
    f = np.exp(-(x**2) / 2)
    inner = np.abs(x) <= 4
    errs = []
    eps_list = [0.04, 0.02, 0.01]
    for eps in eps_list:
        Jv = dynamical_matrix(build_factor(NonRelativistic(1.0, V), g, eps), eps, warn=False).J
        J0 = dynamical_matrix(build_factor(free_particle(), g, eps), eps, warn=False).J
        errs.append(np.max(np.abs(((Jv - J0) @ f + V(x, 0) * f)[inner])))
    assert errs[-1] < 0.02
    assert abs(fit_slope(eps_list, errs) - 1.0) < 0.2


def test_em_plane_wave_consistency():
    # the induced Hamiltonian reproduces (hbar k - e A/c)^2 / 2m on plane waves
    g = make_grid(-10, 10, 801)
    x = g.points
    c = 400
    A0, k, m, e, cl, hbar = 0.7, 1.0, 1.0, 1.0, 1.0, 1.0
    spec = Electromagnetic(m, e, cl, None, lambda p, t: np.full(p.shape, A0))
    exact = (hbar * k - e * A0 / cl) ** 2 / (2 * m)
    psi = np.exp(1j * k * x)
    eps_list = [0.04, 0.02, 0.01]
    errs = []
    for eps in eps_list:
        F = build_factor(spec, g, eps, hbar)
        H = dynamical_matrix(F, eps, hbar, warn=False).hamiltonian
        E = (H @ psi)[c] / psi[c]
        assert abs(E.imag) < 1e-10
        errs.append(abs(E.real - exact))
    assert abs(fit_slope(eps_list, errs) - 1.0) < 0.2
    assert errs[-1] < 0.01


# --------------------------------------------------------------------------
# two-level truncation


def test_two_level_examples():
    p = TwoLevelParams(E0=0.2, E1=1.4, omega=2.0, D=0.3)
    H = truncate_two_level(p, math.pi / 4)  # cos(omega t) = 0
    assert abs(H[0, 1]) < 1e-16 and abs(H[1, 0]) < 1e-16
    q = TwoLevelParams(E0=0.2, E1=1.4, omega=2.0, D=0.0)
    np.testing.assert_allclose(truncate_two_level(q, 0.7), np.diag([0.2, 1.4]), atol=1e-15)
    with pytest.raises(SpecError):
        TwoLevelParams(E0=1.0, E1=1.0, omega=1.0, D=0.1)
    assert np.array_equal(SIGMA_X @ SIGMA_X, np.eye(2)) and np.array_equal(SIGMA_Z @ SIGMA_Z, np.eye(2))


def test_truncation_introduces_negative_entry():
    # off-diagonal of I - eps H / hbar is -eps D cos(omega t)
    p = TwoLevelParams(E0=0.0, E1=1.0, omega=1.0, D=0.5)
    F = two_level_factor(p, 0.0, 0.1)
    assert F.matrix[0, 1] == pytest.approx(-0.05, rel=1e-14) and not F.stoquastic
    flipped = two_level_factor(TwoLevelParams(0.0, 1.0, 1.0, -0.5), math.pi, 0.1)
    assert flipped.matrix[0, 1] < 0
    assert two_level_factor(p, math.pi, 0.1).matrix[0, 1] > 0
    # the grid kernel from which the two levels are drawn stays non-negative
    g = make_grid(-8, 8, 161)
    grid_F = build_factor(harmonic(1.0, 1.0), g, 0.1)
    assert np.all(grid_F.matrix >= 0)
    with pytest.raises(NegativeEntryError):
        Factor(F.matrix, stoquastic=True)


# --------------------------------------------------------------------------
# measurement coupling


@pytest.fixture(scope="module")
def small_grid():
    return make_grid(-2, 2, 41)


def test_uncoupled_kernel_factorizes(small_grid):
    eps = 0.04
    spec = MeasurementCoupling(1.0, 2.0, 0.0)
    F = measurement_kernel(spec, small_grid, small_grid, eps)
    Fs = build_factor(NonRelativistic(1.0), small_grid, eps)
    Fd = build_factor(NonRelativistic(2.0), small_grid, eps)
    np.testing.assert_allclose(F.matrix, np.kron(Fs.matrix, Fd.matrix), rtol=1e-12, atol=1e-300)
    pg = ProductGrid(small_grid, small_grid)
    G = build_factor(spec, pg, eps)
    assert np.array_equal(G.matrix, F.matrix)


def test_kernel_second_moments_match_covariance(small_grid):
    eps = 0.04
    spec = MeasurementCoupling(1.0, 2.0, 0.5)
    F = measurement_kernel(spec, small_grid, small_grid, eps)
    n = small_grid.n_points
    mean, second = kernel_moments(F, (n // 2) * n + n // 2)
    C = measurement_covariance(spec, eps)
    assert np.max(np.abs(mean)) < 1e-12
    assert np.max(np.abs(second - C)) < 1e-6
    assert np.all(F.matrix >= 0)


def test_induced_coupling_from_plane_waves(small_grid):
    # the p P coefficient of the induced Hamiltonian, read off from plane waves
    eps = 0.02
    spec = MeasurementCoupling(1.0, 2.0, 0.5)
    F = measurement_kernel(spec, small_grid, small_grid, eps)
    H = dynamical_matrix(F, eps, warn=False).hamiltonian
    xs, Xs = ProductGrid(small_grid, small_grid).coordinates()
    n = small_grid.n_points
    c = (n // 2) * n + n // 2

    def energy(k, K):
        psi = np.exp(1j * (k * xs + K * Xs))
        return ((H @ psi)[c] / psi[c]).real

    g_num = (energy(1.0, 1.0) - energy(1.0, -1.0)) / 2.0
    g = induced_coupling(spec)
    assert g == pytest.approx(0.5 / math.sqrt(2.0), rel=1e-15)
    assert g_num == pytest.approx(g, rel=0.03)


def test_coupling_range(small_grid):
    with pytest.raises(CouplingRangeError):
        MeasurementCoupling(1.0, 1.0, -1.2)
