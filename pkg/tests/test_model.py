import numpy as np
import pytest
from hypothesis import given, strategies as st

from eqlyte.fem import P1Space, assemble_matrix, laplace_kernel
from eqlyte.mesh import annulus_mesh, cube_mesh, interval_mesh, square_mesh
from eqlyte.model import (BoundaryData, EquilibriumProblem, MixtureSpec, PhysicalScales,
                          SolutionState, SolventDepletionError, SpeciesSpec, check_admissible,
                          diff_coeffs, flux, free_charge, jacobian, nondimensionalize,
                          pressure_recover, residual)

KB, E0 = 1.380649e-23, 1.602176634e-19


def general_spec(**kw):
    base = dict(species=(SpeciesSpec("C", 1, 0.1, 0.3), SpeciesSpec("A", -2, 0.7, 0.2)),
                chi=0.5, Psi=1.3, Lambda=50.0, Khat=0.8)
    base.update(kw)
    return MixtureSpec(**base)


def random_state(rng, spec, nv, spread=0.08):
    y0 = spec.y_avg
    y = y0[:, None] + spread * rng.uniform(-1, 1, (spec.num_ions, nv))
    return SolutionState(y=y, n=1.0 + 0.3 * rng.uniform(-1, 1, nv), phi=rng.uniform(-1, 1, nv),
                         c=rng.standard_normal(spec.num_ions), c_n=float(rng.standard_normal()))


# -- parameters -------------------------------------------------------------

def test_thermal_voltage_gives_unit_psi():
    T = 300.0
    Psi, _, _ = nondimensionalize(PhysicalScales(T=T, phi_BC=KB * T / E0, n0=1e26, x0=1e-8, K=1.0))
    assert Psi == pytest.approx(1.0, rel=1e-14)
    assert KB * T / E0 == pytest.approx(0.02585, rel=1e-3)


def test_doubling_temperature_halves_groups():
    a = nondimensionalize(PhysicalScales(T=300, phi_BC=0.05, n0=1e26, x0=1e-8, K=2e5))
    b = nondimensionalize(PhysicalScales(T=600, phi_BC=0.05, n0=1e26, x0=1e-8, K=2e5))
    assert np.allclose(np.array(b) * 2, a, rtol=1e-14)


def test_khat_unity_when_K_is_thermal_pressure():
    n0, T = 3e26, 310.0
    _, _, Khat = nondimensionalize(PhysicalScales(T=T, phi_BC=1, n0=n0, x0=1, K=n0 * KB * T))
    assert Khat == pytest.approx(1.0)


def test_nonpositive_temperature_rejected():
    with pytest.raises(ValueError):
        nondimensionalize(PhysicalScales(T=0.0, phi_BC=1, n0=1, x0=1, K=1))


def test_spec_validation():
    with pytest.raises(ValueError):
        SpeciesSpec("C", 1, 0.0, 0.4)
    with pytest.raises(ValueError):
        MixtureSpec(species=(SpeciesSpec("C", 1, 1, 0.6), SpeciesSpec("A", -1, 1, 0.5)))
    with pytest.raises(ValueError):
        MixtureSpec.baseline(Khat=0.0)
    assert MixtureSpec.baseline(chi=2.5).eps_r == 3.5


def test_temperature_scale_is_inverse():
    s = MixtureSpec.baseline().with_temperature_scale(2.0)
    assert (s.Psi, s.Lambda, s.Khat) == (0.5, 500.0, 0.5)


# -- pointwise coefficients -------------------------------------------------

def test_dcc_baseline():
    D = diff_coeffs(MixtureSpec.baseline(), 0, np.array([0.4, 0.4]))
    assert D.D_aa == pytest.approx(-30.0)
    assert D.D_ai == pytest.approx(-5.0)
    assert D.D_aphi == pytest.approx(-10.0)


def test_dcphi_charged_state():
    D = diff_coeffs(MixtureSpec.baseline(), 0, np.array([0.5, 0.3]))
    assert D.D_aphi == pytest.approx(9 * 0.2 - 10)


def test_flux_zero_gradients():
    spec = MixtureSpec.baseline()
    J = flux(spec, 0, np.zeros((2, 3)), np.zeros(3), np.array([0.3, 0.2]))
    assert np.array_equal(J, np.zeros(3))


def test_flux_single_species():
    spec = MixtureSpec(species=(SpeciesSpec("C", 1, 1.0, 0.4),))
    J = flux(spec, 0, np.array([[1.0, 0.0]]), np.zeros(2), np.array([0.4]))
    assert J == pytest.approx([-(2.5 + 1 / 0.6), 0.0])


def test_flux_potential_drive():
    J = flux(MixtureSpec.baseline(), 0, np.zeros((2, 2)), np.array([1.0, 0.0]), np.array([0.4, 0.4]))
    assert J == pytest.approx([-10.0, 0.0])


@pytest.mark.parametrize("y,n,q", [((0.4, 0.4), 1.0, 0.0), ((0.5, 0.3), 2.0, 0.4), ((0.5, 0.3), 0.0, 0.0)])
def test_free_charge(y, n, q):
    assert free_charge(MixtureSpec.baseline(), np.array(y), n) == pytest.approx(q)


def test_guard_reports_location():
    x = np.array([[0.0], [0.5], [1.0]])
    with pytest.raises(SolventDepletionError) as info:
        check_admissible(np.array([[0.5, 0.6, 0.5], [0.3, 0.4, 0.3]]), where=x)
    assert info.value.location == pytest.approx([0.5])
    with pytest.raises(SolventDepletionError):
        diff_coeffs(MixtureSpec.baseline(), 0, np.array([0.0, 0.4]))


@st.composite
def admissible(draw):
    a = draw(st.floats(1e-6, 0.98))
    b = draw(st.floats(1e-6, 0.99 - a))
    return np.array([a, b])


@given(admissible(), st.floats(0.01, 10), st.floats(0.01, 10), st.integers(-3, 3))
def test_coefficient_signs(y, Mc, Ma, zc):
    spec = MixtureSpec(species=(SpeciesSpec("C", zc, Mc, 0.3), SpeciesSpec("A", -1, Ma, 0.3)))
    for a in range(2):
        D = diff_coeffs(spec, a, y)
        assert D.D_aa < 0 and D.D_ai < 0


# -- pressure ---------------------------------------------------------------

def test_pressure_recovery():
    st_ = SolutionState(np.full((2, 3), 0.4), np.array([1.0, 1.5, 1.0]), np.zeros(3), np.zeros(2))
    assert pressure_recover(MixtureSpec.baseline(), st_) == pytest.approx([0, 0.5, 0])
    assert pressure_recover(MixtureSpec.baseline(Khat=2.0), st_) == pytest.approx([0, 1.0, 0])


# -- residual ---------------------------------------------------------------

def constant_state(spec, nv, g=0.0):
    return SolutionState(np.repeat(spec.y_avg[:, None], nv, 1), np.full(nv, spec.n_avg),
                         np.full(nv, g), np.zeros(spec.num_ions))


@pytest.mark.parametrize("mesh", [interval_mesh(6), square_mesh(4, 3), cube_mesh(2, 2, 2),
                                  annulus_mesh(1, 2, 2, 8)], ids=["1d", "2d", "3d", "annulus"])
def test_constant_state_residual_vanishes(mesh):
    spec = MixtureSpec.baseline()
    space = P1Space(mesh)
    r = residual(spec, constant_state(spec, space.ndofs, 0.7), space, BoundaryData(0.7, 0.7))
    assert np.abs(r).max() < 1e-12


def test_multiplier_shift_is_mass_row(rng):
    spec = general_spec()
    space = P1Space(square_mesh(3, 3))
    bc = BoundaryData(-0.5, 0.5)
    prob = EquilibriumProblem(spec, space, bc)
    x = random_state(rng, spec, space.ndofs).to_vector()
    r0 = prob.residual(x)
    for k in range(spec.num_ions + 1):
        xp = x.copy()
        xp[prob.nfield + k] += 0.25
        d = prob.residual(xp) - r0
        expect = np.zeros_like(d)
        expect[prob.block(k)] = 0.25 * space.mass_vector
        assert np.allclose(d, expect, atol=1e-13)


def test_phi_translation_changes_only_dirichlet_rows(rng):
    spec = general_spec()
    space = P1Space(square_mesh(4, 4))
    prob = EquilibriumProblem(spec, space, BoundaryData(-1.0, 1.0))
    st_ = random_state(rng, spec, space.ndofs)
    r0 = prob.residual(st_.to_vector())
    st_.phi += 3.0
    d = prob.residual(st_.to_vector()) - r0
    pb = prob.block(spec.num_ions + 1).start
    rows = pb + prob.dir_ids
    assert np.allclose(d[rows], 3.0)
    mask = np.ones(d.size, bool)
    mask[rows] = False
    assert np.abs(d[mask]).max() < 1e-10


def test_residual_depletion_guard():
    spec = MixtureSpec.baseline()
    space = P1Space(interval_mesh(4))
    s = constant_state(spec, 5)
    s.y[0, 2] = 0.65                                     # y_N < 0 at node 2
    with pytest.raises(SolventDepletionError):
        residual(spec, s, space, BoundaryData())


# -- Jacobian ---------------------------------------------------------------

def fd_check(prob, x, rng, h=1e-7):
    J = prob.jacobian(x).matrix()
    v = rng.standard_normal(x.size)
    fd = (prob.residual(x + h * v) - prob.residual(x - h * v)) / (2 * h)
    return np.linalg.norm(J @ v - fd) / np.linalg.norm(fd)


@pytest.mark.parametrize("mesh", [interval_mesh(8), square_mesh(4, 4), cube_mesh(2, 2, 2)],
                         ids=["1d", "2d", "3d"])
def test_jacobian_matches_finite_differences(mesh, rng):
    spec = general_spec()
    space = P1Space(mesh)
    prob = EquilibriumProblem(spec, space, BoundaryData(-1.0, 1.0))
    for _ in range(10):
        x = random_state(rng, spec, space.ndofs).to_vector()
        assert fd_check(prob, x, rng) < 1e-6


def test_jacobian_three_ions(rng):
    spec = MixtureSpec(species=(SpeciesSpec("C", 2, 0.3, 0.2), SpeciesSpec("A", -1, 1.5, 0.2),
                                SpeciesSpec("B", 1, 0.8, 0.15)), Lambda=20.0, Khat=3.0)
    space = P1Space(square_mesh(3, 3))
    prob = EquilibriumProblem(spec, space, BoundaryData(-1.0, 1.0))
    x = random_state(rng, spec, space.ndofs, spread=0.05).to_vector()
    assert fd_check(prob, x, rng) < 1e-6


def test_phi_block_is_laplacian_at_constant_state():
    spec = MixtureSpec.baseline()
    space = P1Space(square_mesh(4, 4))
    bc = BoundaryData(0.0, 0.0)
    prob = EquilibriumProblem(spec, space, bc)
    J = prob.jacobian(constant_state(spec, space.ndofs).to_vector()).core
    b = prob.block(spec.num_ions + 1)
    K = assemble_matrix(space, laplace_kernel).tolil()
    for i in prob.dir_ids:
        K.rows[i], K.data[i] = [i], [1.0]
    assert np.allclose(J[b, b].toarray(), K.toarray(), atol=1e-12)


def test_border_symmetry():
    spec = general_spec()
    space = P1Space(square_mesh(3, 3))
    system = jacobian(spec, constant_state(spec, space.ndofs), space, BoundaryData(0.0, 0.0))
    assert system.num_border == spec.num_ions + 1
    assert np.array_equal(system.border_cols, system.border_rows.T)


def test_state_vector_round_trip(rng):
    spec = general_spec()
    s = random_state(rng, spec, 7)
    back = SolutionState.from_vector(s.to_vector(), spec.num_ions, 7)
    assert np.array_equal(back.to_vector(), s.to_vector())
    assert np.allclose(back.y_solvent, 1 - s.y.sum(0))
