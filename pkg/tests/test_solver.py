import math

import numpy as np
import pytest
import scipy.sparse as sp

from eqlyte.fem import LinearSystem, P1Space, assemble_matrix, laplace_kernel
from eqlyte.mesh import BoundaryTag, annulus_mesh, interval_mesh, square_mesh
from eqlyte.model import BoundaryData, EquilibriumProblem, MixtureSpec
from eqlyte.solver import (NewtonConfig, SolverFailure, continuation_solve, initial_guess,
                           laplace_potential, newton, newton_solve)
from eqlyte.verify import reference_mms_case, solve_mms


@pytest.fixture(scope="module")
def baseline_1d():
    spec = MixtureSpec.baseline()
    space = P1Space(interval_mesh(128))
    state, report = continuation_solve(spec, space, BoundaryData(-1.0, 1.0))
    return spec, space, state, report


def test_config_validation():
    with pytest.raises(ValueError):
        NewtonConfig(abs_tol=0)
    with pytest.raises(ValueError):
        NewtonConfig(max_iter=0)
    with pytest.raises(ValueError):
        NewtonConfig(damping_min=2.0)


# -- initial guess ----------------------------------------------------------

def test_initial_guess_linear_potential_1d():
    spec = MixtureSpec.baseline()
    space = P1Space(interval_mesh(16))
    st = initial_guess(spec, space, BoundaryData(-1.0, 1.0))
    assert np.allclose(st.phi, 2 * space.mesh.vertices[:, 0] - 1, atol=1e-13)
    assert np.allclose(st.y, 0.4) and np.allclose(st.n, 1.0)
    assert np.all(st.c == 0) and st.c_n == 0


def test_initial_guess_zero_data_constant():
    spec = MixtureSpec.baseline()
    space = P1Space(square_mesh(4, 4))
    st = initial_guess(spec, space, BoundaryData(0.0, 0.0))
    assert np.abs(st.phi).max() < 1e-14


def test_initial_guess_annulus_log_profile():
    spec = MixtureSpec.baseline()
    errs = []
    for n_rad, n_ang in ((4, 32), (8, 64)):
        space = P1Space(annulus_mesh(1.0, 2.0, n_rad, n_ang))
        phi = initial_guess(spec, space, BoundaryData(-1.0, 1.0)).phi
        r = np.linalg.norm(space.mesh.vertices, axis=1)
        exact = -1 + 2 * np.log(r) / math.log(2.0)
        errs.append(np.abs(phi - exact).max())
    assert errs[1] < 1e-2
    assert errs[0] / errs[1] > 3.0                # O(h^2)


# -- Newton -----------------------------------------------------------------

class _LinearPoisson:
    """Duck-typed problem: -u'' = 1 with homogeneous Dirichlet data."""

    def __init__(self, n):
        space = P1Space(interval_mesh(n))
        K = assemble_matrix(space, laplace_kernel).tolil()
        b = space.mass_vector.copy()
        for i in (0, n):
            K.rows[i], K.data[i] = [i], [1.0]
            b[i] = 0.0
        self.A, self.b = K.tocsr(), b

    def residual(self, x):
        return self.A @ x - self.b

    def jacobian(self, x):
        n = self.A.shape[0]
        return LinearSystem(self.A, np.zeros((n, 0)), np.zeros((0, n)), np.zeros(n))


def test_linear_problem_one_iteration():
    prob = _LinearPoisson(20)
    x, rep = newton(prob, np.zeros(21), NewtonConfig())
    assert rep.converged and rep.iterations == 1


def test_zero_voltage_constant_state():
    spec = MixtureSpec.baseline()
    space = P1Space(interval_mesh(32))
    bc = BoundaryData(0.0, 0.0)
    st, rep = newton_solve(spec, initial_guess(spec, space, bc), space, bc)
    assert rep.converged and rep.iterations <= 2
    assert np.allclose(st.y, 0.4, atol=1e-10) and np.allclose(st.n, 1.0, atol=1e-10)


def test_baseline_converges(baseline_1d):
    spec, space, st, rep = baseline_1d
    assert rep.converged and rep.residual_norm <= 1e-10
    x = space.mesh.vertices[:, 0]
    mid = (x >= 1 / 3) & (x <= 2 / 3)
    assert np.abs(st.y[0, mid] - 0.4).max() < 0.01
    assert np.abs(st.y[1, mid] - 0.4).max() < 0.01


def test_converged_state_invariants(baseline_1d):
    spec, space, st, _ = baseline_1d
    m, vol = space.mass_vector, space.domain_measure()
    assert np.all((st.y > 0) & (st.y < 1)) and np.all(st.y_solvent > 0) and np.all(st.n > 0)
    assert abs(m @ st.y[0] / vol - 0.4) < 1e-10
    assert abs(m @ st.y[1] / vol - 0.4) < 1e-10
    assert abs(m @ st.n / vol - 1.0) < 1e-10


def test_residual_monotone_across_accepted_steps(baseline_1d):
    _, _, _, rep = baseline_1d
    assert rep.continuation_levels == 1
    h = np.array(rep.residual_history)
    assert np.all(np.diff(h) < 0)
    assert all(1 / 64 <= lam <= 1 for lam in rep.damping_history)


def test_mirror_symmetry_1d(baseline_1d):
    _, _, st, _ = baseline_1d
    assert np.abs(st.y[0] - st.y[1][::-1]).max() < 1e-8
    assert np.abs(st.n - st.n[::-1]).max() < 1e-8
    assert np.abs(st.phi + st.phi[::-1]).max() < 1e-8


def test_continuation_independent_of_steps(baseline_1d):
    spec, space, ref, _ = baseline_1d
    for K in (2, 4, 8):
        st, rep = continuation_solve(spec, space, BoundaryData(-1.0, 1.0),
                                     NewtonConfig(continuation_steps=K))
        assert rep.converged and rep.continuation_levels == K
        assert np.abs(st.to_vector() - ref.to_vector()).max() < 1e-8


def test_one_step_continuation_is_plain_newton():
    spec = MixtureSpec.baseline()
    space = P1Space(interval_mesh(64))
    bc = BoundaryData(-0.5, 0.5)
    a, ra = continuation_solve(spec, space, bc, NewtonConfig(auto_escalate=False))
    b, rb = newton_solve(spec, initial_guess(spec, space, bc), space, bc)
    assert np.array_equal(a.to_vector(), b.to_vector())
    assert ra.iterations == rb.iterations


def test_zero_target_constant_every_level():
    spec = MixtureSpec.baseline()
    space = P1Space(interval_mesh(16))
    st, rep = continuation_solve(spec, space, BoundaryData(0.0, 0.0), NewtonConfig(continuation_steps=4))
    assert rep.converged and rep.iterations <= 4
    assert np.allclose(st.y, 0.4, atol=1e-10) and np.abs(st.phi).max() < 1e-10


def test_independent_of_damping_history():
    spec = MixtureSpec.baseline(Lambda=100.0)
    space = P1Space(interval_mesh(64))
    bc = BoundaryData(-1.0, 1.0)
    a, _ = continuation_solve(spec, space, bc)
    st0 = initial_guess(spec, space, bc)
    st0.n = st0.n + 0.1 * np.sin(np.pi * space.mesh.vertices[:, 0])
    b, rep = newton_solve(spec, st0, space, bc)
    assert rep.converged
    assert np.abs(a.to_vector() - b.to_vector()).max() < 1e-8


def test_quadratic_terminal_convergence():
    _, _, rep = solve_mms(reference_mms_case(), 8, NewtonConfig(abs_tol=1e-13))
    h = rep.residual_history
    ratios = [h[k + 1] / h[k] ** 2 for k in range(len(h) - 1) if h[k] < 1e-2 and h[k + 1] > 1e-14]
    assert ratios and max(ratios) < 1e3


def test_failure_reports_and_raises():
    spec = MixtureSpec.baseline()
    space = P1Space(interval_mesh(32))
    with pytest.raises(SolverFailure) as info:
        continuation_solve(spec, space, BoundaryData(-1.0, 1.0), NewtonConfig(max_iter=1))
    rep = info.value.report
    assert not rep.converged and rep.continuation_levels == 8
    assert "maximum iterations" in str(info.value)


def test_nonconvergence_returns_last_iterate():
    spec = MixtureSpec.baseline()
    space = P1Space(interval_mesh(32))
    bc = BoundaryData(-1.0, 1.0)
    st, rep = newton_solve(spec, initial_guess(spec, space, bc), space, bc, NewtonConfig(max_iter=2))
    assert not rep.converged and rep.iterations == 2
    assert rep.residual_norm < rep.residual_history[0]


def test_depletion_message():
    # a full-size step leaves the admissible set and damping may not go below 1/2
    spec = MixtureSpec.baseline(Psi=10.0)
    space = P1Space(interval_mesh(8))
    bc = BoundaryData(-1.0, 1.0)
    st, rep = newton_solve(spec, initial_guess(spec, space, bc), space, bc,
                           NewtonConfig(damping_min=0.5))
    assert not rep.converged
    assert rep.message == "solvent depletion - refine mesh or ramp voltage"
    assert np.all(st.y_solvent > 0)                 # last iterate is never clipped or invalid


def test_report_serializable(baseline_1d):
    d = baseline_1d[3].to_dict()
    assert set(d) >= {"iterations", "residual_norm", "damping_history", "continuation_levels", "converged"}
