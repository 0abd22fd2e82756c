"""Damped Newton iteration with voltage continuation."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .fem import P1Space, SingularMatrixError, assemble_matrix, laplace_kernel, solve_direct
from .model import (BoundaryData, EquilibriumProblem, MixtureSpec, SolutionState,
                    SolventDepletionError, Sources)

logger = logging.getLogger(__name__)


@dataclass
class NewtonConfig:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-12
    max_iter: int = 50
    damping_min: float = 1.0 / 64
    continuation_steps: int = 1
    auto_escalate: bool = True

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not 0 < self.damping_min <= 1:
            raise ValueError("damping_min must lie in (0, 1]")
        if self.continuation_steps < 1:
            raise ValueError("continuation_steps must be >= 1")


@dataclass
class SolveReport:
    iterations: int = 0
    residual_norm: float = float("nan")
    residual_history: list = field(default_factory=list)
    damping_history: list = field(default_factory=list)
    continuation_levels: int = 1
    converged: bool = False
    message: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


class SolverFailure(RuntimeError):
    def __init__(self, msg, report: SolveReport | None = None, state=None):
        super().__init__(msg)
        self.report = report
        self.state = state


def laplace_potential(space: P1Space, bc: BoundaryData, phi_flux_load=None) -> np.ndarray:
    """Harmonic potential with the electrode Dirichlet data (zero charge).

    Pure Neumann meshes (no electrodes) get the zero potential.
    """
    ids, vals = bc.dirichlet_values(space.mesh)
    if ids.size == 0:
        return np.zeros(space.ndofs)
    A = assemble_matrix(space, laplace_kernel).tolil()
    b = np.zeros(space.ndofs) if phi_flux_load is None else phi_flux_load.copy()
    for i, v in zip(ids, vals):
        A.rows[i] = [i]
        A.data[i] = [1.0]
        b[i] = v
    return solve_direct(A.tocsc(), b)


def initial_guess(spec: MixtureSpec, space: P1Space, bc: BoundaryData,
                  means=None) -> SolutionState:
    """Constant fractions and density at their means, harmonic potential."""
    y_mean, n_mean = means if means is not None else (spec.y_avg, spec.n_avg)
    nv = space.ndofs
    y = np.repeat(np.asarray(y_mean, dtype=float)[:, None], nv, axis=1)
    return SolutionState(
        y=y,
        n=np.full(nv, float(n_mean)),
        phi=laplace_potential(space, bc),
        c=np.zeros(spec.num_ions),
        c_n=0.0,
    )


def _admissible(problem: EquilibriumProblem, x) -> bool:
    try:
        problem.residual(x)
    except (SolventDepletionError, ArithmeticError):
        return False
    return True


def newton(problem: EquilibriumProblem, x0: np.ndarray, config: NewtonConfig):
    """Damped Newton on ``problem`` from vector ``x0``.

    A step is accepted once the residual norm strictly decreases and the
    guards hold; otherwise it is halved down to ``config.damping_min``.
    Returns ``(x, report)``; ``report.converged`` tells whether the tolerance
    was met.
    """
    report = SolveReport()
    x = np.array(x0, dtype=float)
    r = problem.residual(x)
    rnorm = float(np.linalg.norm(r))
    tol = max(config.abs_tol, config.rel_tol * rnorm)
    report.residual_history.append(rnorm)
    for it in range(config.max_iter):
        if rnorm <= tol:
            report.converged = True
            break
        try:
            dx = _newton_step(problem, x, r)
        except SingularMatrixError as exc:
            report.message = str(exc)
            break
        lam = 1.0
        accepted = False
        while lam >= config.damping_min:
            xt = x + lam * dx
            try:
                rt = problem.residual(xt)
            except (SolventDepletionError, ArithmeticError):
                lam *= 0.5
                continue
            rt_norm = float(np.linalg.norm(rt))
            if rt_norm < rnorm:
                accepted = True
                break
            lam *= 0.5
        report.iterations = it + 1
        if not accepted:
            report.message = ("solvent depletion - refine mesh or ramp voltage"
                              if not _admissible(problem, x + config.damping_min * dx)
                              else "line search failed to decrease the residual")
            break
        x, r, rnorm = xt, rt, rt_norm
        report.damping_history.append(lam)
        report.residual_history.append(rnorm)
        logger.debug("newton it %d: |r| = %.3e, step %.4g", it + 1, rnorm, lam)
    else:
        report.converged = rnorm <= tol
        if not report.converged:
            report.message = "maximum iterations reached"
    if rnorm <= tol:
        report.converged = True
    report.residual_norm = rnorm
    return x, report


def _newton_step(problem: EquilibriumProblem, x, r) -> np.ndarray:
    sysm = problem.jacobian(x)
    sysm.rhs = -r
    return solve_direct(sysm)


def newton_solve(spec: MixtureSpec, state0: SolutionState, space: P1Space, bc: BoundaryData,
                 config: NewtonConfig | None = None, sources: Sources | None = None,
                 means=None) -> tuple[SolutionState, SolveReport]:
    config = config or NewtonConfig()
    problem = EquilibriumProblem(spec, space, bc, sources, means)
    x, report = newton(problem, state0.to_vector(), config)
    return problem.state(x), report


def continuation_solve(spec: MixtureSpec, space: P1Space, bc_target: BoundaryData,
                       config: NewtonConfig | None = None, sources: Sources | None = None,
                       means=None, state0: SolutionState | None = None
                       ) -> tuple[SolutionState, SolveReport]:
    """Ramp the Dirichlet data in ``K`` equal steps, warm-starting each level.

    With ``config.auto_escalate`` a failed ramp is retried with 2, 4 and 8
    levels before :class:`SolverFailure` is raised.
    """
    config = config or NewtonConfig()
    schedule = [config.continuation_steps]
    if config.auto_escalate:
        schedule += [k for k in (2, 4, 8) if k > config.continuation_steps]
    last = None
    for K in schedule:
        try:
            return _ramp(spec, space, bc_target, config, sources, means, K, state0)
        except SolverFailure as exc:
            logger.info("continuation with %d level(s) failed: %s", K, exc)
            last = exc
    raise last


def _ramp(spec, space, bc_target, config, sources, means, K, state0):
    state = state0
    total = SolveReport(continuation_levels=K)
    prev = None
    for k in range(1, K + 1):
        bc = bc_target.scaled(bc_target.dirichlet_scale * k / K)
        problem = (EquilibriumProblem(spec, space, bc, sources, means)
                   if prev is None else prev.with_boundary(bc))
        if state is None:
            x0 = initial_guess(spec, space, bc, (problem.y_mean, problem.n_mean)).to_vector()
        elif prev is None:
            st = state.copy()
            st.phi[problem.dir_ids] = problem.dir_vals
            x0 = st.to_vector()
        else:
            x0 = _predict(prev, problem, state.to_vector())
        try:
            x, rep = newton(problem, x0, config)
        except (SolventDepletionError, ArithmeticError) as exc:
            raise SolverFailure(f"level {k}/{K}: {exc}", total, state) from exc
        total.iterations += rep.iterations
        total.damping_history += rep.damping_history
        total.residual_history += rep.residual_history
        total.residual_norm = rep.residual_norm
        total.message = rep.message
        state = problem.state(x)
        prev = problem
        if not rep.converged:
            total.converged = False
            raise SolverFailure(f"level {k}/{K}: {rep.message}", total, state)
    total.converged = True
    return state, total


def _predict(prev: EquilibriumProblem, nxt: EquilibriumProblem, x: np.ndarray) -> np.ndarray:
    """Tangent predictor: linearise the converged level in the boundary data.

    Only the Dirichlet rows depend on the ramp parameter, so the tangent solves
    ``J t = e`` with ``e`` the change of electrode values.  The step is halved
    until the guards hold; the plain boundary update is the fallback.
    """
    sysm = prev.jacobian(x)
    rhs = np.zeros(prev.size)
    pb = prev.block(prev.ni + 1).start
    rhs[pb + nxt.dir_ids] = nxt.dir_vals - prev.dir_vals
    sysm.rhs = rhs
    try:
        t = solve_direct(sysm)
    except SingularMatrixError:
        t = rhs
    lam = 1.0
    while lam >= 1.0 / 64:
        xt = x + lam * t
        xt[pb + nxt.dir_ids] = nxt.dir_vals
        if _admissible(nxt, xt):
            return xt
        lam *= 0.5
    xt = x.copy()
    xt[pb + nxt.dir_ids] = nxt.dir_vals
    return xt
