"""Scenario drivers: compressible runs in 1D/2D/3D, the bulk-modulus sweep,
the annulus and the temperature sweep."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .fem import P1Space
from .io import write_gnuplot, write_table, write_vtk
from .mesh import Mesh, annulus_mesh, cube_mesh, interval_mesh, square_mesh
from .model import BoundaryData, MixtureSpec, SolutionState, pressure_recover
from .solver import NewtonConfig, SolveReport, SolverFailure, continuation_solve

logger = logging.getLogger(__name__)

DEFAULT_CELLS = {1: 128, 2: 64, 3: 16}
SWEEP_CELLS_1D = 512


@dataclass
class CrossSection:
    s: np.ndarray              # arc length from the start point
    points: np.ndarray         # (k, dim)
    values: dict               # field name -> (k,)


@dataclass
class StudyResult:
    spec: MixtureSpec
    space: P1Space
    state: SolutionState
    report: SolveReport
    section: CrossSection | None = None
    extra: dict = field(default_factory=dict)

    @property
    def mesh(self) -> Mesh:
        return self.space.mesh


def field_values(spec: MixtureSpec, state: SolutionState) -> dict:
    out = {f"y_{s.name}": state.y[a] for a, s in enumerate(spec.species)}
    out["n"] = state.n
    out["phi"] = state.phi
    out["p_hat"] = pressure_recover(spec, state)
    return out


# ---------------------------------------------------------------------------
# P1 point evaluation


def locate(mesh: Mesh, points: np.ndarray, tol: float = 1e-10):
    """Containing cell and barycentric coordinates for each point."""
    x = mesh.vertices[mesh.cells]                       # (nc, d+1, d)
    Einv = np.linalg.inv(x[:, 1:, :] - x[:, :1, :])     # (nc, d, d)
    cells, bary = np.empty(len(points), dtype=np.int64), np.empty((len(points), mesh.dim + 1))
    for k, p in enumerate(np.atleast_2d(points)):
        lam = np.einsum("cd,cde->ce", p - x[:, 0, :], Einv)
        full = np.column_stack([1.0 - lam.sum(1), lam])
        score = full.min(axis=1)
        c = int(np.argmax(score))
        if score[c] < -tol:
            raise ValueError(f"point {p} lies outside the mesh")
        cells[k], bary[k] = c, np.clip(full[c], 0.0, 1.0)
    return cells, bary


def cross_section(space: P1Space, fields: dict, start, end, num: int = 201) -> CrossSection:
    start, end = np.asarray(start, float), np.asarray(end, float)
    t = np.linspace(0.0, 1.0, num)
    pts = start + t[:, None] * (end - start)
    cells, bary = locate(space.mesh, pts)
    vids = space.mesh.cells[cells]
    vals = {k: np.einsum("kj,kj->k", np.asarray(v)[vids], bary) for k, v in fields.items()}
    return CrossSection(t * np.linalg.norm(end - start), pts, vals)


# ---------------------------------------------------------------------------
# export


def export_fields(result: StudyResult, path, stem: str = "fields") -> list:
    """Write ``<stem>.vtk``, ``<stem>_nodes.csv`` and the cross-section files."""
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        fields = field_values(result.spec, result.state)
        written = [write_vtk(path / f"{stem}.vtk", result.mesh, fields)]
        cols = {f"x{i}": result.mesh.vertices[:, i] for i in range(result.mesh.dim)}
        cols.update(fields)
        written.append(write_table(path / f"{stem}_nodes.csv", cols))
        if result.section is not None:
            sec = {"s": result.section.s}
            sec.update({f"x{i}": result.section.points[:, i] for i in range(result.mesh.dim)})
            sec.update(result.section.values)
            written.append(write_table(path / f"{stem}_section.csv", sec))
            written.append(write_gnuplot(path / f"{stem}_section.dat", sec))
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc
    return written


# ---------------------------------------------------------------------------
# drivers


def _mesh_for(dim: int, cells: int) -> Mesh:
    if dim == 1:
        return interval_mesh(cells)
    if dim == 2:
        return square_mesh(cells, cells)
    if dim == 3:
        mesh = cube_mesh(cells, cells, cells)
        if not (mesh.facets_with("GammaDL").size and mesh.facets_with("GammaDR").size):
            raise ValueError(f"{cells}^3 cube mesh is too coarse to resolve the corner electrodes")
        return mesh
    raise ValueError(f"dim must be 1, 2 or 3, got {dim}")


def _section_line(dim: int):
    if dim == 1:
        return [0.0], [1.0]
    if dim == 2:
        return [0.0, 0.5], [1.0, 0.5]
    return [0.0, 0.0, 0.0], [1.0, 1.0, 1.0]


def solve_on(spec: MixtureSpec, space: P1Space, bc: BoundaryData,
             config: NewtonConfig | None = None) -> tuple[SolutionState, SolveReport]:
    return continuation_solve(spec, space, bc, config)


def run_compressible(dim: int = 1, cells: int | None = None, voltage: float = 1.0,
                     spec: MixtureSpec | None = None, config: NewtonConfig | None = None,
                     out=None) -> StudyResult:
    """Electrodes at -voltage (GammaDL) and +voltage (GammaDR) on [0,1]^dim."""
    spec = spec or MixtureSpec.baseline()
    cells = cells or DEFAULT_CELLS[dim]
    space = P1Space(_mesh_for(dim, cells))
    state, report = solve_on(spec, space, BoundaryData(-voltage, voltage), config)
    a, b = _section_line(dim)
    section = cross_section(space, field_values(spec, state), a, b)
    result = StudyResult(spec, space, state, report, section)
    if out is not None:
        export_fields(result, out, f"compressible_{dim}d")
    return result


def run_khat_sweep(values=(0.1, 1.0, 10.0, 100.0, 1000.0), dim: int = 1, cells: int | None = None,
                   spec: MixtureSpec | None = None, config: NewtonConfig | None = None,
                   out=None) -> list:
    """Max |n - n0| and the pressure range per bulk modulus.

    A failing member is recorded with ``converged=False``; the sweep continues.
    """
    base = spec or MixtureSpec.baseline()
    cells = cells or (SWEEP_CELLS_1D if dim == 1 else DEFAULT_CELLS[dim])
    space = P1Space(_mesh_for(dim, cells))
    rows = []
    for K in values:
        if not K > 0:
            raise ValueError(f"bulk modulus values must be positive, got {K}")
        s = replace(base, Khat=float(K))
        try:
            state, report = solve_on(s, space, BoundaryData(-1.0, 1.0), config)
        except SolverFailure as exc:
            logger.warning("Khat=%g failed: %s", K, exc)
            rows.append(dict(Khat=float(K), max_dev=np.nan, p_min=np.nan, p_max=np.nan,
                             converged=False, report=exc.report))
            continue
        p = pressure_recover(s, state)
        rows.append(dict(Khat=float(K), max_dev=float(np.abs(state.n - s.n_avg).max()),
                         p_min=float(p.min()), p_max=float(p.max()), converged=True,
                         report=report, state=state))
        if out is not None:
            export_fields(StudyResult(s, space, state, report,
                                      cross_section(space, field_values(s, state), *_section_line(dim))),
                          out, f"khat_{K:g}")
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        write_table(Path(out) / "khat_sweep.csv",
                    {k: [r[k] for r in rows] for k in ("Khat", "max_dev", "p_min", "p_max")})
    return rows


def ring_statistics(state: SolutionState, n_radial: int, n_angular: int) -> dict:
    """Per-ring standard deviation relative to the ring mean, for each field."""
    out = {}
    for name, f in (("yC", state.y[0]), ("yA", state.y[1]), ("n", state.n), ("phi", state.phi)):
        rings = f.reshape(n_radial + 1, n_angular)
        mean = np.abs(rings.mean(axis=1))
        out[name] = rings.std(axis=1) / np.maximum(mean, 1e-300)
    return out


def asymmetry(section: CrossSection, n_avg: float) -> float:
    n = section.values["n"]
    return float(abs(n[0] - n_avg) / abs(n[-1] - n_avg))


def run_annulus(r_in: float = 1.0, r_out: float = 2.0, n_radial: int = 32, n_angular: int = 128,
                spec: MixtureSpec | None = None, config: NewtonConfig | None = None,
                out=None) -> StudyResult:
    """phi = -1 on the inner circle and +1 on the outer circle."""
    spec = spec or MixtureSpec.baseline()
    space = P1Space(annulus_mesh(r_in, r_out, n_radial, n_angular))
    state, report = solve_on(spec, space, BoundaryData(-1.0, 1.0), config)
    section = cross_section(space, field_values(spec, state), [r_in, 0.0], [r_out, 0.0],
                            num=n_radial + 1)
    result = StudyResult(spec, space, state, report, section)
    result.extra["asymmetry"] = asymmetry(section, spec.n_avg)
    result.extra["ring_std"] = ring_statistics(state, n_radial, n_angular)
    if out is not None:
        export_fields(result, out, f"annulus_rin{r_in:g}")
    return result


def run_temperature_sweep(tau_values=(0.5, 1.0, 2.0, 4.0), dim: int = 1, cells: int | None = None,
                          spec: MixtureSpec | None = None, config: NewtonConfig | None = None,
                          out=None) -> list:
    """Solve with (Psi, Lambda, Khat) divided by each temperature factor."""
    base = spec or MixtureSpec.baseline()
    results = []
    sections = {}
    for tau in tau_values:
        s = base.with_temperature_scale(float(tau))
        res = run_compressible(dim, cells, 1.0, s, config)
        res.extra["tau"] = float(tau)
        results.append(res)
        sections[tau] = res.section
        if out is not None:
            export_fields(res, out, f"temperature_{tau:g}")
    if out is not None:
        cols = {"s": results[0].section.s}
        for tau, sec in sections.items():
            for k, v in sec.values.items():
                cols[f"{k}_tau{tau:g}"] = v
        write_gnuplot(Path(out) / "temperature_sections.dat", cols)
    return results
