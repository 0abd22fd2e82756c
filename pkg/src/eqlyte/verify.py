"""Manufactured-solution convergence study on the unit square."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fem import P1Space, l2_error
from .mesh import square_mesh
from .model import BoundaryData, MixtureSpec, SpeciesSpec, Sources
from .solver import NewtonConfig, SolverFailure, initial_guess, newton_solve

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Reciprocal:
    """``u(x, y) = 1 / (c + x**a + y**b)`` with closed-form derivatives."""

    c: float
    a: int
    b: int

    def _s(self, p):
        x, y = p[..., 0], p[..., 1]
        return self.c + x ** self.a + y ** self.b, x, y

    def __call__(self, p):
        s, _, _ = self._s(p)
        return 1.0 / s

    def grad(self, p):
        s, x, y = self._s(p)
        sx, sy = self.a * x ** (self.a - 1), self.b * y ** (self.b - 1)
        return np.stack([-sx / s ** 2, -sy / s ** 2], axis=-1)

    def hessian(self, p):
        """(..., 2, 2) second derivatives."""
        s, x, y = self._s(p)
        a, b = self.a, self.b
        sx, sy = a * x ** (a - 1), b * y ** (b - 1)
        sxx, syy = a * (a - 1) * x ** (a - 2), b * (b - 1) * y ** (b - 2)
        uxx = -sxx / s ** 2 + 2 * sx * sx / s ** 3
        uyy = -syy / s ** 2 + 2 * sy * sy / s ** 3
        uxy = 2 * sx * sy / s ** 3
        return np.stack([np.stack([uxx, uxy], -1), np.stack([uxy, uyy], -1)], -2)

    def laplacian(self, p):
        H = self.hessian(p)
        return H[..., 0, 0] + H[..., 1, 1]


@dataclass
class MMSCase:
    spec: MixtureSpec
    y: tuple          # exact ion fractions (C, A)
    phi: Reciprocal
    n: Reciprocal

    # -- pointwise strong-form pieces --------------------------------------

    def fields(self, p):
        Y = np.stack([f(p) for f in self.y])
        GY = np.stack([f.grad(p) for f in self.y])
        LY = np.stack([f.laplacian(p) for f in self.y])
        return Y, GY, LY

    def ion_flux(self, a, p):
        Y, GY, _ = self.fields(p)
        s = self.spec
        yN = 1.0 - Y.sum(0)
        q = np.tensordot(s.z, Y, axes=(0, 0))
        Daa = -(1.0 / (s.M[a] * Y[a]) + 1.0 / yN)
        Dai = -1.0 / yN
        Dap = s.Psi * (1.0 / s.M[a] - 1.0) * q - s.Psi * s.z[a] / s.M[a]
        others = GY.sum(0) - GY[a]
        return Daa[..., None] * GY[a] + Dai[..., None] * others + Dap[..., None] * self.phi.grad(p)

    def ion_divergence(self, a, p):
        Y, GY, LY = self.fields(p)
        s = self.spec
        Ma, za = s.M[a], s.z[a]
        yN = 1.0 - Y.sum(0)
        q = np.tensordot(s.z, Y, axes=(0, 0))
        gS, lS = GY.sum(0), LY.sum(0)
        gq = np.tensordot(s.z, GY, axes=(0, 0))
        gphi, lphi = self.phi.grad(p), self.phi.laplacian(p)
        Daa = -(1.0 / (Ma * Y[a]) + 1.0 / yN)
        Dai = -1.0 / yN
        Dap = s.Psi * (1.0 / Ma - 1.0) * q - s.Psi * za / Ma
        gDaa = GY[a] / (Ma * Y[a] ** 2)[..., None] - gS / (yN ** 2)[..., None]
        gDai = -gS / (yN ** 2)[..., None]
        gDap = s.Psi * (1.0 / Ma - 1.0) * gq
        dot = lambda u, v: np.sum(u * v, axis=-1)
        go, lo = gS - GY[a], lS - LY[a]
        return (dot(gDaa, GY[a]) + Daa * LY[a] + dot(gDai, go) + Dai * lo
                + dot(gDap, gphi) + Dap * lphi)

    def density_flux(self, p):
        Y, _, _ = self.fields(p)
        q = np.tensordot(self.spec.z, Y, axes=(0, 0))
        kap = self.spec.Psi / self.spec.Khat
        return self.n.grad(p) + (kap * q * self.n(p))[..., None] * self.phi.grad(p)

    def density_divergence(self, p):
        Y, GY, _ = self.fields(p)
        s = self.spec
        kap = s.Psi / s.Khat
        q = np.tensordot(s.z, Y, axes=(0, 0))
        gq = np.tensordot(s.z, GY, axes=(0, 0))
        nv, gn = self.n(p), self.n.grad(p)
        gphi = self.phi.grad(p)
        return (self.n.laplacian(p)
                + kap * (np.sum((gq * nv[..., None] + q[..., None] * gn) * gphi, -1)
                         + q * nv * self.phi.laplacian(p)))

    def poisson_source(self, p):
        Y, _, _ = self.fields(p)
        s = self.spec
        q = np.tensordot(s.z, Y, axes=(0, 0))
        beta = s.Lambda / (s.Psi * s.eps_r)
        return -self.phi.laplacian(p) - beta * q * self.n(p)

    # -- discrete problem data ---------------------------------------------

    def sources(self) -> Sources:
        return Sources(
            ion=[(lambda p, a=a: -self.ion_divergence(a, p)) for a in range(len(self.y))],
            n=lambda p: -self.density_divergence(p),
            phi=self.poisson_source,
        )

    def boundary(self) -> BoundaryData:
        def normal_flux(fn):
            return lambda p, nrm: np.sum(fn(p) * nrm[:, None, :], axis=-1)

        return BoundaryData(
            phi_left=self.phi,
            phi_right=self.phi,
            ion_flux=[normal_flux(lambda p, a=a: self.ion_flux(a, p)) for a in range(len(self.y))],
            n_flux=normal_flux(self.density_flux),
            phi_flux=normal_flux(self.phi.grad),
        )

    def means(self, space: P1Space):
        vol = space.domain_measure()
        y0 = np.array([space.integrate(f(space.xq)) / vol for f in self.y])
        return y0, space.integrate(self.n(space.xq)) / vol


def reference_mms_case() -> MMSCase:
    spec = MixtureSpec(
        species=(SpeciesSpec("C", 1, 1.0, 0.3), SpeciesSpec("A", -1, 1.0, 0.3)),
        chi=1.0, Psi=1.0, Lambda=1000.0, Khat=1.0, n_avg=1.0,
    )
    return MMSCase(
        spec=spec,
        y=(Reciprocal(2.0, 4, 3), Reciprocal(3.0, 3, 2)),
        phi=Reciprocal(5.0, 2, 3),
        n=Reciprocal(1.0, 3, 3),
    )


# ---------------------------------------------------------------------------
# convergence bookkeeping

FIELDS = ("yC", "yA", "phi", "n")


def convergence_order(errors, meshes) -> list:
    """Observed orders ``log(e[j+1]/e[j]) / log(h[j+1]/h[j])``; None where undefined."""
    if len(errors) != len(meshes) or len(errors) < 2:
        raise ValueError("need two or more (error, h) pairs of equal length")
    out = []
    for (e0, e1), (h0, h1) in zip(zip(errors, errors[1:]), zip(meshes, meshes[1:])):
        if e0 <= 0 or e1 <= 0 or h0 <= 0 or h1 <= 0 or h0 == h1:
            out.append(None)
        else:
            out.append(math.log(e1 / e0) / math.log(h1 / h0))
    return out


@dataclass
class ConvergenceTable:
    h: list = field(default_factory=list)
    errors: dict = field(default_factory=lambda: {k: [] for k in FIELDS})
    reports: list = field(default_factory=list)

    def orders(self, name) -> list:
        if len(self.h) < 2:
            return []
        return convergence_order(self.errors[name], self.h)

    def rows(self):
        ords = {k: [None] + self.orders(k) for k in FIELDS}
        for j, h in enumerate(self.h):
            row = {"h": h}
            for k in FIELDS:
                row[f"err_{k}"] = self.errors[k][j]
                row[f"ord_{k}"] = ords[k][j] if j < len(ords[k]) else None
            yield row

    def columns(self):
        cols = ["h"]
        for k in FIELDS:
            cols += [f"err_{k}", f"ord_{k}"]
        return cols

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns())
            for row in self.rows():
                w.writerow(["" if row[c] is None else f"{row[c]:.17g}" for c in self.columns()])

    def to_text(self) -> str:
        head = f"{'h':>9} " + " ".join(f"{'err_' + k:>11} {'ord':>7}" for k in FIELDS)
        lines = [head]
        for row in self.rows():
            cells = [f"1/{round(1 / row['h']):<7d}"]
            for k in FIELDS:
                o = row[f"ord_{k}"]
                cells.append(f"{row[f'err_{k}']:11.4e} {'-' if o is None else f'{o:.4f}':>7}")
            lines.append(" ".join(cells))
        return "\n".join(lines)


def solve_mms(case: MMSCase, n: int, config: NewtonConfig | None = None, start=None):
    """Solve the manufactured problem on an ``n`` x ``n`` square mesh.

    ``start`` may be ``"exact"`` to begin Newton at the interpolant of the
    exact fields.  Returns (space, state, report).
    """
    space = P1Space(square_mesh(n, n))
    bc, src = case.boundary(), case.sources()
    means = case.means(space)
    if start == "exact":
        st0 = initial_guess(case.spec, space, bc, means)
        st0.y = np.stack([space.interpolate(f) for f in case.y])
        st0.n = space.interpolate(case.n)
        st0.phi = space.interpolate(case.phi)
    else:
        st0 = initial_guess(case.spec, space, bc, means)
    state, report = newton_solve(case.spec, st0, space, bc, config, sources=src, means=means)
    if not report.converged:
        raise SolverFailure(f"MMS solve failed at h=1/{n}: {report.message}", report, state)
    return space, state, report


def mms_errors(case: MMSCase, space: P1Space, state) -> dict:
    return {
        "yC": l2_error(space, state.y[0], case.y[0]),
        "yA": l2_error(space, state.y[1], case.y[1]),
        "phi": l2_error(space, state.phi, case.phi),
        "n": l2_error(space, state.n, case.n),
    }


def run_convergence_study(levels=(4, 8, 16, 32), case: MMSCase | None = None,
                          config: NewtonConfig | None = None) -> ConvergenceTable:
    """``levels`` are cells per side (h = 1/level), coarse to fine."""
    case = case or reference_mms_case()
    levels = sorted(int(k) for k in levels)
    table = ConvergenceTable()
    for k in levels:
        space, state, report = solve_mms(case, k, config)
        errs = mms_errors(case, space, state)
        table.h.append(1.0 / k)
        for name in FIELDS:
            table.errors[name].append(errs[name])
        table.reports.append(report)
        logger.info("MMS h=1/%d: %s (%d Newton its)", k, errs, report.iterations)
    return table
