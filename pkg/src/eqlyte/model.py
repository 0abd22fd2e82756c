"""Dimensionless equilibrium electrolyte model.

Unknowns are the ion atomic fractions ``y_1..y_{N-1}``, the total number
density ``n`` and the electric potential ``phi`` (all P1), plus one Lagrange
multiplier per mean-value constraint.  The solvent fraction ``y_N`` is never a
degree of freedom; it is recovered as ``1 - sum(y)``.

Equations, in weak form with test functions ``v``::

    ion a   : int J_a . grad v  - int_dOmega g_a v + c_a int v = int f_a v
    density : int F . grad v    - int_dOmega g_n v + c_n int v = int f_n v
    Poisson : int grad phi . grad v - int_GammaN g_phi v
              - (Lambda / (Psi eps_r)) int q n v = int f_phi v
    means   : int y_a = y_a^0 |Omega|,  int n = n^0 |Omega|

with ``J_a = D_aa grad y_a + sum_{i!=a} D_ai grad y_i + D_aphi grad phi``,
``F = grad n + (Psi/Khat) q n grad phi`` and free charge ``q = sum z_a y_a``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .fem import LinearSystem, P1Space, assemble_vector, boundary_load
from .mesh import BoundaryTag

GUARD = 1e-12


class SolventDepletionError(ArithmeticError):
    """A fraction (or the derived solvent fraction) left its admissible range."""

    def __init__(self, msg, location=None):
        super().__init__(msg)
        self.location = location


# ---------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class SpeciesSpec:
    name: str
    z: int
    M: float
    y_avg: float

    def __post_init__(self):
        if not self.M > 0:
            raise ValueError(f"species {self.name}: mass ratio must be positive")
        if not 0 < self.y_avg < 1:
            raise ValueError(f"species {self.name}: mean fraction must lie in (0, 1)")


@dataclass(frozen=True)
class MixtureSpec:
    """Ionic species (solvent implicit, z_N = 0), dielectric data and the
    dimensionless groups Psi, Lambda, Khat."""

    species: tuple
    chi: float = 1.0
    Psi: float = 1.0
    Lambda: float = 1000.0
    Khat: float = 1.0
    n_avg: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "species", tuple(self.species))
        if sum(s.y_avg for s in self.species) >= 1:
            raise ValueError("mean ion fractions must sum to less than 1")
        if self.chi < 0:
            raise ValueError("chi must be non-negative")
        for name in ("Psi", "Lambda", "Khat", "n_avg"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and positive, got {v}")

    @property
    def eps_r(self) -> float:
        return 1.0 + self.chi

    @property
    def num_ions(self) -> int:
        return len(self.species)

    @property
    def z(self) -> np.ndarray:
        return np.array([s.z for s in self.species], dtype=float)

    @property
    def M(self) -> np.ndarray:
        return np.array([s.M for s in self.species], dtype=float)

    @property
    def y_avg(self) -> np.ndarray:
        return np.array([s.y_avg for s in self.species], dtype=float)

    def with_temperature_scale(self, tau: float) -> "MixtureSpec":
        """Scale temperature by ``tau``: every group is inversely proportional to T."""
        if not tau > 0:
            raise ValueError("temperature scale must be positive")
        return replace(self, Psi=self.Psi / tau, Lambda=self.Lambda / tau, Khat=self.Khat / tau)

    @classmethod
    def baseline(cls, **overrides) -> "MixtureSpec":
        """Symmetric 1:1 electrolyte used for the compressible studies."""
        base = dict(
            species=(SpeciesSpec("C", 1, 0.1, 0.4), SpeciesSpec("A", -1, 0.1, 0.4)),
            chi=1.0, Psi=1.0, Lambda=1000.0, Khat=1.0, n_avg=1.0,
        )
        base.update(overrides)
        return cls(**base)


@dataclass(frozen=True)
class PhysicalScales:
    T: float
    phi_BC: float
    n0: float
    x0: float
    K: float
    e0: float = 1.602176634e-19
    kB: float = 1.380649e-23
    eps0: float = 8.8541878128e-12


def nondimensionalize(scales: PhysicalScales) -> tuple[float, float, float]:
    """Return (Psi, Lambda, Khat) for the given physical scales."""
    for name in ("T", "phi_BC", "n0", "x0", "K", "e0", "kB", "eps0"):
        if not getattr(scales, name) > 0:
            raise ValueError(f"{name} must be positive")
    kT = scales.kB * scales.T
    Psi = scales.e0 * scales.phi_BC / kT
    Lambda = scales.e0 ** 2 * scales.n0 * scales.x0 ** 2 / (scales.eps0 * kT)
    Khat = scales.K / (scales.n0 * kT)
    return Psi, Lambda, Khat


# ---------------------------------------------------------------------------
# pointwise constitutive functions


@dataclass
class DiffCoeffs:
    D_aa: np.ndarray
    D_ai: np.ndarray
    D_aphi: np.ndarray


def solvent_fraction(y: np.ndarray) -> np.ndarray:
    return 1.0 - np.sum(y, axis=0)


def check_admissible(y: np.ndarray, where=None, guard: float = GUARD):
    """Raise :class:`SolventDepletionError` unless guard < y_a and guard < y_N."""
    y = np.asarray(y, dtype=float)
    yN = solvent_fraction(y)
    bad_ion = (y <= guard) | (y >= 1 - guard) | ~np.isfinite(y)
    bad_sol = (yN <= guard) | ~np.isfinite(yN)
    if bad_ion.any() or bad_sol.any():
        flat = np.flatnonzero(bad_sol.ravel() | bad_ion.any(axis=0).ravel())
        idx = int(flat[0]) if flat.size else None
        loc = None
        if where is not None and idx is not None:
            loc = np.asarray(where).reshape(-1, np.asarray(where).shape[-1])[idx]
        raise SolventDepletionError(f"solvent depletion at point {idx} (x={loc})", loc)


def diff_coeffs(spec: MixtureSpec, alpha: int, y) -> DiffCoeffs:
    """Nonlinear flux coefficients of ion ``alpha`` at fractions ``y``.

    ``y`` has leading axis over the N-1 ions; any trailing shape is kept.
    """
    y = np.asarray(y, dtype=float)
    check_admissible(y)
    yN = solvent_fraction(y)
    Ma, za = spec.M[alpha], spec.z[alpha]
    q = np.tensordot(spec.z, y, axes=(0, 0))
    return DiffCoeffs(
        D_aa=-(1.0 / (Ma * y[alpha]) + 1.0 / yN),
        D_ai=-1.0 / yN,
        D_aphi=spec.Psi * (1.0 / Ma - 1.0) * q - spec.Psi * za / Ma,
    )


def flux(spec: MixtureSpec, alpha: int, grad_y, grad_phi, y) -> np.ndarray:
    """Diffusion flux of ion ``alpha``.

    ``grad_y`` is (N-1, ..., d), ``grad_phi`` (..., d), ``y`` (N-1, ...).
    """
    grad_y = np.asarray(grad_y, dtype=float)
    grad_phi = np.asarray(grad_phi, dtype=float)
    D = diff_coeffs(spec, alpha, y)
    others = np.sum(grad_y, axis=0) - grad_y[alpha]
    return (D.D_aa[..., None] * grad_y[alpha]
            + np.asarray(D.D_ai)[..., None] * others
            + np.asarray(D.D_aphi)[..., None] * grad_phi)


def free_charge(spec: MixtureSpec, y, n):
    return np.tensordot(spec.z, np.asarray(y, dtype=float), axes=(0, 0)) * n


def density_flux(spec: MixtureSpec, y, n, grad_n, grad_phi):
    """``grad n + (Psi/Khat) q n grad phi``."""
    q = np.tensordot(spec.z, np.asarray(y, dtype=float), axes=(0, 0))
    return np.asarray(grad_n) + (spec.Psi / spec.Khat * q * n)[..., None] * np.asarray(grad_phi)


def pressure_recover(spec: MixtureSpec, state: "SolutionState") -> np.ndarray:
    """Dimensionless pressure ``Khat (n - 1)`` relative to the reference state."""
    return spec.Khat * (np.asarray(state.n) - 1.0)


# ---------------------------------------------------------------------------
# state and boundary data


@dataclass
class SolutionState:
    y: np.ndarray        # (N-1, nv)
    n: np.ndarray        # (nv,)
    phi: np.ndarray      # (nv,)
    c: np.ndarray        # (N-1,)
    c_n: float = 0.0

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.y.ravel(), self.n, self.phi, self.c, [self.c_n]])

    @classmethod
    def from_vector(cls, x: np.ndarray, num_ions: int, nv: int) -> "SolutionState":
        x = np.asarray(x, dtype=float)
        k = num_ions * nv
        return cls(
            y=x[:k].reshape(num_ions, nv).copy(),
            n=x[k:k + nv].copy(),
            phi=x[k + nv:k + 2 * nv].copy(),
            c=x[k + 2 * nv:k + 2 * nv + num_ions].copy(),
            c_n=float(x[-1]),
        )

    def copy(self) -> "SolutionState":
        return SolutionState(self.y.copy(), self.n.copy(), self.phi.copy(), self.c.copy(), self.c_n)

    @property
    def y_solvent(self) -> np.ndarray:
        return solvent_fraction(self.y)


Value = float | Callable[[np.ndarray], np.ndarray]
FluxData = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass
class BoundaryData:
    """Dirichlet data for phi on the electrodes plus optional Neumann data.

    Neumann callables take (points, outward normals) and return the prescribed
    normal flux: ``ion_flux[a]`` and ``n_flux`` act on the whole boundary,
    ``phi_flux`` on GammaN only.  ``None`` means zero flux.
    """

    phi_left: Value = -1.0
    phi_right: Value = 1.0
    ion_flux: Sequence[FluxData] | None = None
    n_flux: FluxData | None = None
    phi_flux: FluxData | None = None
    dirichlet_scale: float = 1.0

    def scaled(self, factor: float) -> "BoundaryData":
        return replace(self, dirichlet_scale=factor)

    def dirichlet_values(self, mesh) -> tuple[np.ndarray, np.ndarray]:
        """Dirichlet node ids and values (GammaDR wins at shared vertices)."""
        ids, vals = [], []
        for tag, g in ((BoundaryTag.GammaDL, self.phi_left), (BoundaryTag.GammaDR, self.phi_right)):
            v = mesh.vertices_with(tag)
            if v.size == 0:
                continue
            x = mesh.vertices[v]
            val = np.asarray(g(x), dtype=float) if callable(g) else np.full(v.size, float(g))
            ids.append(v)
            vals.append(self.dirichlet_scale * val.reshape(v.size))
        if not ids:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        ids, vals = np.concatenate(ids), np.concatenate(vals)
        order = {}
        for i, v in zip(ids.tolist(), vals.tolist()):
            order[i] = v
        keys = np.array(sorted(order), dtype=np.int64)
        return keys, np.array([order[k] for k in keys])


@dataclass
class Sources:
    """Volumetric forcing, ``f(points) -> values``; used for manufactured solutions."""

    ion: Sequence[Callable] | None = None
    n: Callable | None = None
    phi: Callable | None = None


# ---------------------------------------------------------------------------
# discrete problem


class EquilibriumProblem:
    """Residual and Jacobian of the discrete constrained system on one mesh.

    Dof layout: ``[y_1, ..., y_{N-1}, n, phi]`` nodal blocks followed by the
    multipliers ``c_1..c_{N-1}, c_n``.
    """

    def __init__(self, spec: MixtureSpec, space: P1Space, bc: BoundaryData,
                 sources: Sources | None = None, means=None):
        self.spec = spec
        self.space = space
        self.bc = bc
        self.sources = sources or Sources()
        self.ni = spec.num_ions
        self.nv = space.ndofs
        self.nb = self.ni + 2
        self.nfield = self.nb * self.nv
        self.size = self.nfield + self.ni + 1
        self.m = space.mass_vector
        self.volume = space.domain_measure()
        if means is None:
            means = (spec.y_avg, spec.n_avg)
        self.y_mean = np.asarray(means[0], dtype=float)
        self.n_mean = float(means[1])
        self.dir_ids, self.dir_vals = bc.dirichlet_values(space.mesh)
        self._loads = self._fixed_loads()
        self._pattern = self._block_pattern()

    def with_boundary(self, bc: BoundaryData) -> "EquilibriumProblem":
        """Same problem with new Dirichlet data; reuses loads and sparsity.

        Only the electrode values may differ from the current ``bc``.
        """
        other = object.__new__(EquilibriumProblem)
        other.__dict__.update(self.__dict__)
        other.bc = bc
        other.dir_ids, other.dir_vals = bc.dirichlet_values(self.space.mesh)
        return other

    # -- helpers ----------------------------------------------------------

    def state(self, x) -> SolutionState:
        return SolutionState.from_vector(x, self.ni, self.nv)

    def block(self, b: int) -> slice:
        return slice(b * self.nv, (b + 1) * self.nv)

    def _fixed_loads(self) -> np.ndarray:
        """Source and Neumann contributions, collected on the residual's RHS."""
        sp_ = self.space
        mesh = sp_.mesh
        load = np.zeros(self.nfield)
        src = self.sources

        def vol(f):
            return assemble_vector(sp_, lambda ed: np.einsum(
                "cq,cq,qk->ck", ed.wq, np.asarray(f(ed.xq), dtype=float), ed.phi))

        all_facets = mesh.bfacets
        neu = mesh.facets_with(BoundaryTag.GammaN)
        for a in range(self.ni):
            s = self.block(a)
            if src.ion is not None and src.ion[a] is not None:
                load[s] += vol(src.ion[a])
            if self.bc.ion_flux is not None and self.bc.ion_flux[a] is not None:
                load[s] += boundary_load(sp_, all_facets, self.bc.ion_flux[a])
        s = self.block(self.ni)
        if src.n is not None:
            load[s] += vol(src.n)
        if self.bc.n_flux is not None:
            load[s] += boundary_load(sp_, all_facets, self.bc.n_flux)
        s = self.block(self.ni + 1)
        if src.phi is not None:
            load[s] += vol(src.phi)
        if self.bc.phi_flux is not None:
            load[s] += boundary_load(sp_, neu, self.bc.phi_flux)
        return load

    def _block_pattern(self):
        cells = self.space.mesh.cells
        nloc = cells.shape[1]
        r = np.repeat(cells, nloc, axis=1).ravel()
        c = np.tile(cells, (1, nloc)).ravel()
        N = self.nfield
        keys = []
        for I in range(self.nb):
            for J in range(self.nb):
                keys.append((I * self.nv + r) * N + (J * self.nv + c))
        keys = np.concatenate(keys)
        uniq, inv = np.unique(keys, return_inverse=True)
        rows, cols = uniq // N, uniq % N
        indptr = np.zeros(N + 1, dtype=np.int64)
        np.add.at(indptr, rows + 1, 1)
        indptr = np.cumsum(indptr)
        # position of each diagonal entry inside the data array
        diag = np.flatnonzero(rows == cols)
        return indptr, cols, inv.ravel(), diag

    def _quad_fields(self, st: SolutionState):
        sp_ = self.space
        check_admissible(st.y, where=sp_.mesh.vertices)
        if np.any(st.n <= 0) or not np.all(np.isfinite(st.n)):
            bad = int(np.flatnonzero(~(st.n > 0))[0])
            raise SolventDepletionError(
                f"non-positive number density at node {bad}", sp_.mesh.vertices[bad])
        Y = np.stack([sp_.at_quad(ya) for ya in st.y])          # (ni, nc, nq)
        GY = np.stack([sp_.grad(ya) for ya in st.y])            # (ni, nc, d)
        return Y, GY, sp_.at_quad(st.n), sp_.grad(st.n), sp_.grad(st.phi)

    # -- residual ---------------------------------------------------------

    def residual(self, x) -> np.ndarray:
        st = self.state(x)
        spec, sp_ = self.spec, self.space
        cells, G, wq, phi_q = sp_.mesh.cells, sp_.grads, sp_.wq, sp_.phi
        Y, GY, Nq, gn, gphi = self._quad_fields(st)
        yN = 1.0 - Y.sum(axis=0)
        z, M = spec.z, spec.M
        q = np.tensordot(z, Y, axes=(0, 0))
        gsum = GY.sum(axis=0)
        R = np.empty(self.size)

        def scatter(local):
            return np.bincount(cells.ravel(), local.ravel(), minlength=self.nv)

        for a in range(self.ni):
            D = diff_coeffs(spec, a, Y)
            # J = D_aa grad y_a + D_ai (sum_{i!=a} grad y_i) + D_aphi grad phi
            J = (D.D_aa[..., None] * GY[a][:, None, :]
                 + D.D_ai[..., None] * (gsum - GY[a])[:, None, :]
                 + D.D_aphi[..., None] * gphi[:, None, :])
            loc = np.einsum("cq,cqd,ckd->ck", wq, J, G)
            R[self.block(a)] = scatter(loc) + st.c[a] * self.m
        kap = spec.Psi / spec.Khat
        F = gn[:, None, :] + (kap * q * Nq)[..., None] * gphi[:, None, :]
        R[self.block(self.ni)] = scatter(np.einsum("cq,cqd,ckd->ck", wq, F, G)) + st.c_n * self.m
        beta = spec.Lambda / (spec.Psi * spec.eps_r)
        stiff = np.einsum("c,cd,ckd->ck", sp_.measure, gphi, G)
        charge = np.einsum("cq,cq,qk->ck", wq, q * Nq, phi_q)
        R[self.block(self.ni + 1)] = scatter(stiff - beta * charge)
        R[:self.nfield] -= self._loads
        pb = self.block(self.ni + 1).start
        R[pb + self.dir_ids] = st.phi[self.dir_ids] - self.dir_vals
        for a in range(self.ni):
            R[self.nfield + a] = self.m @ st.y[a] - self.y_mean[a] * self.volume
        R[-1] = self.m @ st.n - self.n_mean * self.volume
        if not np.all(np.isfinite(R)):
            bad = int(np.flatnonzero(~np.isfinite(R))[0])
            raise ArithmeticError(f"non-finite residual entry {bad}")
        return R

    # -- Jacobian ---------------------------------------------------------

    def jacobian(self, x) -> LinearSystem:
        st = self.state(x)
        spec, sp_ = self.spec, self.space
        G, wq, phi_q = sp_.grads, sp_.wq, sp_.phi
        Y, GY, Nq, gn, gphi = self._quad_fields(st)
        ni, nb = self.ni, self.nb
        yN = 1.0 - Y.sum(axis=0)
        z, M, Psi = spec.z, spec.M, spec.Psi
        q = np.tensordot(z, Y, axes=(0, 0))
        gsum = GY.sum(axis=0)
        K = np.einsum("cid,cjd->cij", G, G)                   # grad psi_i . grad psi_j
        nc, nloc = K.shape[0], K.shape[1]
        blocks = [[None] * nb for _ in range(nb)]

        def diffusion(coef_q):       # int coef grad psi_j . grad psi_i
            return np.einsum("cq,cq->c", wq, coef_q)[:, None, None] * K

        def advection(vec_q):        # int psi_j (vec . grad psi_i)
            t = np.einsum("cqd,cid->cqi", wq[..., None] * vec_q, G)
            return np.matmul(t.transpose(0, 2, 1), phi_q)

        def reaction(coef_q):        # int coef psi_j psi_i
            return np.matmul((wq * coef_q)[:, None, :] * phi_q.T[None], phi_q)

        for a in range(ni):
            D = diff_coeffs(spec, a, Y)
            inv_yN2 = 1.0 / yN ** 2
            base = -inv_yN2[..., None] * gsum[:, None, :]
            for g in range(ni):
                coef = D.D_aa if g == a else D.D_ai
                T = base + (Psi * (1.0 / M[a] - 1.0) * z[g]) * gphi[:, None, :]
                if g == a:
                    T = T + (1.0 / (M[a] * Y[a] ** 2))[..., None] * GY[a][:, None, :]
                blocks[a][g] = diffusion(coef) + advection(T)
            blocks[a][ni + 1] = diffusion(D.D_aphi)
        kap = Psi / spec.Khat
        for g in range(ni):
            blocks[ni][g] = advection((kap * z[g] * Nq)[..., None] * gphi[:, None, :])
        blocks[ni][ni] = diffusion(np.ones_like(Nq)) + advection((kap * q)[..., None] * gphi[:, None, :])
        blocks[ni][ni + 1] = diffusion(kap * q * Nq)
        beta = spec.Lambda / (Psi * spec.eps_r)
        for g in range(ni):
            blocks[ni + 1][g] = -beta * reaction(z[g] * Nq)
        blocks[ni + 1][ni] = -beta * reaction(q)
        blocks[ni + 1][ni + 1] = sp_.measure[:, None, None] * K

        zero = np.zeros((nc, nloc, nloc))
        vals = np.concatenate([(blocks[I][J] if blocks[I][J] is not None else zero).ravel()
                               for I in range(nb) for J in range(nb)])
        indptr, indices, inv, diag = self._pattern
        data = np.bincount(inv, vals, minlength=indices.size)
        pb = (ni + 1) * self.nv
        for r in pb + self.dir_ids:
            data[indptr[r]:indptr[r + 1]] = 0.0
        dpos = diag[pb + self.dir_ids]
        data[dpos] = 1.0
        core = sp.csr_matrix((data, indices, indptr), shape=(self.nfield, self.nfield))

        k = ni + 1
        border_cols = np.zeros((self.nfield, k))
        border_rows = np.zeros((k, self.nfield))
        for a in range(ni):
            border_cols[self.block(a), a] = self.m
            border_rows[a, self.block(a)] = self.m
        border_cols[self.block(ni), ni] = self.m
        border_rows[ni, self.block(ni)] = self.m
        return LinearSystem(core, border_cols, border_rows, np.zeros(self.size))


def residual(spec, state: SolutionState, space: P1Space, bc: BoundaryData,
             sources: Sources | None = None) -> np.ndarray:
    return EquilibriumProblem(spec, space, bc, sources).residual(state.to_vector())


def jacobian(spec, state: SolutionState, space: P1Space, bc: BoundaryData,
             sources: Sources | None = None) -> LinearSystem:
    return EquilibriumProblem(spec, space, bc, sources).jacobian(state.to_vector())
