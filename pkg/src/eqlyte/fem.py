"""P1 finite elements on simplices: basis, quadrature, assembly, direct solve."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh

logger = logging.getLogger(__name__)


class AssemblyError(RuntimeError):
    pass


class SingularMatrixError(RuntimeError):
    def __init__(self, msg, pivot=None):
        super().__init__(msg)
        self.pivot = pivot


# ---------------------------------------------------------------------------
# reference element


def reference_basis(dim: int, point) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric basis values and (constant) reference gradients.

    ``point`` holds reference coordinates (xi_1..xi_dim) in the unit simplex.
    Returns ``values`` of shape (dim+1,) and ``gradients`` of shape (dim+1, dim).
    """
    xi = np.asarray(point, dtype=float).reshape(dim)
    values = np.concatenate([[1.0 - xi.sum()], xi])
    grads = np.vstack([-np.ones(dim), np.eye(dim)])
    return values, grads


# ---------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class QuadratureRule:
    dim: int
    degree: int
    points: np.ndarray   # (nq, dim) reference coordinates
    weights: np.ndarray  # (nq,), sum = 1/dim!

    @property
    def barycentric(self) -> np.ndarray:
        return np.column_stack([1.0 - self.points.sum(axis=1), self.points])


def _sym_orbit3(a):
    """Points (a, a, 1-2a) of the reference triangle, all three placements."""
    b = 1.0 - 2.0 * a
    return [(a, a), (b, a), (a, b)]


def _build_rule(dim: int, degree: int) -> QuadratureRule:
    if dim == 1:
        if degree == 1:
            g, w = np.array([0.5]), np.array([1.0])
        elif degree == 2:
            s = 0.5 / math.sqrt(3.0)
            g, w = np.array([0.5 - s, 0.5 + s]), np.array([0.5, 0.5])
        else:
            s = 0.5 * math.sqrt(0.6)
            g, w = np.array([0.5 - s, 0.5, 0.5 + s]), np.array([5, 8, 5]) / 18.0
        return QuadratureRule(1, degree, g.reshape(-1, 1), w)
    if dim == 2:
        if degree == 1:
            return QuadratureRule(2, 1, np.array([[1 / 3, 1 / 3]]), np.array([0.5]))
        if degree == 2:
            pts = np.array(_sym_orbit3(1 / 6))
            return QuadratureRule(2, 2, pts, np.full(3, 1 / 6))
        # 6-point symmetric rule, exact to degree 4
        a1, w1 = 0.445948490915965, 0.223381589678011
        a2, w2 = 0.091576213509771, 0.109951743655322
        pts = np.array(_sym_orbit3(a1) + _sym_orbit3(a2))
        w = 0.5 * np.array([w1] * 3 + [w2] * 3)
        return QuadratureRule(2, 4, pts, w)
    if dim == 3:
        if degree == 1:
            return QuadratureRule(3, 1, np.full((1, 3), 0.25), np.array([1 / 6]))
        if degree == 2:
            a = 0.1381966011250105
            b = 1.0 - 3.0 * a
            bary = np.array([[b, a, a, a], [a, b, a, a], [a, a, b, a], [a, a, a, b]])
            return QuadratureRule(3, 2, bary[:, 1:], np.full(4, 1 / 24))
        # 14-point rule with positive weights, exact to degree 5
        bary, w = [], []
        for a, wt in ((0.3108859192633006, 0.1126879257180162),
                      (0.0927352503108912, 0.0734930431163619)):
            b = 1.0 - 3.0 * a
            for k in range(4):
                row = [a] * 4
                row[k] = b
                bary.append(row)
                w.append(wt)
        a = 0.0455037041256496
        b = 0.5 - a
        for i in range(4):
            for j in range(i + 1, 4):
                row = [a] * 4
                row[i] = row[j] = b
                bary.append(row)
                w.append(0.0425460207770812)
        bary = np.array(bary)
        return QuadratureRule(3, 4, bary[:, 1:], np.array(w) / 6.0)
    raise ValueError(f"unsupported dimension {dim}")


def quadrature(dim: int, degree: int) -> QuadratureRule:
    """Symmetric quadrature on the reference simplex, exact to ``degree``."""
    if dim not in (1, 2, 3) or degree not in (1, 2, 4):
        raise ValueError(f"no quadrature rule for dim={dim}, degree={degree}")
    return _build_rule(dim, degree)


# ---------------------------------------------------------------------------
# P1 space


class P1Space:
    """Continuous piecewise-linear functions on ``mesh``.

    Precomputes per-cell geometry, physical gradients and the CSR sparsity
    pattern; these are reused across every assembly on the same mesh.
    """

    def __init__(self, mesh: Mesh, degree: int = 4):
        self.mesh = mesh
        self.dim = mesh.dim
        self.rule = quadrature(mesh.dim, degree)
        cells = mesh.cells
        x = mesh.vertices[cells]                       # (nc, d+1, d)
        E = x[:, 1:, :] - x[:, :1, :]                  # rows = edges
        det = np.linalg.det(E)
        if np.any(det <= 0):
            bad = int(np.flatnonzero(det <= 0)[0])
            raise AssemblyError(f"cell {bad} has non-positive measure")
        _, gref = reference_basis(self.dim, np.zeros(self.dim))
        Einv = np.linalg.inv(E)
        self.grads = np.einsum("kj,cij->cki", gref, Einv)   # (nc, d+1, d)
        self.measure = det / math.factorial(self.dim)        # (nc,)
        self.phi = self.rule.barycentric                     # (nq, d+1)
        # quadrature weights scaled to physical cells, (nc, nq)
        self.wq = np.outer(det, self.rule.weights)
        self.xq = np.einsum("qk,ckd->cqd", self.phi, x)

    @property
    def ndofs(self) -> int:
        return self.mesh.num_vertices

    @property
    def cell_dofs(self) -> np.ndarray:
        return self.mesh.cells

    @cached_property
    def _pattern(self):
        c = self.mesh.cells
        nloc = c.shape[1]
        rows = np.repeat(c, nloc, axis=1).ravel()
        cols = np.tile(c, (1, nloc)).ravel()
        n = self.ndofs
        keys, inv = np.unique(rows * n + cols, return_inverse=True)
        r, col = keys // n, keys % n
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, r + 1, 1)
        return np.cumsum(indptr), col, inv.ravel()

    def interpolate(self, f) -> np.ndarray:
        """Nodal interpolant of ``f(x)`` where ``x`` has shape (n, dim)."""
        return np.asarray(f(self.mesh.vertices), dtype=float).reshape(self.ndofs)

    def at_quad(self, u: np.ndarray) -> np.ndarray:
        """Values of the P1 function ``u`` at the quadrature points, (nc, nq)."""
        return u[self.mesh.cells] @ self.phi.T

    def grad(self, u: np.ndarray) -> np.ndarray:
        """Cellwise constant gradient of ``u``, (nc, dim)."""
        return np.einsum("ck,ckd->cd", u[self.mesh.cells], self.grads)

    def integrate(self, values_q: np.ndarray) -> float:
        return float(np.sum(self.wq * values_q))

    @cached_property
    def mass_vector(self) -> np.ndarray:
        """Integral of each basis function (row of the mean-value constraint)."""
        loc = np.repeat(self.measure[:, None] / (self.dim + 1), self.dim + 1, axis=1)
        return np.bincount(self.mesh.cells.ravel(), loc.ravel(), minlength=self.ndofs)

    def domain_measure(self) -> float:
        return float(self.measure.sum())


# ---------------------------------------------------------------------------
# assembly


@dataclass
class ElementData:
    """Per-cell quantities handed to element kernels (batched over cells)."""

    grads: np.ndarray    # (nc, nloc, d) basis gradients
    phi: np.ndarray      # (nq, nloc) basis values at quadrature points
    wq: np.ndarray       # (nc, nq) physical quadrature weights
    xq: np.ndarray       # (nc, nq, d) physical quadrature points
    measure: np.ndarray  # (nc,)


def element_data(space: P1Space) -> ElementData:
    return ElementData(space.grads, space.phi, space.wq, space.xq, space.measure)


def _check_finite(local: np.ndarray, what: str):
    bad = ~np.isfinite(local.reshape(local.shape[0], -1)).all(axis=1)
    if bad.any():
        raise AssemblyError(f"non-finite {what} entry in cell {int(np.flatnonzero(bad)[0])}")


def assemble_matrix(space: P1Space, kernel) -> sp.csr_matrix:
    """Sum local matrices ``kernel(ElementData) -> (nc, nloc, nloc)`` into CSR."""
    local = np.asarray(kernel(element_data(space)), dtype=float)
    _check_finite(local, "matrix")
    indptr, indices, inv = space._pattern
    data = np.bincount(inv, local.ravel(), minlength=indices.size)
    n = space.ndofs
    return sp.csr_matrix((data, indices.copy(), indptr.copy()), shape=(n, n))


def assemble_vector(space: P1Space, kernel) -> np.ndarray:
    """Sum local vectors ``kernel(ElementData) -> (nc, nloc)`` into a global vector."""
    local = np.asarray(kernel(element_data(space)), dtype=float)
    _check_finite(local, "vector")
    return np.bincount(space.mesh.cells.ravel(), local.ravel(), minlength=space.ndofs)


def assemble(space: P1Space, kernel):
    """Generic assembly; ``kernel`` returns a local matrix, a local vector, or
    a ``(matrix, vector)`` pair, batched over cells."""
    out = kernel(element_data(space))
    if isinstance(out, tuple):
        A, b = out
        return assemble_matrix(space, lambda _: A), assemble_vector(space, lambda _: b)
    out = np.asarray(out)
    if out.ndim == 3:
        return assemble_matrix(space, lambda _: out)
    return assemble_vector(space, lambda _: out)


def laplace_kernel(ed: ElementData) -> np.ndarray:
    return np.einsum("c,cid,cjd->cij", ed.measure, ed.grads, ed.grads)


def mass_kernel(ed: ElementData) -> np.ndarray:
    return np.einsum("cq,qi,qj->cij", ed.wq, ed.phi, ed.phi)


def boundary_load(space: P1Space, facets: np.ndarray, g) -> np.ndarray:
    """Integral of ``g(x, normal)`` times each basis function over ``facets``.

    ``g`` receives quadrature points (nf, nq, d) and outward unit normals
    (nf, d) and returns values (nf, nq).
    """
    mesh = space.mesh
    out = np.zeros(space.ndofs)
    if len(facets) == 0:
        return out
    facets = np.asarray(facets)
    x = mesh.vertices[facets]                              # (nf, d, d)
    normals = _outward_normals(mesh, facets)
    if mesh.dim == 1:
        vals = np.asarray(g(x, normals), dtype=float).reshape(-1)
        np.add.at(out, facets[:, 0], vals)
        return out
    rule = quadrature(mesh.dim - 1, 4)
    phi = rule.barycentric                                 # (nq, d)
    xq = np.einsum("qk,fkd->fqd", phi, x)
    E = x[:, 1:, :] - x[:, :1, :]
    if mesh.dim == 2:
        jac = np.linalg.norm(E[:, 0], axis=1)
    else:
        jac = np.linalg.norm(np.cross(E[:, 0], E[:, 1]), axis=1)
    vals = np.asarray(g(xq, normals), dtype=float)         # (nf, nq)
    loc = np.einsum("fq,q,qk->fk", vals * jac[:, None], rule.weights, phi)
    np.add.at(out, facets.ravel(), loc.ravel())
    return out


def _outward_normals(mesh: Mesh, facets: np.ndarray) -> np.ndarray:
    """Outward unit normals of boundary facets, oriented via the owning cell."""
    owner = _facet_owner(mesh)
    x = mesh.vertices
    normals = np.zeros((len(facets), mesh.dim))
    for k, f in enumerate(facets):
        c = owner[tuple(sorted(f.tolist()))]
        opp = [v for v in mesh.cells[c] if v not in set(f.tolist())][0]
        p = x[f]
        if mesh.dim == 1:
            nrm = np.array([1.0])
        elif mesh.dim == 2:
            t = p[1] - p[0]
            nrm = np.array([t[1], -t[0]])
        else:
            nrm = np.cross(p[1] - p[0], p[2] - p[0])
        nrm = nrm / np.linalg.norm(nrm)
        if np.dot(nrm, p[0] - x[opp]) < 0:
            nrm = -nrm
        normals[k] = nrm
    return normals


_OWNER_CACHE: dict[int, dict] = {}


def _facet_owner(mesh: Mesh) -> dict:
    key = id(mesh)
    cached = _OWNER_CACHE.get(key)
    if cached is not None and cached[0] is mesh:
        return cached[1]
    owner = {}
    for cid, c in enumerate(mesh.cells.tolist()):
        for drop in range(len(c)):
            owner.setdefault(tuple(sorted(c[:drop] + c[drop + 1:])), cid)
    _OWNER_CACHE[key] = (mesh, owner)
    return owner


# ---------------------------------------------------------------------------
# bordered linear systems


@dataclass
class LinearSystem:
    """Sparse core block bordered by dense constraint rows and columns.

    The full matrix is ``[[core, border_cols], [border_rows, corner]]``.
    """

    core: sp.csr_matrix
    border_cols: np.ndarray   # (n, k)
    border_rows: np.ndarray   # (k, n)
    rhs: np.ndarray           # (n + k,)
    corner: np.ndarray | None = None

    @property
    def num_border(self) -> int:
        return self.border_rows.shape[0]

    def matrix(self) -> sp.csc_matrix:
        k = self.num_border
        if k == 0:
            return self.core.tocsc()
        corner = self.corner if self.corner is not None else np.zeros((k, k))
        return sp.bmat(
            [[self.core, sp.csr_matrix(self.border_cols)],
             [sp.csr_matrix(self.border_rows), sp.csr_matrix(corner)]],
            format="csc",
        )

    def dump_matrix_market(self, path) -> None:
        scipy.io.mmwrite(str(path), self.matrix())


def solve_direct(system: LinearSystem | sp.spmatrix, rhs=None) -> np.ndarray:
    """Sparse LU with partial (row) pivoting; verifies the backward error."""
    if isinstance(system, LinearSystem):
        A, b = system.matrix(), np.asarray(system.rhs, dtype=float)
    else:
        A, b = sp.csc_matrix(system), np.asarray(rhs, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
        raise ValueError(f"system shape {A.shape} incompatible with rhs {b.shape}")
    try:
        lu = spla.splu(A, permc_spec="COLAMD", diag_pivot_thresh=1.0)
    except RuntimeError as exc:
        raise SingularMatrixError(f"LU factorization failed: {exc}") from exc
    udiag = np.abs(lu.U.diagonal())
    tiny = udiag <= 1e-14 * max(udiag.max(initial=0.0), 1e-300)
    if tiny.any():
        piv = int(lu.perm_c[np.flatnonzero(tiny)[0]])
        raise SingularMatrixError(f"numerically singular matrix at pivot column {piv}", piv)
    x = lu.solve(b)
    r = A @ x - b
    anorm = abs(A).sum(axis=1).max()
    bound = 1e-10 * (anorm * np.abs(x).max(initial=0.0) + np.abs(b).max(initial=0.0))
    if np.abs(r).max(initial=0.0) > bound:
        # one step of iterative refinement before giving up
        x -= lu.solve(r)
        r = A @ x - b
        if np.abs(r).max(initial=0.0) > bound:
            logger.warning("direct solve residual %.3e exceeds bound %.3e",
                           np.abs(r).max(), bound)
    return x


# ---------------------------------------------------------------------------
# errors


def l2_error(space: P1Space, field: np.ndarray, exact) -> float:
    """L2 norm of ``field - exact`` with the degree-4 rule.

    ``exact`` maps points (..., dim) to values (...).
    """
    uq = space.at_quad(np.asarray(field, dtype=float))
    ex = np.asarray(exact(space.xq), dtype=float)
    return math.sqrt(max(space.integrate((uq - ex) ** 2), 0.0))
