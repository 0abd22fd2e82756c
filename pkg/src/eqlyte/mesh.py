"""Structured simplicial meshes with tagged boundary facets.

All generators return an immutable :class:`Mesh`.  Boundary facets carry one
of three tags: ``GammaDL`` (electrode held at the negative potential),
``GammaDR`` (electrode at the positive potential) and ``GammaN`` (insulating).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np


class BoundaryTag(str, Enum):
    GammaDL = "GammaDL"
    GammaDR = "GammaDR"
    GammaN = "GammaN"


class MeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming simplicial mesh.

    Attributes
    ----------
    vertices : (nv, dim) float array
    cells : (nc, dim+1) int array, positively oriented
    bfacets : (nb, dim) int array of boundary facet vertex indices
    btags : length-nb tuple of :class:`BoundaryTag`
    """

    dim: int
    vertices: np.ndarray
    cells: np.ndarray
    bfacets: np.ndarray
    btags: tuple = field(default_factory=tuple)

    def __post_init__(self):
        for name in ("vertices", "cells", "bfacets"):
            arr = np.array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "btags", tuple(BoundaryTag(t) for t in self.btags))

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_cells(self) -> int:
        return self.cells.shape[0]

    def cell_measures(self) -> np.ndarray:
        """Signed cell measures (length/area/volume)."""
        x = self.vertices[self.cells]                  # (nc, d+1, d)
        edges = x[:, 1:, :] - x[:, :1, :]              # (nc, d, d)
        return np.linalg.det(edges) / math.factorial(self.dim)

    def facets_with(self, *tags: BoundaryTag | str) -> np.ndarray:
        wanted = {BoundaryTag(t) for t in tags}
        mask = np.array([t in wanted for t in self.btags], dtype=bool)
        return self.bfacets[mask] if len(mask) else self.bfacets[:0]

    def vertices_with(self, *tags: BoundaryTag | str) -> np.ndarray:
        """Sorted unique vertex ids lying on facets with any of ``tags``."""
        return np.unique(self.facets_with(*tags).ravel())

    def h(self) -> float:
        """Longest edge length."""
        x = self.vertices[self.cells]
        best = 0.0
        for i, j in itertools.combinations(range(self.dim + 1), 2):
            best = max(best, float(np.max(np.linalg.norm(x[:, i] - x[:, j], axis=1))))
        return best

    def with_tags(self, tagger) -> "Mesh":
        """Return a copy retagged by ``tagger(facet_vertex_coords) -> tag``."""
        tags = [tagger(self.vertices[f]) for f in self.bfacets]
        return Mesh(self.dim, self.vertices, self.cells, self.bfacets, tuple(tags))


def _orient(vertices: np.ndarray, cells: np.ndarray) -> np.ndarray:
    """Swap the last two vertices of negatively oriented cells."""
    cells = np.array(cells, dtype=np.int64)
    x = vertices[cells]
    det = np.linalg.det(x[:, 1:, :] - x[:, :1, :])
    neg = det < 0
    cells[neg, -2], cells[neg, -1] = cells[neg, -1].copy(), cells[neg, -2].copy()
    return cells


def boundary_facets(cells: np.ndarray) -> np.ndarray:
    """Facets that belong to exactly one cell, in first-seen order."""
    d1 = cells.shape[1]
    counts: dict[tuple, int] = {}
    first: dict[tuple, tuple] = {}
    for c in cells:
        for drop in range(d1):
            f = tuple(np.delete(c, drop))
            key = tuple(sorted(f))
            counts[key] = counts.get(key, 0) + 1
            first.setdefault(key, f)
    out = [first[k] for k, n in counts.items() if n == 1]
    return np.array(out, dtype=np.int64).reshape(-1, d1 - 1)


def interval_mesh(num_cells: int) -> Mesh:
    if num_cells < 1:
        raise MeshError(f"num_cells must be >= 1, got {num_cells}")
    x = np.linspace(0.0, 1.0, num_cells + 1).reshape(-1, 1)
    cells = np.column_stack([np.arange(num_cells), np.arange(1, num_cells + 1)])
    bf = np.array([[0], [num_cells]])
    return Mesh(1, x, cells, bf, (BoundaryTag.GammaDL, BoundaryTag.GammaDR))


def _side_tagger(dim: int):
    def tag(coords):
        x0 = coords[:, 0]
        if np.all(np.abs(x0) < 1e-12):
            return BoundaryTag.GammaDL
        if np.all(np.abs(x0 - 1.0) < 1e-12):
            return BoundaryTag.GammaDR
        return BoundaryTag.GammaN
    return tag


def square_mesh(nx: int, ny: int) -> Mesh:
    """Uniform triangulation of [0,1]^2; each quad is cut along its
    lower-left to upper-right diagonal.  x=0 is GammaDL, x=1 is GammaDR."""
    if nx < 1 or ny < 1:
        raise MeshError(f"nx, ny must be >= 1, got {nx}, {ny}")
    xs, ys = np.linspace(0, 1, nx + 1), np.linspace(0, 1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    verts = np.column_stack([X.ravel(), Y.ravel()])
    vid = np.arange((nx + 1) * (ny + 1)).reshape(nx + 1, ny + 1)
    a = vid[:-1, :-1].ravel()
    b = vid[1:, :-1].ravel()
    c = vid[1:, 1:].ravel()
    d = vid[:-1, 1:].ravel()
    cells = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    cells = _orient(verts, cells)
    bf = boundary_facets(cells)
    tagger = _side_tagger(2)
    tags = tuple(tagger(verts[f]) for f in bf)
    return Mesh(2, verts, cells, bf, tags)


# Kuhn subdivision: one tetrahedron per permutation of the axes, all sharing
# the (0,0,0)-(1,1,1) diagonal.  The face template is translation invariant,
# so neighbouring cubes match.
_KUHN = [p for p in itertools.permutations(range(3))]


def cube_mesh(nx: int, ny: int, nz: int, corner_radius: float = 0.25) -> Mesh:
    """Uniform tetrahedral mesh of [0,1]^3 (6 tets per hexahedron).

    Boundary facets whose vertices all lie within ``corner_radius`` of the
    origin are tagged GammaDL, those near (1,1,1) GammaDR, the rest GammaN.
    """
    if min(nx, ny, nz) < 1:
        raise MeshError(f"cell counts must be >= 1, got {nx}, {ny}, {nz}")
    axes = [np.linspace(0, 1, n + 1) for n in (nx, ny, nz)]
    G = np.meshgrid(*axes, indexing="ij")
    verts = np.column_stack([g.ravel() for g in G])
    vid = np.arange(verts.shape[0]).reshape(nx + 1, ny + 1, nz + 1)
    I, J, K = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    base = np.stack([I.ravel(), J.ravel(), K.ravel()], axis=1)
    cells = []
    for perm in _KUHN:
        path = [base.copy()]
        cur = base.copy()
        for ax in perm:
            cur = cur.copy()
            cur[:, ax] += 1
            path.append(cur)
        cells.append(np.column_stack([vid[p[:, 0], p[:, 1], p[:, 2]] for p in path]))
    cells = _orient(verts, np.concatenate(cells))
    bf = boundary_facets(cells)
    lo, hi = np.zeros(3), np.ones(3)

    def tagger(coords):
        if np.all(np.linalg.norm(coords - lo, axis=1) <= corner_radius + 1e-12):
            return BoundaryTag.GammaDL
        if np.all(np.linalg.norm(coords - hi, axis=1) <= corner_radius + 1e-12):
            return BoundaryTag.GammaDR
        return BoundaryTag.GammaN

    tags = tuple(tagger(verts[f]) for f in bf)
    return Mesh(3, verts, cells, bf, tags)


def annulus_mesh(r_in: float, r_out: float, n_radial: int, n_angular: int) -> Mesh:
    """Polar grid of ``n_radial + 1`` rings with ``n_angular`` vertices each.

    Ring vertices lie exactly on the circles; boundary facets are chords.  The
    inner circle is GammaDL, the outer GammaDR.  Vertex ``k*n_angular`` sits at
    angle 0, so the y=0, x>0 ray is a mesh line.
    """
    if not (0 < r_in < r_out):
        raise MeshError(f"need 0 < r_in < r_out, got r_in={r_in}, r_out={r_out}")
    if n_radial < 1 or n_angular < 3:
        raise MeshError("need n_radial >= 1 and n_angular >= 3")
    r = np.linspace(r_in, r_out, n_radial + 1)
    t = 2 * np.pi * np.arange(n_angular) / n_angular
    R, T = np.meshgrid(r, t, indexing="ij")
    verts = np.column_stack([(R * np.cos(T)).ravel(), (R * np.sin(T)).ravel()])
    vid = np.arange(verts.shape[0]).reshape(n_radial + 1, n_angular)
    nxt = np.roll(vid, -1, axis=1)
    a, b = vid[:-1].ravel(), vid[1:].ravel()
    c, d = nxt[1:].ravel(), nxt[:-1].ravel()
    cells = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    cells = _orient(verts, cells)
    bf = boundary_facets(cells)
    rmid = 0.5 * (r_in + r_out)

    def tagger(coords):
        rr = np.linalg.norm(coords, axis=1)
        return BoundaryTag.GammaDL if np.all(rr < rmid) else BoundaryTag.GammaDR

    tags = tuple(tagger(verts[f]) for f in bf)
    return Mesh(2, verts, cells, bf, tags)


# ---------------------------------------------------------------------------
# validation


@dataclass
class MeshReport:
    violations: list
    min_measure: float
    max_measure: float
    min_angle: float
    num_boundary_facets: int
    tag_counts: dict

    @property
    def ok(self) -> bool:
        return not self.violations


def _min_angle(mesh: Mesh) -> float:
    """Smallest interior angle (2D) or dihedral-free edge angle proxy (3D), degrees."""
    if mesh.dim == 1:
        return 180.0
    x = mesh.vertices[mesh.cells]
    best = 180.0
    # angles between edges meeting at each vertex of each face
    tri_sets = itertools.combinations(range(mesh.dim + 1), 3)
    for tri in tri_sets:
        for k in range(3):
            p = x[:, tri[k]]
            u = x[:, tri[(k + 1) % 3]] - p
            v = x[:, tri[(k + 2) % 3]] - p
            nu, nv = np.linalg.norm(u, axis=1), np.linalg.norm(v, axis=1)
            with np.errstate(invalid="ignore", divide="ignore"):
                cos = np.einsum("ij,ij->i", u, v) / (nu * nv)
            ang = np.degrees(np.arccos(np.clip(np.nan_to_num(cos, nan=1.0), -1, 1)))
            best = min(best, float(ang.min()))
    return best


def validate(mesh: Mesh) -> MeshReport:
    """Check positivity, conformity, boundary coverage and tagging."""
    violations = []
    meas = mesh.cell_measures() if mesh.num_cells else np.zeros(0)
    scale = max(mesh.h(), 1e-300) ** mesh.dim if mesh.num_cells else 1.0
    for cid in np.flatnonzero(meas <= 1e-14 * scale):
        violations.append(f"degenerate cell {cid}: measure {meas[cid]:.3e}")
    for cid, c in enumerate(mesh.cells):
        if len(set(c.tolist())) != mesh.dim + 1:
            violations.append(f"degenerate cell {cid}: repeated vertex")

    counts: dict[tuple, int] = {}
    for c in mesh.cells:
        for drop in range(mesh.dim + 1):
            key = tuple(sorted(np.delete(c, drop).tolist()))
            counts[key] = counts.get(key, 0) + 1
    for key, n in counts.items():
        if n > 2:
            violations.append(f"non-conforming facet {key}: shared by {n} cells")
    boundary = {k for k, n in counts.items() if n == 1}
    tagged = {}
    for f, t in zip(mesh.bfacets, mesh.btags):
        key = tuple(sorted(f.tolist()))
        if key in tagged:
            violations.append(f"facet {key} tagged twice")
        tagged[key] = t
        if key not in boundary:
            violations.append(f"dangling facet {key}: not on the boundary")
    for key in boundary - tagged.keys():
        violations.append(f"tag gap: boundary facet {key} has no tag")
    if len(mesh.btags) != len(mesh.bfacets):
        violations.append("tag gap: tag count differs from facet count")

    tag_counts = {t.value: sum(1 for s in mesh.btags if s is t) for t in BoundaryTag}
    return MeshReport(
        violations=violations,
        min_measure=float(meas.min()) if meas.size else 0.0,
        max_measure=float(meas.max()) if meas.size else 0.0,
        min_angle=_min_angle(mesh),
        num_boundary_facets=len(mesh.bfacets),
        tag_counts=tag_counts,
    )


# ---------------------------------------------------------------------------
# plain-text mesh format


def write_mesh(mesh: Mesh, path) -> None:
    path = Path(path)
    lines = [f"{mesh.dim} {mesh.num_vertices} {mesh.num_cells} {len(mesh.bfacets)}"]
    lines += [" ".join(f"{v:.17g}" for v in row) for row in mesh.vertices]
    lines += [" ".join(str(int(i)) for i in c) for c in mesh.cells]
    lines += [" ".join(str(int(i)) for i in f) + f" {t.value}"
              for f, t in zip(mesh.bfacets, mesh.btags)]
    path.write_text("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    dim, nv, nc, nb = (int(s) for s in rows[0])
    it = iter(rows[1:])
    verts = np.array([[float(s) for s in next(it)] for _ in range(nv)]).reshape(nv, dim)
    cells = np.array([[int(s) for s in next(it)] for _ in range(nc)]).reshape(nc, dim + 1)
    bf, tags = [], []
    for _ in range(nb):
        row = next(it)
        bf.append([int(s) for s in row[:-1]])
        tags.append(row[-1])
    return Mesh(dim, verts, cells, np.array(bf, dtype=np.int64).reshape(nb, dim), tuple(tags))
