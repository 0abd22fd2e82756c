"""Result export: legacy VTK, CSV tables, gnuplot data, key-value config files."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .mesh import Mesh

_VTK_CELL = {1: 3, 2: 5, 3: 10}   # VTK_LINE, VTK_TRIANGLE, VTK_TETRA


def _fmt(v) -> str:
    return f"{float(v):.17g}"


def write_vtk(path, mesh: Mesh, point_data: dict, title: str = "eqlyte") -> Path:
    """Legacy ASCII 3.0 unstructured grid with scalar point data."""
    path = Path(path)
    nv, nc = mesh.num_vertices, mesh.num_cells
    pts = np.zeros((nv, 3))
    pts[:, :mesh.dim] = mesh.vertices
    k = mesh.dim + 1
    out = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {nv} double",
    ]
    out += [" ".join(_fmt(c) for c in p) for p in pts]
    out.append(f"CELLS {nc} {nc * (k + 1)}")
    out += [f"{k} " + " ".join(str(int(i)) for i in c) for c in mesh.cells]
    out.append(f"CELL_TYPES {nc}")
    out += [str(_VTK_CELL[mesh.dim])] * nc
    out.append(f"POINT_DATA {nv}")
    for name, values in point_data.items():
        values = np.asarray(values, dtype=float).reshape(nv)
        out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        out += [_fmt(v) for v in values]
    path.write_text("\n".join(out) + "\n")
    return path


def read_vtk_points(path) -> int:
    """Number of points declared in a legacy VTK file."""
    for line in Path(path).read_text().splitlines():
        if line.startswith("POINTS"):
            return int(line.split()[1])
    raise ValueError(f"{path}: no POINTS section")


def write_table(path, columns: dict) -> Path:
    """CSV with a header row and 17-significant-digit floats."""
    path = Path(path)
    names = list(columns)
    arrays = [np.asarray(columns[k], dtype=float).ravel() for k in names]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*arrays):
            w.writerow([_fmt(v) for v in row])
    return path


def read_table(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    names, body = rows[0], rows[1:]
    data = np.array([[float(v) if v != "" else np.nan for v in r] for r in body]).reshape(len(body), len(names))
    return {k: data[:, i] for i, k in enumerate(names)}


def write_gnuplot(path, columns: dict) -> Path:
    """Whitespace-separated columns with a commented header."""
    path = Path(path)
    names = list(columns)
    arrays = [np.asarray(columns[k], dtype=float).ravel() for k in names]
    lines = ["# " + " ".join(names)]
    lines += [" ".join(_fmt(v) for v in row) for row in zip(*arrays)]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ValueError(f"{path}:{lineno}: empty key")
        out[key] = value
    return out


def write_config(path, values: dict, header: str | None = None) -> Path:
    path = Path(path)
    lines = [f"# {header}"] if header else []
    for k, v in values.items():
        if isinstance(v, (list, tuple)):
            v = ",".join(_fmt(x) if isinstance(x, float) else str(x) for x in v)
        elif isinstance(v, float):
            v = _fmt(v)
        lines.append(f"{k} = {v}")
    path.write_text("\n".join(lines) + "\n")
    return path
