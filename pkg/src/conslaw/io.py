"""File formats: legacy VTK snapshots, cochain CSV/binary, triplets, CSV tables.

Legacy VTK layout (ASCII, STRUCTURED_POINTS)::

    # vtk DataFile Version 3.0
    <title>
    ASCII
    DATASET STRUCTURED_POINTS
    DIMENSIONS nx+1 ny+1 nz+1
    ORIGIN 0 0 0
    SPACING hx hy hz
    POINT_DATA (nx+1)(ny+1)(nz+1)
    SCALARS|VECTORS <name> double ...       (0-cochains)
    CELL_DATA nx*ny*nz
    SCALARS|VECTORS|TENSORS <name> double   (1-, 2-, 3-cochains as cell proxies)

Periodic axes repeat the first vertex plane at the far end.  Points and
cells are written x fastest, as VTK expects.  Cell proxies average the
cochain values of the cell's p-faces divided by their measure; 2-forms
become flux vectors.

Cochain CSV: ``#``-prefixed header lines ``degree``, ``dual``,
``fiber_dim``, ``extents``, ``spacings``, ``periodic``, then
``index,c0[,c1,c2]`` rows.  Cochain binary: one ASCII JSON header line,
then little-endian float64 values, cell-major.
"""
from __future__ import annotations

import csv
import json
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .cochain import Cochain
from .grid import CubicalComplex

__all__ = [
    "cell_proxy",
    "vertex_grid_values",
    "write_vtk",
    "write_cochain_csv",
    "read_cochain_csv",
    "write_cochain_binary",
    "read_cochain_binary",
    "write_triplets",
    "read_triplets",
    "write_diagnostics",
    "load_material_csv",
    "format_float",
]


def format_float(v: float) -> str:
    return format(float(v), ".17g")


# -- proxies -----------------------------------------------------------------------

def _wrap_index(cx: CubicalComplex, axes: tuple[int, ...], pos: np.ndarray) -> np.ndarray:
    blk = cx.block_of(len(axes), axes)
    pos = pos.copy()
    for a in range(cx.dim):
        if cx.periodic[a]:
            pos[a] %= cx.extents[a]
    return blk.offset + np.ravel_multi_index(tuple(pos), blk.shape)


def cell_proxy(c: Cochain) -> np.ndarray:
    """Per-3-cell density of a primal cochain, shape ``(ncell, ntypes, fiber)``.

    Component ``k`` follows ``combinations(range(3), p)`` order.
    """
    cx = c.complex
    if c.dual:
        raise ValueError("cell proxies are defined for primal cochains")
    p = c.degree
    cells = np.indices(cx.extents).reshape(3, -1)
    types = list(combinations(range(3), p))
    out = np.zeros((cells.shape[1], len(types), c.fiber_dim))
    meas = cx.primal_measure(p)
    dens = c.values / meas[:, None]
    for k, axes in enumerate(types):
        others = [a for a in range(3) if a not in axes]
        acc = np.zeros((cells.shape[1], c.fiber_dim))
        shifts = np.indices((2,) * len(others)).reshape(len(others), -1).T
        for sh in shifts:
            pos = cells.copy()
            for a, s in zip(others, sh):
                pos[a] += s
            acc += dens[_wrap_index(cx, axes, pos)]
        out[:, k] = acc / len(shifts)
    return out


def vertex_grid_values(c: Cochain) -> np.ndarray:
    """0-cochain values on the VTK point lattice (periodic planes repeated)."""
    cx = c.complex
    pts = np.indices(tuple(n + 1 for n in cx.extents)).reshape(3, -1)
    return c.values[_wrap_index(cx, (), pts)]


def _vtk_order(n: Sequence[int]) -> np.ndarray:
    # our enumeration is C order (x slowest); VTK wants x fastest
    return np.arange(int(np.prod(n))).reshape(n).transpose(2, 1, 0).reshape(-1)


def write_vtk(path: str | Path, complex: CubicalComplex, fields: Mapping[str, Cochain], title: str = "conslaw snapshot") -> None:
    cx = complex
    if cx.dim != 3:
        raise ValueError("VTK output is for 3D complexes")
    dims = [n + 1 for n in cx.extents]
    lines = [
        "# vtk DataFile Version 3.0",
        title.replace("\n", " ")[:255],
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {dims[0]} {dims[1]} {dims[2]}",
        "ORIGIN 0 0 0",
        "SPACING " + " ".join(format_float(h) for h in cx.spacings),
    ]
    point_lines: list[str] = []
    cell_lines: list[str] = []
    porder = _vtk_order(dims)
    corder = _vtk_order(cx.extents)
    for name, c in fields.items():
        if c.dual:
            raise ValueError(f"field {name}: write the primal counterpart")
        tag = name.replace(" ", "_")
        if c.degree == 0:
            vals = vertex_grid_values(c)[porder]
            point_lines += _vtk_array(tag, vals)
        else:
            prox = cell_proxy(c)[corder]
            if c.degree == 2:
                prox = np.stack([prox[:, 2], -prox[:, 1], prox[:, 0]], axis=1)
            if prox.shape[1] == 1:
                prox = prox[:, 0, :]
            cell_lines += _vtk_array(tag, prox.reshape(prox.shape[0], -1) if prox.ndim == 3 else prox)
    if point_lines:
        lines.append(f"POINT_DATA {int(np.prod(dims))}")
        lines += point_lines
    if cell_lines:
        lines.append(f"CELL_DATA {int(np.prod(cx.extents))}")
        lines += cell_lines
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def _vtk_array(name: str, vals: np.ndarray) -> list[str]:
    vals = np.asarray(vals, dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    width = vals.shape[1]
    if width == 1:
        head = [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
    elif width == 3:
        head = [f"VECTORS {name} double"]
    elif width == 9:
        head = [f"TENSORS {name} double"]
    else:
        head = [f"SCALARS {name} double {width}", "LOOKUP_TABLE default"]
    return head + [" ".join(format_float(v) for v in row) for row in vals]


# -- cochain files ---------------------------------------------------------------------

def _header(c: Cochain) -> dict:
    cx = c.complex
    return {
        "degree": c.degree,
        "dual": int(c.dual),
        "fiber_dim": c.fiber_dim,
        "extents": list(cx.extents),
        "spacings": list(cx.spacings),
        "periodic": [int(p) for p in cx.periodic],
    }


def _check_header(head: Mapping, cx: CubicalComplex) -> None:
    if (
        list(head["extents"]) != list(cx.extents)
        or [int(p) for p in head["periodic"]] != [int(p) for p in cx.periodic]
        or not np.allclose(head["spacings"], cx.spacings, rtol=0, atol=0)
    ):
        raise ValueError("cochain file was written for a different complex")


def write_cochain_csv(path: str | Path, c: Cochain) -> None:
    head = _header(c)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for k, v in head.items():
            val = " ".join(format_float(x) if isinstance(x, float) else str(x) for x in v) if isinstance(v, list) else v
            fh.write(f"# {k} {val}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index"] + [f"c{i}" for i in range(c.fiber_dim)])
        for i, row in enumerate(c.values):
            w.writerow([i] + [format_float(v) for v in row])


def read_cochain_csv(path: str | Path, complex: CubicalComplex) -> Cochain:
    head: dict = {}
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition(" ")
                head[key] = val.split()
            elif line.strip():
                rows.append(line)
    meta = {
        "degree": int(head["degree"][0]),
        "dual": bool(int(head["dual"][0])),
        "fiber_dim": int(head["fiber_dim"][0]),
        "extents": [int(v) for v in head["extents"]],
        "spacings": [float(v) for v in head["spacings"]],
        "periodic": [int(v) for v in head["periodic"]],
    }
    _check_header(meta, complex)
    data = np.loadtxt(rows[1:], delimiter=",", ndmin=2)
    vals = np.empty((data.shape[0], meta["fiber_dim"]))
    vals[data[:, 0].astype(int)] = data[:, 1:]
    return Cochain(meta["degree"], vals, complex, meta["dual"])


def write_cochain_binary(path: str | Path, c: Cochain) -> None:
    head = json.dumps(_header(c), sort_keys=True)
    with open(path, "wb") as fh:
        fh.write(head.encode("ascii") + b"\n")
        fh.write(np.ascontiguousarray(c.values, dtype="<f8").tobytes())


def read_cochain_binary(path: str | Path, complex: CubicalComplex) -> Cochain:
    with open(path, "rb") as fh:
        head = json.loads(fh.readline().decode("ascii"))
        data = np.frombuffer(fh.read(), dtype="<f8")
    _check_header(head, complex)
    return Cochain(head["degree"], data.reshape(-1, head["fiber_dim"]).copy(), complex, bool(head["dual"]))


def write_triplets(path: str | Path, mat: sp.spmatrix) -> None:
    """``row col value`` per nonzero, sorted by row then column."""
    coo = sp.coo_matrix(mat)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"# shape {coo.shape[0]} {coo.shape[1]}\n")
        for k in order:
            v = coo.data[k]
            txt = str(int(v)) if float(v).is_integer() else format_float(v)
            fh.write(f"{coo.row[k]} {coo.col[k]} {txt}\n")


def read_triplets(path: str | Path) -> sp.csr_matrix:
    shape = None
    rows, cols, vals = [], [], []
    with open(path, encoding="ascii") as fh:
        for line in fh:
            if line.startswith("# shape"):
                shape = tuple(int(v) for v in line.split()[2:4])
                continue
            if not line.strip() or line.startswith("#"):
                continue
            r, c, v = line.split()
            rows.append(int(r))
            cols.append(int(c))
            vals.append(float(v))
    return sp.csr_matrix((vals, (rows, cols)), shape=shape)


# -- tables ------------------------------------------------------------------------------

def write_diagnostics(path: str | Path, columns: Sequence[str], rows: Iterable[Mapping[str, float]], marker: str | None = None) -> None:
    """Diagnostics CSV; floats as ``%.17g``.  ``marker`` appends a final flag row."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([str(row[c]) if c == "step" else format_float(row[c]) for c in columns])
        if marker is not None:
            w.writerow([marker] + [""] * (len(columns) - 1))


def load_material_csv(path: str | Path, n: int | None = None) -> np.ndarray:
    """Per-cell coefficients: one value per line, or ``index,value`` rows.

    Lines starting with ``#`` and a non-numeric header row are skipped.
    """
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in csv.reader(fh):
            if not line or line[0].lstrip().startswith("#"):
                continue
            try:
                rows.append([float(v) for v in line])
            except ValueError:
                if rows:
                    raise ValueError(f"{path}: non-numeric row {line}") from None
    if not rows:
        raise ValueError(f"{path}: no values")
    widths = {len(r) for r in rows}
    if widths == {1}:
        vals = np.array([r[0] for r in rows])
    elif widths == {2}:
        arr = np.array(rows)
        idx = arr[:, 0].astype(int)
        vals = np.full(idx.max() + 1, np.nan)
        vals[idx] = arr[:, 1]
        if np.any(np.isnan(vals)):
            raise ValueError(f"{path}: missing indices")
    else:
        raise ValueError(f"{path}: expected 1 or 2 columns")
    if n is not None and vals.size != n:
        raise ValueError(f"{path}: {vals.size} values, expected {n}")
    return vals
