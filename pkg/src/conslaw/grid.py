"""Axis-aligned cubical cell complexes and their integer incidence operators.

A p-cell of a cubical complex is identified by the set of axes it spans
(its *type*, an increasing tuple of ``p`` axis indices) and the integer
position of its lowest corner.  Cells are enumerated type by type, types in
lexicographic order of their axis tuples, positions in C order (last axis
fastest).  A cell spanning axes ``(a0, a1, ...)`` is oriented as
``dx_a0 ^ dx_a1 ^ ...``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from math import prod
from typing import Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "CubicalComplex",
    "SpacetimeSplit",
    "build_complex",
    "exterior_derivative",
    "spacetime_split",
    "expected_cell_counts",
    "MAX_4D_EXTENT",
]

MAX_4D_EXTENT = 4


@dataclass(frozen=True)
class CellBlock:
    """All p-cells of one type: axes spanned, per-axis position shape, offset."""

    axes: tuple[int, ...]
    shape: tuple[int, ...]
    offset: int

    @property
    def size(self) -> int:
        return prod(self.shape)


@dataclass(frozen=True, eq=False)
class CubicalComplex:
    """Cubical complex over a box ``[0, n_0 h_0] x ... x [0, n_{d-1} h_{d-1}]``.

    Axes flagged periodic are wrapped, turning the box into a (partial) torus.
    Instances are immutable; derived data is cached on first access.
    """

    dim: int
    extents: tuple[int, ...]
    spacings: tuple[float, ...]
    periodic: tuple[bool, ...] = field(default=())

    def __post_init__(self) -> None:
        if not self.periodic:
            object.__setattr__(self, "periodic", (False,) * self.dim)

    # -- enumeration -----------------------------------------------------
    def _positions_shape(self, axes: Sequence[int]) -> tuple[int, ...]:
        return tuple(
            n if (a in axes or per) else n + 1
            for a, (n, per) in enumerate(zip(self.extents, self.periodic))
        )

    @cached_property
    def blocks(self) -> tuple[tuple[CellBlock, ...], ...]:
        out = []
        for p in range(self.dim + 1):
            offset = 0
            row = []
            for axes in combinations(range(self.dim), p):
                shape = self._positions_shape(axes)
                row.append(CellBlock(axes, shape, offset))
                offset += prod(shape)
            out.append(tuple(row))
        return tuple(out)

    @cached_property
    def cell_counts(self) -> tuple[int, ...]:
        return tuple(sum(b.size for b in row) for row in self.blocks)

    def block_of(self, p: int, axes: Sequence[int]) -> CellBlock:
        axes = tuple(axes)
        for blk in self.blocks[p]:
            if blk.axes == axes:
                return blk
        raise KeyError(axes)

    def cell_types(self, p: int) -> np.ndarray:
        """Index of each p-cell's type within ``blocks[p]``."""
        return np.concatenate(
            [np.full(b.size, k, dtype=np.int64) for k, b in enumerate(self.blocks[p])]
        )

    def cell_positions(self, p: int) -> np.ndarray:
        """Integer lowest-corner position of every p-cell, shape ``(n_p, dim)``."""
        parts = []
        for b in self.blocks[p]:
            idx = np.indices(b.shape).reshape(self.dim, -1).T
            parts.append(idx)
        return np.concatenate(parts, axis=0) if parts else np.zeros((0, self.dim), int)

    def cell_centers(self, p: int) -> np.ndarray:
        """Physical centre of every p-cell, shape ``(n_p, dim)``."""
        h = np.asarray(self.spacings, dtype=float)
        pos = self.cell_positions(p).astype(float)
        half = np.zeros_like(pos)
        for b in self.blocks[p]:
            sl = slice(b.offset, b.offset + b.size)
            for a in b.axes:
                half[sl, a] = 0.5
        return (pos + half) * h

    def cell_axes(self, p: int) -> np.ndarray:
        """Boolean mask ``(n_p, dim)``: which axes each p-cell spans."""
        mask = np.zeros((self.cell_counts[p], self.dim), dtype=bool)
        for b in self.blocks[p]:
            mask[b.offset : b.offset + b.size, list(b.axes)] = True
        return mask

    @cached_property
    def _boundary(self) -> tuple[np.ndarray, ...]:
        flags = []
        for p in range(self.dim + 1):
            pos = self.cell_positions(p)
            spans = self.cell_axes(p)
            on = np.zeros(self.cell_counts[p], dtype=bool)
            for a, (n, per) in enumerate(zip(self.extents, self.periodic)):
                if per:
                    continue
                on |= ~spans[:, a] & ((pos[:, a] == 0) | (pos[:, a] == n))
            on.setflags(write=False)
            flags.append(on)
        return tuple(flags)

    def boundary_flags(self, p: int) -> np.ndarray:
        """True for p-cells lying in the boundary of the box (non-periodic sides)."""
        return self._boundary[p]

    # -- measures --------------------------------------------------------
    def primal_measure(self, p: int) -> np.ndarray:
        h = np.asarray(self.spacings, dtype=float)
        out = np.empty(self.cell_counts[p])
        for b in self.blocks[p]:
            out[b.offset : b.offset + b.size] = prod(h[list(b.axes)]) if b.axes else 1.0
        return out

    def dual_measure(self, p: int, truncate: bool = False) -> np.ndarray:
        """Measure of the dual (dim-p)-cell attached to each primal p-cell.

        Along an axis the p-cell does not span, the dual cell extends half a
        spacing to each side.  With ``truncate`` it is clipped at non-periodic
        box faces; by default boundary dual cells keep the full spacing.
        """
        pos = self.cell_positions(p)
        spans = self.cell_axes(p)
        out = np.ones(self.cell_counts[p])
        for a, (n, h, per) in enumerate(zip(self.extents, self.spacings, self.periodic)):
            length = np.full(len(out), float(h))
            if truncate and not per:
                end = (pos[:, a] == 0) | (pos[:, a] == n)
                length[end] = 0.5 * h
            out *= np.where(spans[:, a], 1.0, length)
        return out

    @cached_property
    def euler_characteristic(self) -> int:
        return sum((-1) ** p * n for p, n in enumerate(self.cell_counts))

    # -- operators ---------------------------------------------------------
    @cached_property
    def _incidence(self) -> tuple[sp.csr_matrix, ...]:
        return tuple(_assemble_incidence(self, p) for p in range(self.dim))

    def incidence(self, p: int) -> sp.csr_matrix:
        if not 0 <= p < self.dim:
            raise ValueError(f"degree {p} out of range for a {self.dim}-complex")
        return self._incidence[p]

    def __repr__(self) -> str:
        per = "".join("p" if x else "-" for x in self.periodic)
        return f"CubicalComplex(dim={self.dim}, extents={self.extents}, spacings={self.spacings}, periodic={per})"


def _assemble_incidence(cx: CubicalComplex, p: int) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for blk in cx.blocks[p + 1]:
        idx = np.indices(blk.shape).reshape(cx.dim, -1)
        row_ids = blk.offset + np.arange(blk.size)
        for j, a in enumerate(blk.axes):
            face = cx.block_of(p, tuple(x for x in blk.axes if x != a))
            sign = -1 if j % 2 else 1
            for shift, s in ((1, sign), (0, -sign)):
                fi = idx.copy()
                fi[a] += shift
                if cx.periodic[a]:
                    fi[a] %= cx.extents[a]
                col_ids = face.offset + np.ravel_multi_index(tuple(fi), face.shape)
                rows.append(row_ids)
                cols.append(col_ids)
                vals.append(np.full(blk.size, s, dtype=np.int64))
    shape = (cx.cell_counts[p + 1], cx.cell_counts[p])
    if not rows:
        return sp.csr_matrix(shape, dtype=np.int64)
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=shape,
    ).tocsr()
    mat.eliminate_zeros()
    mat.sort_indices()
    return mat


def build_complex(
    dim: int,
    extents: Sequence[int],
    spacings: Sequence[float],
    periodic: bool | Sequence[bool] = False,
) -> CubicalComplex:
    """Build a ``dim``-dimensional cubical complex (``dim`` is 3, or 4 for the
    space-time oracle, where axis 0 is time).

    >>> build_complex(3, [1, 1, 1], [1, 1, 1]).cell_counts
    (8, 12, 6, 1)
    """
    if dim not in (3, 4):
        raise ValueError(f"dim must be 3 or 4, got {dim}")
    extents = tuple(int(n) for n in extents)
    spacings = tuple(float(h) for h in spacings)
    if len(extents) != dim or len(spacings) != dim:
        raise ValueError("extents and spacings need one entry per axis")
    if any(n < 1 for n in extents):
        raise ValueError(f"extents must be >= 1, got {extents}")
    if any(not np.isfinite(h) or h <= 0 for h in spacings):
        raise ValueError(f"spacings must be positive, got {spacings}")
    if dim == 4 and any(n > MAX_4D_EXTENT for n in extents):
        raise ValueError(f"4D complexes are limited to extents <= {MAX_4D_EXTENT}")
    if isinstance(periodic, (bool, np.bool_)):
        periodic = (bool(periodic),) * dim
    periodic = tuple(bool(x) for x in periodic)
    if len(periodic) != dim:
        raise ValueError("periodic needs one flag per axis")
    return CubicalComplex(dim, extents, spacings, periodic)


def exterior_derivative(complex: CubicalComplex, p: int) -> sp.csr_matrix:
    """Integer incidence matrix ``D_p`` mapping p-cochains to (p+1)-cochains."""
    return complex.incidence(p)


def expected_cell_counts(extents: Sequence[int], periodic: Sequence[bool] | None = None) -> tuple[int, ...]:
    """Closed-form cubical cell counts."""
    d = len(extents)
    periodic = periodic or (False,) * d
    out = []
    for p in range(d + 1):
        total = 0
        for axes in combinations(range(d), p):
            total += prod(n if (a in axes or per) else n + 1 for a, (n, per) in enumerate(zip(extents, periodic)))
        out.append(total)
    return tuple(out)


@dataclass(frozen=True)
class SpacetimeSplit:
    """Space-like / time-like classification of the cells of a 4D complex.

    ``time_like[p]`` marks p-cells spanning the time axis (axis 0).  The
    space-like p-cells at time level ``i`` correspond one-to-one with the
    spatial p-cells of ``space``; a time-like p-cell over the time interval
    ``[i, i+1]`` corresponds to a spatial (p-1)-cell.
    """

    complex4: CubicalComplex
    space: CubicalComplex
    time_like: tuple[np.ndarray, ...]
    # (p-cell index) -> (time level, spatial cell index)
    level: tuple[np.ndarray, ...]
    spatial_index: tuple[np.ndarray, ...]

    def counts(self, p: int) -> tuple[int, int]:
        t = int(self.time_like[p].sum())
        return self.complex4.cell_counts[p] - t, t


def spacetime_split(complex4: CubicalComplex) -> SpacetimeSplit:
    if complex4.dim != 4:
        raise ValueError("spacetime_split needs a 4D complex (axis 0 = time)")
    space = CubicalComplex(3, complex4.extents[1:], complex4.spacings[1:], complex4.periodic[1:])
    time_like, level, spatial = [], [], []
    for p in range(5):
        tl = np.zeros(complex4.cell_counts[p], dtype=bool)
        lv = np.zeros(complex4.cell_counts[p], dtype=np.int64)
        si = np.zeros(complex4.cell_counts[p], dtype=np.int64)
        for blk in complex4.blocks[p]:
            sl = slice(blk.offset, blk.offset + blk.size)
            idx = np.indices(blk.shape).reshape(4, -1)
            spans_time = bool(blk.axes) and blk.axes[0] == 0
            tl[sl] = spans_time
            lv[sl] = idx[0]
            space_axes = tuple(a - 1 for a in blk.axes if a != 0)
            q = len(space_axes)
            sblk = space.block_of(q, space_axes)
            si[sl] = sblk.offset + np.ravel_multi_index(tuple(idx[1:]), sblk.shape)
        for arr in (tl, lv, si):
            arr.setflags(write=False)
        time_like.append(tl)
        level.append(lv)
        spatial.append(si)
    return SpacetimeSplit(complex4, space, tuple(time_like), tuple(level), tuple(spatial))

