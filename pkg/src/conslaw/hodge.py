"""Discrete Hodge operators on the staggered cubical grid.

A Hodge map of degree p takes a primal p-cochain to the dual (3-p)-cochain
on the dual cells attached to the same primal cells.  For scalar materials
it is diagonal with weight ``coef * |dual cell| / |primal cell|``.  The
isotropic elastic Hodge acting on vector-valued 1-cochains is a symmetric
sparse matrix instead, obtained from cell-averaged displacement gradients.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np
import scipy.sparse as sp

from .cochain import Cochain, GeneralField
from .grid import CubicalComplex

__all__ = [
    "MaterialField",
    "LameMaterial",
    "HodgeMap",
    "build_hodge",
    "apply_hodge",
    "double_hodge_sign",
    "energy",
    "vacuum_hodges",
]


@dataclass(frozen=True)
class MaterialField:
    """Scalar coefficient, constant or given per p-cell."""

    value: float | np.ndarray = 1.0
    tag: str = "custom"

    def on_cells(self, n: int) -> np.ndarray:
        v = np.asarray(self.value, dtype=float)
        if v.ndim == 0:
            v = np.full(n, float(v))
        if v.shape != (n,):
            raise ValueError(f"material '{self.tag}' has {v.shape} values, expected ({n},)")
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise ValueError(f"material '{self.tag}' must be strictly positive")
        return v


VACUUM = MaterialField(1.0, "vacuum")


@dataclass(frozen=True)
class LameMaterial:
    """Isotropic elasticity, Lame pair constant or given per 3-cell."""

    lam: float | np.ndarray
    mu: float | np.ndarray
    tag: str = "C"

    def on_cells(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        lam = np.broadcast_to(np.asarray(self.lam, dtype=float), (n,)).copy()
        mu = np.broadcast_to(np.asarray(self.mu, dtype=float), (n,)).copy()
        if np.any(mu <= 0) or np.any(lam + 2 * mu <= 0):
            raise ValueError("Lame parameters need mu > 0 and lam + 2 mu > 0")
        return lam, mu


Material = Union[None, float, MaterialField, LameMaterial]


@dataclass(frozen=True, eq=False)
class HodgeMap:
    """Primal p-cochains -> dual (3-p)-cochains.

    Exactly one of ``weights`` (diagonal, applied component-wise) and
    ``matrix`` (acting on values flattened cell-major, fiber-minor) is set.
    """

    degree: int
    complex: CubicalComplex
    weights: np.ndarray | None = None
    matrix: sp.csr_matrix | None = None
    tag: str = "vacuum"

    @property
    def is_diagonal(self) -> bool:
        return self.weights is not None

    def operator(self, fiber_dim: int) -> sp.csr_matrix:
        """Sparse matrix acting on flattened values of the given fiber."""
        if self.weights is not None:
            return sp.kron(sp.diags(self.weights), sp.identity(fiber_dim), format="csr")
        if self.matrix.shape[0] != self.complex.cell_counts[self.degree] * fiber_dim:
            raise ValueError(f"Hodge '{self.tag}' does not act on fiber_dim {fiber_dim}")
        return self.matrix

    def inverse_operator(self, fiber_dim: int) -> sp.csr_matrix:
        if self.weights is None:
            raise ValueError(f"Hodge '{self.tag}' is not diagonal; no cheap inverse")
        return sp.kron(sp.diags(1.0 / self.weights), sp.identity(fiber_dim), format="csr")

    def forward(self, values: np.ndarray) -> np.ndarray:
        if self.weights is not None:
            return self.weights[:, None] * values
        return (self.matrix @ values.reshape(-1)).reshape(values.shape)

    def backward(self, values: np.ndarray) -> np.ndarray:
        if self.weights is None:
            raise ValueError(f"Hodge '{self.tag}' is not diagonal; no cheap inverse")
        return values / self.weights[:, None]


def build_hodge(
    complex: CubicalComplex, p: int, material: Material = None, truncate_boundary: bool = False
) -> HodgeMap:
    """Diagonal (or, for :class:`LameMaterial`, sparse elastic) Hodge of degree p.

    Boundary dual cells use the full spacing unless ``truncate_boundary``.
    """
    if complex.dim != 3:
        raise ValueError("Hodge maps are built on 3D spatial complexes")
    if not 0 <= p <= 3:
        raise ValueError(f"degree {p} out of range")
    if isinstance(material, LameMaterial):
        if p != 1:
            raise ValueError("the elastic Hodge acts on (vector-valued) 1-cochains")
        return HodgeMap(1, complex, matrix=_elastic_matrix(complex, material), tag=material.tag)
    if material is None:
        material = VACUUM
    elif not isinstance(material, MaterialField):
        material = MaterialField(material)
    n = complex.cell_counts[p]
    coef = material.on_cells(n)
    w = coef * complex.dual_measure(p, truncate_boundary) / complex.primal_measure(p)
    w.setflags(write=False)
    return HodgeMap(p, complex, weights=w, tag=material.tag)


def _elastic_matrix(cx: CubicalComplex, mat: LameMaterial) -> sp.csr_matrix:
    # Cell gradient G[i, a] = mean over the cell's four a-edges of eps_i / h_a;
    # energy density lam/2 tr(G)^2 + mu |sym G|^2 integrated over the cell.
    ncell = cx.cell_counts[3]
    nedge = cx.cell_counts[1]
    cblk = cx.blocks[3][0]
    cpos = np.indices(cblk.shape).reshape(3, -1)
    cells = np.arange(ncell)
    rows, cols, vals = [], [], []
    for a in range(3):
        eblk = cx.block_of(1, (a,))
        others = [b for b in range(3) if b != a]
        for s0 in (0, 1):
            for s1 in (0, 1):
                pos = cpos.copy()
                for b, s in zip(others, (s0, s1)):
                    pos[b] += s
                    if cx.periodic[b]:
                        pos[b] %= cx.extents[b]
                edge = eblk.offset + np.ravel_multi_index(tuple(pos), eblk.shape)
                for i in range(3):
                    rows.append(cells * 9 + i * 3 + a)
                    cols.append(edge * 3 + i)
                    vals.append(np.full(ncell, 0.25 / cx.spacings[a]))
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(ncell * 9, nedge * 3),
    ).tocsr()
    lam, mu = mat.on_cells(ncell)
    vol = cx.primal_measure(3)
    trace = np.zeros(9)
    trace[[0, 4, 8]] = 1.0
    swap = np.zeros((9, 9))
    for i in range(3):
        for a in range(3):
            swap[i * 3 + a, a * 3 + i] = 1.0
    Q = sp.kron(sp.diags(vol * lam), np.outer(trace, trace)) + sp.kron(
        sp.diags(vol * mu), np.eye(9) + swap
    )
    K = (A.T @ Q.tocsr() @ A).tocsr()
    K.sum_duplicates()
    K.sort_indices()
    return K


def vacuum_hodges(complex: CubicalComplex) -> dict[int, HodgeMap]:
    return {p: build_hodge(complex, p) for p in range(4)}


def apply_hodge(h: HodgeMap, c: Cochain) -> Cochain:
    """Apply ``h`` to a primal p-cochain, or its inverse to a dual (3-p)-cochain."""
    if c.complex is not h.complex:
        raise ValueError("Hodge map and cochain live on different complexes")
    if not c.dual:
        if c.degree != h.degree:
            raise ValueError(f"Hodge of degree {h.degree} applied to a {c.degree}-cochain")
        return Cochain(3 - h.degree, h.forward(c.values), c.complex, dual=True)
    if c.degree != 3 - h.degree:
        raise ValueError(f"inverse Hodge of degree {h.degree} applied to a dual {c.degree}-cochain")
    return Cochain(h.degree, h.backward(c.values), c.complex, dual=False)


def double_hodge_sign(n: int, p: int, lorentzian: bool | None = None) -> int:
    """Sign of the double Hodge on p-forms in dimension n.

    Dimension 4 is taken with Minkowski signature, giving ``(-1)**(p(n-p)+1)``;
    otherwise the metric is Euclidean and the sign is ``(-1)**(p(n-p))``.
    """
    if not 0 <= p <= n:
        raise ValueError(f"degree {p} out of range for dimension {n}")
    if lorentzian is None:
        lorentzian = n == 4
    return (-1) ** (p * (n - p) + (1 if lorentzian else 0))


def energy(field: GeneralField, hodges: Mapping[str, HodgeMap]) -> float:
    """Half the Hodge-weighted square of every nonzero slot, summed.

    The fiber trace is the Euclidean dot product over components.  Dual
    slots are weighted with the inverse Hodge.
    """
    total = 0.0
    for name, c in field.items():
        if c is None or not np.any(c.values):
            continue
        h = hodges.get(name)
        if h is None:
            raise ValueError(f"no Hodge map supplied for nonzero slot {name}")
        star = h.backward(c.values) if c.dual else h.forward(c.values)
        total += 0.5 * float(np.sum(c.values * star))
    return total
