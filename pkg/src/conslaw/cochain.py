"""Discrete forms (cochains) and the eight-slot general field containers."""
from __future__ import annotations

from dataclasses import dataclass, replace
from itertools import combinations
from typing import Callable, Iterator, Mapping

import numpy as np

from .grid import CubicalComplex

__all__ = [
    "Cochain",
    "GeneralField",
    "SourceField",
    "FIELD_SLOTS",
    "SOURCE_SLOTS",
    "SLOT_DEGREES",
    "zero_cochain",
    "zero_field",
    "zero_source",
    "project_function",
    "field_arithmetic",
]

FIELD_SLOTS = ("f3s", "F3s", "f1s", "F1s", "f2s", "F2s", "f0", "F0")
SOURCE_SLOTS = ("G3s", "g3s", "G1s", "g1s", "G2s", "g2s", "G0", "g0")
SLOT_DEGREES = {
    **dict(zip(FIELD_SLOTS, (3, 3, 1, 1, 2, 2, 0, 0))),
    **dict(zip(SOURCE_SLOTS, (3, 3, 1, 1, 2, 2, 0, 0))),
}


@dataclass(frozen=True, eq=False)
class Cochain:
    """A degree-p cochain with values of shape ``(n_cells, fiber_dim)``.

    A primal p-cochain has one value per primal p-cell.  A dual p-cochain
    lives on dual p-cells, which pair one-to-one with primal (dim-p)-cells,
    so it is indexed by those.
    """

    degree: int
    values: np.ndarray
    complex: CubicalComplex
    dual: bool = False

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2:
            raise ValueError("cochain values must be 1D or (n_cells, fiber_dim)")
        if not 0 <= self.degree <= self.complex.dim:
            raise ValueError(f"degree {self.degree} out of range")
        if vals.shape[0] != self.complex.cell_counts[self.index_degree]:
            raise ValueError(
                f"expected {self.complex.cell_counts[self.index_degree]} values for a "
                f"{'dual' if self.dual else 'primal'} {self.degree}-cochain, got {vals.shape[0]}"
            )
        if vals.shape[1] not in (1, 3):
            raise ValueError(f"fiber_dim must be 1 or 3, got {vals.shape[1]}")
        object.__setattr__(self, "values", vals)

    @property
    def fiber_dim(self) -> int:
        return self.values.shape[1]

    @property
    def index_degree(self) -> int:
        """Degree of the primal cells the values are attached to."""
        return self.complex.dim - self.degree if self.dual else self.degree

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def with_values(self, values: np.ndarray) -> "Cochain":
        return replace(self, values=np.asarray(values, dtype=float).reshape(self.values.shape))

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def compatible(self, other: "Cochain") -> bool:
        return (
            self.complex is other.complex
            and self.degree == other.degree
            and self.dual == other.dual
            and self.fiber_dim == other.fiber_dim
        )

    def __add__(self, other: "Cochain") -> "Cochain":
        _check_same(self, other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "Cochain") -> "Cochain":
        _check_same(self, other)
        return self.with_values(self.values - other.values)

    def __neg__(self) -> "Cochain":
        return self.with_values(-self.values)

    def __mul__(self, alpha: float) -> "Cochain":
        return self.with_values(alpha * self.values)

    __rmul__ = __mul__

    def __repr__(self) -> str:
        kind = "dual" if self.dual else "primal"
        return f"Cochain({kind} degree={self.degree}, n={self.values.shape[0]}, fiber={self.fiber_dim})"


def _check_same(a: Cochain, b: Cochain) -> None:
    if not a.compatible(b):
        raise ValueError(f"incompatible cochains: {a!r} vs {b!r}")


def zero_cochain(complex: CubicalComplex, degree: int, fiber_dim: int = 1, dual: bool = False) -> Cochain:
    n = complex.cell_counts[complex.dim - degree if dual else degree]
    return Cochain(degree, np.zeros((n, fiber_dim)), complex, dual)


class _SlotContainer:
    """Shared behaviour of the eight-slot containers."""

    SLOTS: tuple[str, ...] = ()
    complex: CubicalComplex
    fiber_dim: int
    dual: bool

    def _validate(self) -> None:
        for name in self.SLOTS:
            c = getattr(self, name)
            if c is None:
                continue
            if not isinstance(c, Cochain):
                raise TypeError(f"slot {name} must hold a Cochain")
            if c.degree != SLOT_DEGREES[name]:
                raise ValueError(f"slot {name} holds degree-{SLOT_DEGREES[name]} cochains, got degree {c.degree}")
            if c.complex is not self.complex:
                raise ValueError(f"slot {name} lives on a different complex")
            if c.fiber_dim != self.fiber_dim:
                raise ValueError(f"slot {name} has fiber_dim {c.fiber_dim}, container has {self.fiber_dim}")
            if c.dual != self.dual:
                raise ValueError(f"slot {name} mixes primal and dual cochains")

    def __getitem__(self, name: str) -> Cochain | None:
        if name not in self.SLOTS:
            raise KeyError(name)
        return getattr(self, name)

    def get(self, name: str) -> Cochain:
        """Slot value, with unassigned slots returned as explicit zeros."""
        c = self[name]
        if c is None:
            return zero_cochain(self.complex, SLOT_DEGREES[name], self.fiber_dim, self.dual)
        return c

    def items(self) -> Iterator[tuple[str, Cochain | None]]:
        for name in self.SLOTS:
            yield name, getattr(self, name)

    def assigned(self) -> list[str]:
        return [n for n, c in self.items() if c is not None]


@dataclass(frozen=True, eq=False)
class GeneralField(_SlotContainer):
    """Space/time split general field.

    Lower-case ``f`` slots hold the space-like parts of the 4D forms, upper
    case ``F`` slots the spatial forms ``F`` with ``f_t = dt ^ F``.  Slot
    order follows the columns of the split conservation law.
    """

    complex: CubicalComplex
    fiber_dim: int = 1
    dual: bool = False
    f3s: Cochain | None = None
    F3s: Cochain | None = None
    f1s: Cochain | None = None
    F1s: Cochain | None = None
    f2s: Cochain | None = None
    F2s: Cochain | None = None
    f0: Cochain | None = None
    F0: Cochain | None = None

    SLOTS = FIELD_SLOTS

    def __post_init__(self) -> None:
        self._validate()


@dataclass(frozen=True, eq=False)
class SourceField(_SlotContainer):
    """Sources of the split law; ``G`` slots pair with ``dt ^ G`` rows."""

    complex: CubicalComplex
    fiber_dim: int = 1
    dual: bool = False
    G3s: Cochain | None = None
    g3s: Cochain | None = None
    G1s: Cochain | None = None
    g1s: Cochain | None = None
    G2s: Cochain | None = None
    g2s: Cochain | None = None
    G0: Cochain | None = None
    g0: Cochain | None = None

    SLOTS = SOURCE_SLOTS

    def __post_init__(self) -> None:
        self._validate()


def _check_fiber(fiber_dim: int) -> None:
    if fiber_dim not in (1, 3):
        raise ValueError(f"fiber_dim must be 1 or 3, got {fiber_dim}")


def zero_field(complex: CubicalComplex, fiber_dim: int = 1, dual: bool = False) -> GeneralField:
    _check_fiber(fiber_dim)
    slots = {n: zero_cochain(complex, SLOT_DEGREES[n], fiber_dim, dual) for n in FIELD_SLOTS}
    return GeneralField(complex, fiber_dim, dual, **slots)


def zero_source(complex: CubicalComplex, fiber_dim: int = 1, dual: bool = False) -> SourceField:
    _check_fiber(fiber_dim)
    slots = {n: zero_cochain(complex, SLOT_DEGREES[n], fiber_dim, dual) for n in SOURCE_SLOTS}
    return SourceField(complex, fiber_dim, dual, **slots)


def project_function(
    complex: CubicalComplex,
    p: int,
    fiber_dim: int,
    func: Callable[[np.ndarray], np.ndarray],
) -> Cochain:
    """De Rham map by point sampling / midpoint rule.

    ``func`` receives cell centres of shape ``(N, dim)`` and returns the
    form's components in the basis ``dx_I`` for increasing axis tuples ``I``
    (``itertools.combinations`` order), shape ``(N, C(dim, p))`` or, for
    vector-valued forms, ``(N, C(dim, p), fiber_dim)``.  For p = 0 (and
    p = dim) the component axis may be dropped.  Each p-cell of type ``I``
    receives component ``I`` at its centre times the cell measure.
    """
    _check_fiber(fiber_dim)
    centers = complex.cell_centers(p)
    measure = complex.primal_measure(p)
    types = list(combinations(range(complex.dim), p))
    raw = np.asarray(func(centers), dtype=float)
    n = centers.shape[0]
    if raw.ndim == 0:
        raw = np.full((n,), float(raw))
    if len(types) == 1 and (raw.ndim == 1 or (raw.ndim == 2 and fiber_dim > 1 and raw.shape[1] == fiber_dim)):
        raw = raw[:, None]
    if raw.ndim == 2:
        raw = raw[:, :, None]
    if raw.shape[:2] != (n, len(types)) or raw.shape[2] != fiber_dim:
        raise ValueError(f"function returned shape {raw.shape}, expected ({n}, {len(types)}, {fiber_dim})")
    values = np.empty((n, fiber_dim))
    for k, blk in enumerate(complex.blocks[p]):
        sl = slice(blk.offset, blk.offset + blk.size)
        values[sl] = raw[sl, k, :]
    values *= measure[:, None]
    return Cochain(p, values, complex)


def field_arithmetic(
    a: GeneralField | SourceField,
    b: GeneralField | SourceField,
    alpha: float = 1.0,
    beta: float = 1.0,
):
    """Slot-wise ``alpha * a + beta * b``.

    Each entry is computed as ``alpha*x + beta*y`` in plain float64 with no
    fused or reordered operations; a slot unassigned in both operands stays
    unassigned.
    """
    if type(a) is not type(b):
        raise ValueError("cannot combine a GeneralField with a SourceField")
    if a.complex is not b.complex:
        raise ValueError("fields live on different complexes")
    if a.fiber_dim != b.fiber_dim:
        raise ValueError(f"fiber mismatch: {a.fiber_dim} vs {b.fiber_dim}")
    if a.dual != b.dual:
        raise ValueError("cannot combine primal and dual fields")
    out = {}
    for name in a.SLOTS:
        x, y = a[name], b[name]
        if x is None and y is None:
            out[name] = None
            continue
        xv = a.get(name).values
        yv = b.get(name).values
        out[name] = a.get(name).with_values(alpha * xv + beta * yv)
    return type(a)(a.complex, a.fiber_dim, a.dual, **out)


def field_from_mapping(
    complex: CubicalComplex,
    slots: Mapping[str, Cochain],
    fiber_dim: int = 1,
    dual: bool = False,
    source: bool = False,
):
    cls = SourceField if source else GeneralField
    return cls(complex, fiber_dim, dual, **dict(slots))

