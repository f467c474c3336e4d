"""The general conservation law as an 8x8 block operator on a 3+1 split.

Rows are indexed by source slots ``G3s g3s G1s g1s G2s g2s G0 g0``, columns
by field slots ``f3s F3s f1s F1s f2s F2s f0 F0``.  Each nonzero block is one
of four kinds:

``dt``    time derivative of the slot
``d``     spatial exterior derivative
``sds``   star . d . star (a weighted codifferential up to sign)
``sdts``  star . dt . star

The spatial kinds become sparse matrices at assembly.  Time-derivative kinds
stay symbolic; whoever evaluates the operator supplies the time derivative of
each slot.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np
import scipy.sparse as sp

from .cochain import (
    FIELD_SLOTS,
    SLOT_DEGREES,
    SOURCE_SLOTS,
    Cochain,
    GeneralField,
    SourceField,
    zero_cochain,
)
from .grid import CubicalComplex, spacetime_split
from .hodge import HodgeMap, build_hodge

__all__ = [
    "ROWS",
    "COLS",
    "KINDS",
    "TEMPORAL_KINDS",
    "Pattern",
    "derive_split_pattern",
    "load_golden_pattern",
    "parse_pattern",
    "compare_patterns",
    "BlockOperator",
    "assemble_block_operator",
    "Residual",
    "evaluate_residual",
    "finite_difference",
    "verify_4d_decomposition",
    "d_matrix",
    "star_matrix",
]

ROWS = SOURCE_SLOTS
COLS = FIELD_SLOTS
KINDS = ("dt", "d", "sds", "sdts")
TEMPORAL_KINDS = ("dt", "sdts")
NEEDS_HODGE = ("sds", "sdts")

# (row, col) -> (sign, kind)
Pattern = dict[tuple[str, str], tuple[int, str]]


def _f(p: int) -> str:
    return "f0" if p == 0 else f"f{p}s"


def _F(p: int) -> str:
    return "F0" if p == 0 else f"F{p}s"


def _g(p: int) -> str:
    return "g0" if p == 0 else f"g{p}s"


def _G(p: int) -> str:
    return "G0" if p == 0 else f"G{p}s"


def derive_split_pattern(space_dim: int = 3) -> Pattern:
    """Derive the split block pattern from the 4D law.

    The 4D law couples ``g^q = d f^(q-1) + (-1)^(q+1) *d* f^(q+1)``.  Each form
    splits as ``f^p = f^p_s + dt ^ F^(p-1)`` and, with ``d = dt ^ dt_t + d^s``,

    * ``dt ^ dt_t f^p``        -> ``dt ^ dt_t f^p_s``
    * ``d^s (dt ^ F)``          -> ``-dt ^ d^s F``
    * ``*d^s* f^p_s``           -> ``(-1)^p *_s d^s *_s f^p_s``
    * ``*d^s* (dt ^ F)``        -> ``(-1)^p dt ^ *_s d^s *_s F``
    * ``*(dt ^ dt_t)* (dt ^ F)`` -> ``*_s dt_t *_s F``

    Terms carrying ``dt ^`` land in the ``G`` row of one degree lower.
    """
    n = space_dim
    pat: Pattern = {}

    def add(row: str, col: str, sign: int, kind: str) -> None:
        if (row, col) in pat:
            raise AssertionError(f"duplicate block {(row, col)}")
        pat[(row, col)] = (sign, kind)

    for q in range(n + 2):
        # d f^(q-1)
        p = q - 1
        if p >= 0:
            if p <= n:
                add(_G(p), _f(p), +1, "dt")
            if 1 <= p and p - 1 <= n:
                add(_G(p), _F(p - 1), -1, "d")
            if p <= n - 1 and q <= n:
                add(_g(q), _f(p), +1, "d")
        # (-1)^(q+1) *d* f^(q+1)
        p = q + 1
        s = (-1) ** p
        if p - 1 <= n and q <= n:
            add(_g(q), _F(p - 1), s, "sdts")
        if q - 1 >= 0 and p - 1 <= n:
            add(_G(q - 1), _F(p - 1), s * (-1) ** p, "sds")
        if p <= n and q <= n:
            add(_g(q), _f(p), s * (-1) ** p, "sds")
    return pat


def parse_pattern(text: str) -> Pattern:
    pat: Pattern = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ValueError(f"pattern line {lineno}: expected 'row col sign kind'")
        row, col, sign, kind = parts
        if row not in ROWS or col not in COLS or kind not in KINDS or sign not in "+-":
            raise ValueError(f"pattern line {lineno}: bad entry {line!r}")
        pat[(row, col)] = (1 if sign == "+" else -1, kind)
    return pat


def load_golden_pattern(path: str | Path | None = None) -> Pattern:
    if path is None:
        text = resources.files("conslaw").joinpath("data/pattern_v1.txt").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return parse_pattern(text)


def compare_patterns(actual: Pattern, golden: Pattern) -> list[str]:
    """Human-readable list of block mismatches (empty when identical)."""
    problems = []
    for row in ROWS:
        for col in COLS:
            a, g = actual.get((row, col)), golden.get((row, col))
            if a == g:
                continue
            fmt = lambda b: "0" if b is None else f"{'+' if b[0] > 0 else '-'}{b[1]}"
            problems.append(f"block (row {row}, col {col}): expected {fmt(g)}, got {fmt(a)}")
    return problems


# -- elementary discrete operators -------------------------------------------

def _kron(mat: sp.spmatrix, m: int) -> sp.csr_matrix:
    mat = sp.csr_matrix(mat, dtype=float)
    return mat if m == 1 else sp.kron(mat, sp.identity(m), format="csr")


def d_matrix(cx: CubicalComplex, degree: int, dual: bool, fiber_dim: int = 1) -> sp.csr_matrix:
    """Exterior derivative on primal or dual ``degree``-cochains.

    On dual q-cochains (indexed by primal (3-q)-cells) the derivative is
    ``(-1)^(q+1) D_(2-q)^T``.
    """
    if not dual:
        return _kron(cx.incidence(degree), fiber_dim)
    q = degree
    return _kron(((-1) ** (q + 1)) * cx.incidence(cx.dim - 1 - q).T, fiber_dim)


def star_matrix(h: HodgeMap, dual: bool, fiber_dim: int = 1) -> sp.csr_matrix:
    """Hodge primal -> dual, or its inverse dual -> primal when ``dual``."""
    return h.inverse_operator(fiber_dim) if dual else h.operator(fiber_dim)


@dataclass(frozen=True)
class Block:
    sign: int
    kind: str
    matrix: sp.csr_matrix  # spatial map, or weight applied to the slot's time derivative


@dataclass(eq=False)
class BlockOperator:
    """Assembled split conservation law on one complex, for primal or dual fields."""

    complex: CubicalComplex
    fiber_dim: int
    dual: bool
    hodges: Mapping[str, HodgeMap]
    blocks: dict[tuple[str, str], Block]

    def pattern(self) -> Pattern:
        return {k: (b.sign, b.kind) for k, b in self.blocks.items()}

    def row_blocks(self, row: str) -> list[tuple[str, Block]]:
        return [(col, self.blocks[(row, col)]) for col in COLS if (row, col) in self.blocks]

    def spatial(self, row: str, col: str) -> sp.csr_matrix | None:
        b = self.blocks.get((row, col))
        if b is None or b.kind in TEMPORAL_KINDS:
            return None
        return b.matrix

    def temporal(self, row: str, col: str) -> sp.csr_matrix | None:
        b = self.blocks.get((row, col))
        if b is None or b.kind not in TEMPORAL_KINDS:
            return None
        return b.matrix

    def apply_row(
        self,
        row: str,
        field: GeneralField,
        time_derivative: Callable[[str], Cochain | None] | None = None,
    ) -> Cochain:
        """Left-hand side of one row of the law applied to ``field``."""
        out = zero_cochain(self.complex, SLOT_DEGREES[row], self.fiber_dim, self.dual).flat().copy()
        for col, blk in self.row_blocks(row):
            if blk.kind in TEMPORAL_KINDS:
                rate = time_derivative(col) if time_derivative is not None else None
                if rate is None:
                    continue
                x = rate.flat()
            else:
                c = field[col]
                if c is None:
                    continue
                x = c.flat()
            out += blk.matrix @ x
        return Cochain(SLOT_DEGREES[row], out.reshape(-1, self.fiber_dim), self.complex, self.dual)


def _block_matrix(
    cx: CubicalComplex,
    kind: str,
    sign: int,
    col: str,
    dual: bool,
    m: int,
    hodges: Mapping[str, HodgeMap],
    vacuum: Mapping[int, HodgeMap],
) -> sp.csr_matrix:
    p = SLOT_DEGREES[col]
    if kind == "dt":
        mat = sp.identity(cx.cell_counts[cx.dim - p if dual else p] * m, format="csr")
    elif kind == "d":
        mat = d_matrix(cx, p, dual, m)
    elif kind == "sds":
        inner = star_matrix(hodges[col], dual, m)
        dd = d_matrix(cx, cx.dim - p, not dual, m)
        outer_degree = p - 1 if not dual else cx.dim - p + 1
        outer = star_matrix(vacuum[outer_degree], not dual, m)
        mat = outer @ dd @ inner
    elif kind == "sdts":
        inner = star_matrix(hodges[col], dual, m)
        outer = star_matrix(vacuum[p if not dual else cx.dim - p], not dual, m)
        mat = outer @ inner
    else:
        raise ValueError(kind)
    mat = sp.csr_matrix(sign * mat)
    mat.eliminate_zeros()
    return mat


def assemble_block_operator(
    complex: CubicalComplex,
    hodges: Mapping[str, HodgeMap],
    fiber_dim: int = 1,
    dual: bool = False,
    pattern: Pattern | None = None,
) -> BlockOperator:
    """Assemble the split law.

    ``hodges`` maps each field slot to the (material) Hodge applied to it;
    for a dual field the Hodge of slot degree q has primal degree 3-q.  Every
    slot with a star-type block must be covered.  The outer stars are vacuum.
    """
    if complex.dim != 3:
        raise ValueError("the split law is assembled on a 3D spatial complex")
    if fiber_dim not in (1, 3):
        raise ValueError(f"fiber_dim must be 1 or 3, got {fiber_dim}")
    pat = derive_split_pattern() if pattern is None else dict(pattern)
    needed = sorted({col for (_, col), (_, kind) in pat.items() if kind in NEEDS_HODGE}, key=COLS.index)
    for col in needed:
        h = hodges.get(col)
        if h is None:
            raise ValueError(f"missing Hodge map for slot {col}")
        want = 3 - SLOT_DEGREES[col] if dual else SLOT_DEGREES[col]
        if h.degree != want or h.complex is not complex:
            raise ValueError(f"Hodge for slot {col} must have degree {want} on this complex")
    vacuum = {p: build_hodge(complex, p) for p in range(4)}
    blocks = {}
    for (row, col), (sign, kind) in pat.items():
        blocks[(row, col)] = Block(sign, kind, _block_matrix(complex, kind, sign, col, dual, fiber_dim, hodges, vacuum))
    return BlockOperator(complex, fiber_dim, dual, dict(hodges), blocks)


# -- residuals -----------------------------------------------------------------

@dataclass(eq=False)
class Residual:
    """Row-wise ``L(field) - source``."""

    rows: dict[str, Cochain]

    def l2(self, row: str) -> float:
        return float(np.linalg.norm(self.rows[row].values))

    def max(self, row: str) -> float:
        v = self.rows[row].values
        return float(np.max(np.abs(v))) if v.size else 0.0

    def norms(self) -> dict[str, tuple[float, float]]:
        return {r: (self.l2(r), self.max(r)) for r in ROWS}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", "l2", "max"])
        for r in ROWS:
            w.writerow([r, repr(self.l2(r)), repr(self.max(r))])
        return buf.getvalue()


TimeDerivative = Callable[[str], "Cochain | None"]


def _as_closure(td: TimeDerivative | Mapping[str, Cochain] | None) -> TimeDerivative | None:
    if td is None or callable(td):
        return td
    return lambda name: td.get(name)


def evaluate_residual(
    op: BlockOperator,
    field: GeneralField,
    source: SourceField | None = None,
    time_derivative: TimeDerivative | Mapping[str, Cochain] | None = None,
) -> Residual:
    """Evaluate all eight rows; unassigned slots count as zero.

    ``time_derivative(slot)`` returns the time derivative of a field slot as a
    cochain of the slot's type (or ``None`` for zero).  Without it the field
    is treated as static.
    """
    if field.complex is not op.complex:
        raise ValueError("field lives on a different complex than the operator")
    if field.fiber_dim != op.fiber_dim or field.dual != op.dual:
        raise ValueError("field shape (fiber / primal-dual) does not match the operator")
    if source is not None:
        if source.complex is not op.complex or source.fiber_dim != op.fiber_dim or source.dual != op.dual:
            raise ValueError("source shape does not match the operator")
    closure = _as_closure(time_derivative)
    if closure is not None:
        inner = closure

        def closure(name: str, _inner=inner):
            c = _inner(name)
            if c is not None and (
                c.complex is not op.complex
                or c.degree != SLOT_DEGREES[name]
                or c.dual != op.dual
                or c.fiber_dim != op.fiber_dim
            ):
                raise ValueError(f"time derivative for {name} has the wrong shape")
            return c

    rows = {}
    for row in ROWS:
        lhs = op.apply_row(row, field, closure)
        if source is not None and source[row] is not None:
            lhs = lhs - source[row]
        rows[row] = lhs
    return Residual(rows)


def finite_difference(before: GeneralField, after: GeneralField, dt: float) -> TimeDerivative:
    """Time derivative closure ``(after - before) / dt`` per slot."""
    if dt == 0:
        raise ValueError("dt must be nonzero")

    def rate(name: str) -> Cochain | None:
        a, b = after[name], before[name]
        if a is None and b is None:
            return None
        return after.get(name).with_values((after.get(name).values - before.get(name).values) / dt)

    return rate


# -- 4D decomposition oracle ---------------------------------------------------

@dataclass
class DecompositionReport:
    discrepancy: dict[int, int] = field(default_factory=dict)
    time_only_space_rows: dict[int, int] = field(default_factory=dict)
    trials: int = 0
    extents: tuple[int, ...] = ()

    @property
    def passed(self) -> bool:
        return all(v == 0 for v in self.discrepancy.values()) and all(
            v == 0 for v in self.time_only_space_rows.values()
        )

    def lines(self) -> list[str]:
        out = []
        for p, v in sorted(self.discrepancy.items()):
            out.append(f"4D split p={p} extents={self.extents}: max discrepancy {v}")
        return out


def verify_4d_decomposition(
    complex4: CubicalComplex,
    trials: int = 100,
    seed: int = 0,
    low: int = -9,
    high: int = 9,
) -> DecompositionReport:
    """Check ``d f = dt ^ dt_t f_s + d^s f_t + d^s f_s`` cell by cell.

    The full 4D incidence applied to random integer cochains is compared with
    the split form assembled from 3D spatial incidence operators and forward
    time differences.  All arithmetic is integer; discrepancies must be 0.
    """
    split = spacetime_split(complex4)
    space = split.space
    nt = complex4.extents[0]
    t_per = complex4.periodic[0]
    n_levels = nt if t_per else nt + 1
    rng = np.random.default_rng(seed)
    report = DecompositionReport(trials=trials, extents=complex4.extents)
    for p in range(4):
        D4 = complex4.incidence(p)
        tl_p, lv_p, si_p = split.time_like[p], split.level[p], split.spatial_index[p]
        tl_q, lv_q, si_q = split.time_like[p + 1], split.level[p + 1], split.spatial_index[p + 1]
        worst = 0
        worst_time_only = 0
        for trial in range(trials):
            f = rng.integers(low, high + 1, size=complex4.cell_counts[p], dtype=np.int64)
            if trial == 0:
                f_time_only = np.where(tl_p, f, 0)
                worst_time_only = max(
                    worst_time_only, int(np.max(np.abs((D4 @ f_time_only)[~tl_q]), initial=0))
                )
            full = D4 @ f
            fs = np.zeros((n_levels, space.cell_counts[p]), dtype=np.int64)
            fs[lv_p[~tl_p], si_p[~tl_p]] = f[~tl_p]
            if p >= 1:
                Ft = np.zeros((nt, space.cell_counts[p - 1]), dtype=np.int64)
                Ft[lv_p[tl_p], si_p[tl_p]] = f[tl_p]
            out = np.zeros(complex4.cell_counts[p + 1], dtype=np.int64)
            # space-like (p+1)-cells: spatial derivative of the space part
            if p < 3:
                ds = (space.incidence(p) @ fs.T).T
                mask = ~tl_q
                out[mask] = ds[lv_q[mask], si_q[mask]]
            # time-like (p+1)-cells: time difference of f_s minus d^s of F
            mask = tl_q
            lv, si = lv_q[mask], si_q[mask]
            nxt = (lv + 1) % n_levels
            val = fs[nxt, si] - fs[lv, si]
            if p >= 1:
                dF = (space.incidence(p - 1) @ Ft.T).T
                val = val - dF[lv, si]
            out[mask] = val
            worst = max(worst, int(np.max(np.abs(full - out), initial=0)))
        report.discrepancy[p] = worst
        report.time_only_space_rows[p] = worst_time_only
    return report


def incidence_triplets(mat: sp.spmatrix) -> Iterable[tuple[int, int, int]]:
    coo = sp.coo_matrix(mat)
    order = np.lexsort((coo.col, coo.row))
    for k in order:
        yield int(coo.row[k]), int(coo.col[k]), int(coo.data[k])
