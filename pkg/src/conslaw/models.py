"""Physics models as instances of the split conservation law.

A :class:`ModelSpec` is symbolic and independent of any grid.  It names the
state variables, says how each field slot and source slot is built from
them, which rows drive the time stepping, and how the rows read in words.
:func:`instantiate` binds a spec to a complex: it assembles one block
operator per *part* and compiles each stage into an explicit update
``rate(v) = sum_w A_w x_w + c(t)``.

A model may have more than one part.  Schrodinger's equation splits into a
part carried by primal cochains (labelled R) and one carried by dual
cochains (labelled I); each is a separate instance of the law and the two
are coupled only through the time derivative bindings.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .cochain import (
    SLOT_DEGREES,
    Cochain,
    GeneralField,
    SourceField,
    project_function,
)
from .core import (
    COLS,
    ROWS,
    TEMPORAL_KINDS,
    BlockOperator,
    Residual,
    assemble_block_operator,
    evaluate_residual,
)
from .grid import CubicalComplex
from .hodge import HodgeMap, LameMaterial, MaterialField, build_hodge

__all__ = [
    "Term",
    "SlotBinding",
    "SourceBinding",
    "Part",
    "Variable",
    "Stage",
    "ModelSpec",
    "BoundModel",
    "instantiate",
    "maxwell_spec",
    "yang_mills_spec",
    "schrodinger_spec",
    "elasticity_spec",
    "get_model",
    "MODEL_NAMES",
    "row_number",
    "active_rows",
    "row_map",
    "vector_proxy_table",
]

Coef = Union[float, Callable[[CubicalComplex], np.ndarray]]
Material = Union[None, float, np.ndarray, MaterialField, LameMaterial]
External = Callable[[CubicalComplex, float], np.ndarray]


def row_number(row: str) -> int:
    return ROWS.index(row) + 1


# -- symbolic description --------------------------------------------------------

@dataclass(frozen=True)
class Term:
    """``coef * var`` followed by ``ops`` applied left to right.

    ``ops`` entries are ``"d"`` (primal exterior derivative) and ``"star"``
    (vacuum Hodge, primal p -> dual 3-p).  ``coef`` is a number or a
    function of the complex giving one value per cell of the variable.
    """

    var: str
    coef: Coef = 1.0
    ops: tuple[str, ...] = ()


@dataclass(frozen=True)
class SlotBinding:
    slot: str
    value: tuple[Term, ...]
    rate: tuple[Term, ...] | None = None  # None: value map applied to the rates
    symbol: str = ""
    sign: int = 1
    material: Material = None
    material_label: str = "s"
    proxy: str = ""  # vector-calculus name, material included (e.g. "εe")


@dataclass(frozen=True)
class SourceBinding:
    slot: str
    terms: tuple[Term, ...] = ()
    external: External | None = None
    symbol: str = ""
    sign: int = 1
    proxy: str = ""


@dataclass(frozen=True)
class Part:
    label: str
    dual: bool
    slots: tuple[SlotBinding, ...]
    sources: tuple[SourceBinding, ...] = ()

    def binding(self, slot: str) -> SlotBinding | None:
        return next((b for b in self.slots if b.slot == slot), None)

    def source(self, slot: str) -> SourceBinding | None:
        return next((s for s in self.sources if s.slot == slot), None)


@dataclass(frozen=True)
class Variable:
    name: str
    degree: int
    clamp: bool = True  # zeroed on boundary cells under Dirichlet conditions
    description: str = ""


@dataclass(frozen=True)
class Stage:
    part: str
    row: str
    var: str


@dataclass(frozen=True)
class ModelSpec:
    name: str
    fiber_dim: int
    variables: tuple[Variable, ...]
    parts: tuple[Part, ...]
    stages: tuple[Stage, Stage]
    monitor: tuple[tuple[str, str], ...]  # (part, slot) whose Hodge weights a variable
    params: Mapping[str, object] = field(default_factory=dict)
    cfl_kind: str = "wave"
    row_text: Mapping[tuple[str, str], str] = field(default_factory=dict)
    proxy_text: Mapping[tuple[str, str], str] = field(default_factory=dict)
    notes: tuple[str, ...] = ()

    def variable(self, name: str) -> Variable:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)

    def part(self, label: str) -> Part:
        for p in self.parts:
            if p.label == label:
                return p
        raise KeyError(label)

    def __post_init__(self) -> None:
        names = {v.name for v in self.variables}
        for part in self.parts:
            for b in part.slots:
                if b.slot not in COLS:
                    raise ValueError(f"{self.name}: unknown field slot {b.slot}")
                for t in b.value + (b.rate or ()):
                    if t.var not in names:
                        raise ValueError(f"{self.name}: slot {b.slot} uses unknown variable {t.var}")
                    _check_degree(self.variable(t.var).degree, t.ops, SLOT_DEGREES[b.slot], part.dual, b.slot)
            for s in part.sources:
                if s.slot not in ROWS:
                    raise ValueError(f"{self.name}: unknown source slot {s.slot}")
                for t in s.terms:
                    _check_degree(self.variable(t.var).degree, t.ops, SLOT_DEGREES[s.slot], part.dual, s.slot)
        for st in self.stages:
            if st.var not in names:
                raise ValueError(f"{self.name}: stage updates unknown variable {st.var}")


def _term_degree(deg: int, ops: Sequence[str]) -> tuple[int, bool]:
    dual = False
    for op in ops:
        if op == "d":
            if dual:
                raise ValueError("'d' after 'star' is not supported in bindings")
            deg += 1
        elif op == "star":
            if dual:
                raise ValueError("double 'star' is not supported in bindings")
            deg, dual = 3 - deg, True
        else:
            raise ValueError(f"unknown op {op!r}")
    return deg, dual


def _check_degree(var_deg: int, ops, slot_deg: int, dual: bool, slot: str) -> None:
    deg, is_dual = _term_degree(var_deg, ops)
    if deg != slot_deg or is_dual != dual:
        kind = "dual" if dual else "primal"
        raise ValueError(f"slot {slot} needs a {kind} {slot_deg}-cochain; binding gives degree {deg}")


# -- model catalogue ----------------------------------------------------------------

def _positive(name: str, value) -> None:
    v = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(v)) or np.any(v <= 0):
        raise ValueError(f"{name} must be strictly positive")


def _max(value) -> float:
    return float(np.max(np.asarray(value, dtype=float)))


def _min(value) -> float:
    return float(np.min(np.asarray(value, dtype=float)))


def maxwell_spec(
    eps: float | np.ndarray = 1.0,
    mu: float | np.ndarray = 1.0,
    current: Callable[[np.ndarray, float], np.ndarray] | None = None,
    charge: Callable[[np.ndarray, float], np.ndarray] | None = None,
) -> ModelSpec:
    """Maxwell's equations: ``F1s = -e``, ``f2s = b``, ``g1s = *j``, ``G0 = -*q``.

    ``eps`` lives on edges, ``mu`` on faces (``nu = 1/mu``).  ``current(x, t)``
    returns the current density vector at points ``x``; ``charge(x, t)`` the
    charge density.  Dirichlet conditions clamp tangential ``e``.
    """
    _positive("eps", eps)
    _positive("mu", mu)
    nu = 1.0 / np.asarray(mu, dtype=float)
    sources = []
    if current is not None:
        sources.append(
            SourceBinding("g1s", external=lambda cx, t: project_function(cx, 1, 1, lambda x: current(x, t)).values,
                          symbol="⋆_s j", proxy="j")
        )
    else:
        sources.append(SourceBinding("g1s", symbol="⋆_s j", proxy="j"))
    if charge is not None:
        sources.append(
            SourceBinding("G0", external=lambda cx, t: -project_function(cx, 0, 1, lambda x: charge(x, t)).values,
                          symbol="⋆_s q", sign=-1, proxy="q")
        )
    else:
        sources.append(SourceBinding("G0", symbol="⋆_s q", sign=-1, proxy="q"))
    part = Part(
        "",
        dual=False,
        slots=(
            SlotBinding("F1s", (Term("e", -1.0),), symbol="e", sign=-1,
                        material=MaterialField(eps, "ε"), material_label="ε", proxy="εe"),
            SlotBinding("f2s", (Term("b"),), symbol="b", material=MaterialField(nu, "ν"),
                        material_label="ν", proxy="νb"),
        ),
        sources=tuple(sources),
    )
    c_max = float(np.sqrt(_max(nu) / _min(eps)))
    return ModelSpec(
        name="maxwell",
        fiber_dim=1,
        variables=(Variable("e", 1, description="electric field (1-form on edges)"),
                   Variable("b", 2, description="magnetic flux (2-form on faces)")),
        parts=(part,),
        stages=(Stage("", "G2s", "b"), Stage("", "g1s", "e")),
        monitor=(("", "F1s"), ("", "f2s")),
        params={"eps": eps, "mu": mu, "wave_speed": c_max},
        cfl_kind="wave",
        proxy_text={("", "G0"): "div εe = q"},
        notes=("constitutive relations: d = ⋆_ε e, h = ⋆_ν b",),
    )


def yang_mills_spec(**kwargs) -> ModelSpec:
    """Yang-Mills with trivial connection, which is Maxwell's system.

    The non-abelian case (curvature term a ∧ a) is out of scope.
    """
    spec = maxwell_spec(**kwargs)
    return ModelSpec(
        name="yang-mills",
        fiber_dim=spec.fiber_dim,
        variables=spec.variables,
        parts=spec.parts,
        stages=spec.stages,
        monitor=spec.monitor,
        params=spec.params,
        cfl_kind=spec.cfl_kind,
        row_text=spec.row_text,
        proxy_text=spec.proxy_text,
        notes=spec.notes
        + ("alias of maxwell: with a trivial connection the system is Maxwell's; "
           "the non-abelian case is not supported",),
    )


def schrodinger_spec(
    mass: float = 1.0,
    hbar: float = 1.0,
    potential: float | Callable[[np.ndarray], np.ndarray] = 0.0,
) -> ModelSpec:
    """Schrodinger's equation on the real/imaginary split ``phi = R + iI``.

    Both R and I are stored on vertices.  The R part is a primal instance of
    the law with ``F0 = hbar R``, ``f1s = (hbar/2m) q_R`` and sources
    ``G1s = q_R``, ``g0 = -V R`` where ``q_R = -hbar d R`` is eliminated and
    its time derivative neglected.  The I part is the dual instance with
    ``f3s = hbar * I`` and ``F2s = (hbar/2m) * q_I``, ``q_I = hbar * d I``.
    Each part's time derivative of the ``hbar`` slot is taken from the other
    part's variable, which closes the system to

        hbar dR/dt = -(hbar^2/2m) lap I + V I
        hbar dI/dt =  (hbar^2/2m) lap R - V R.
    """
    _positive("mass", mass)
    _positive("hbar", hbar)
    if callable(potential):
        vcoef: Coef = lambda cx: np.asarray(potential(cx.cell_centers(0)), dtype=float).reshape(-1)
    else:
        v0 = float(potential)
        if not np.isfinite(v0):
            raise ValueError("potential must be finite")
        vcoef = v0
    a = hbar * hbar / (2.0 * mass)
    part_r = Part(
        "R",
        dual=False,
        slots=(
            SlotBinding("F0", (Term("R", hbar),), rate=(Term("I", -hbar),), symbol="ħφ_R", proxy="ħφ_R"),
            SlotBinding("f1s", (Term("R", -a, ("d",)),), rate=(), symbol="(ħ/2m)q_R", proxy="(ħ/2m)q_R"),
        ),
        sources=(
            SourceBinding("G1s", (Term("R", -hbar, ("d",)),), symbol="q_R", proxy="q_R"),
            SourceBinding("g0", (Term("R", _neg(vcoef)),), symbol="Vφ_R", sign=-1, proxy="Vφ_R"),
        ),
    )
    part_i = Part(
        "I",
        dual=True,
        slots=(
            SlotBinding("f3s", (Term("I", hbar, ("star",)),), rate=(Term("R", -hbar, ("star",)),),
                        symbol="ħφ_I", proxy="ħφ_I"),
            SlotBinding("F2s", (Term("I", a, ("d", "star")),), rate=(), symbol="(ħ/2m)q_I", proxy="(ħ/2m)q_I"),
        ),
        sources=(
            SourceBinding("G3s", (Term("I", _neg(vcoef), ("star",)),), symbol="Vφ_I", sign=-1, proxy="Vφ_I"),
            SourceBinding("g2s", (Term("I", hbar, ("d", "star")),), symbol="q_I", proxy="q_I"),
        ),
    )
    return ModelSpec(
        name="schrodinger",
        fiber_dim=1,
        variables=(Variable("R", 0, description="real part φ_R (vertices)"),
                   Variable("I", 0, description="imaginary part φ_I (vertex proxy of a dual 3-cochain)")),
        parts=(part_r, part_i),
        stages=(Stage("I", "G3s", "R"), Stage("R", "g0", "I")),
        monitor=(("R", "F0"), ("I", "f3s")),
        params={"mass": mass, "hbar": hbar, "potential": potential},
        cfl_kind="schrodinger",
        row_text={
            ("R", "G1s"): "(ħ/2m) ∂_t q_R − d^s ħφ_R = q_R   (∂_t q_R neglected, so q_R = −ħ d^s φ_R)",
            ("R", "g2s"): "d^s (ħ/2m) q_R = 0   (redundant, d^s d^s = 0)",
        },
        proxy_text={
            ("R", "g0"): "ħ ∂_t φ_I − (ħ²/2m) div grad φ_R = −Vφ_R",
            ("I", "G3s"): "−ħ ∂_t φ_R − (ħ²/2m) div grad φ_I = −Vφ_I",
        },
        notes=(
            "R and I are labels for the two real parts of the wave function",
            "q_R = −ħ d^s φ_R and q_I = ħ d^s φ_I are eliminated; their time derivatives are neglected",
            "φ_I is stored on vertices; its dual 3-cochain is ħ ⋆_s φ_I",
        ),
    )


def _neg(coef: Coef) -> Coef:
    if callable(coef):
        return lambda cx: -np.asarray(coef(cx), dtype=float)
    return -float(coef)


def elasticity_spec(
    rho: float | np.ndarray = 1.0,
    lam: float | np.ndarray = 1.0,
    mu: float | np.ndarray = 1.0,
    body_force: Callable[[np.ndarray, float], np.ndarray] | None = None,
) -> ModelSpec:
    """Small-strain elastodynamics: ``F0 = u`` (velocity), ``f1s = ε``, ``g0 = -*f_v``.

    ``ε`` is the vector-valued 1-form ``d ν`` of the displacement ``ν``; the
    stress is ``σ = ⋆_C ε`` with the isotropic Lamé pair.  ``rho`` lives on
    vertices, ``lam``/``mu`` on cells.
    """
    _positive("rho", rho)
    lam_a, mu_a = np.asarray(lam, dtype=float), np.asarray(mu, dtype=float)
    if np.any(mu_a <= 0) or np.any(lam_a + 2 * mu_a <= 0):
        raise ValueError("elastic moduli need mu > 0 and lam + 2 mu > 0")
    src: SourceBinding
    if body_force is not None:
        src = SourceBinding(
            "g0",
            external=lambda cx, t: -np.asarray(body_force(cx.cell_centers(0), t), dtype=float).reshape(-1, 3),
            symbol="⋆_s f_v", sign=-1, proxy="f_v",
        )
    else:
        src = SourceBinding("g0", symbol="⋆_s f_v", sign=-1, proxy="f_v")
    part = Part(
        "",
        dual=False,
        slots=(
            SlotBinding("F0", (Term("u"),), symbol="u", material=MaterialField(rho, "ρ"),
                        material_label="ρ", proxy="ρu"),
            SlotBinding("f1s", (Term("eps"),), symbol="ε", material=LameMaterial(lam, mu),
                        material_label="C", proxy="σ"),
        ),
        sources=(src,),
    )
    c_p = float(np.sqrt(_max(lam_a + 2 * mu_a) / _min(rho)))
    return ModelSpec(
        name="elasticity",
        fiber_dim=3,
        variables=(Variable("u", 0, description="velocity u = ∂_t ν (vector-valued 0-form)"),
                   Variable("eps", 1, description="strain ε = d^s ν (vector-valued 1-form)")),
        parts=(part,),
        stages=(Stage("", "G1s", "eps"), Stage("", "g0", "u")),
        monitor=(("", "F0"), ("", "f1s")),
        params={"rho": rho, "lam": lam, "mu": mu, "wave_speed": c_p},
        cfl_kind="wave",
        proxy_text={("", "g0"): "ρ ∂_t u − div σ = f_v"},
        notes=("stress σ = ⋆_C ε (isotropic, symmetric)", "displacement ν accumulates u over time"),
    )


MODEL_NAMES = ("maxwell", "schrodinger", "elasticity", "yang-mills")


def get_model(name: str, **params) -> ModelSpec:
    factories = {
        "maxwell": maxwell_spec,
        "schrodinger": schrodinger_spec,
        "elasticity": elasticity_spec,
        "yang-mills": yang_mills_spec,
    }
    try:
        factory = factories[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; available: {', '.join(MODEL_NAMES)}") from None
    return factory(**params)


# -- symbolic tables ------------------------------------------------------------------

def _pattern():
    from .core import derive_split_pattern

    return derive_split_pattern()


def active_rows(model: ModelSpec, part: str | None = None) -> list[str]:
    """Rows with a nonzero block against an assigned slot."""
    pat = _pattern()
    rows = set()
    for p in model.parts:
        if part is not None and p.label != part:
            continue
        assigned = {b.slot for b in p.slots}
        rows |= {r for (r, c) in pat if c in assigned}
    return [r for r in ROWS if r in rows]


_OP_TEXT = {"dt": "∂_t {x}", "d": "d^s {x}", "sds": "⋆_s d^s ⋆_{m} {x}", "sdts": "⋆_s ∂_t ⋆_{m} {x}"}
_PROXY_OP = {
    ("d", 0): "grad", ("d", 1): "curl", ("d", 2): "div",
    ("sds", 1): "div", ("sds", 2): "curl", ("sds", 3): "grad",
}


def _join(terms: list[tuple[int, str]]) -> str:
    out = ""
    for k, (s, txt) in enumerate(terms):
        if k == 0:
            out = ("−" if s < 0 else "") + txt
        else:
            out += (" − " if s < 0 else " + ") + txt
    return out or "0"


def _row_terms(part: Part, row: str, proxy: bool, dual: bool) -> tuple[list, list]:
    pat = _pattern()
    lhs = []
    for col in COLS:
        blk = pat.get((row, col))
        b = part.binding(col)
        if blk is None or b is None:
            continue
        sign, kind = blk
        sign *= b.sign
        if proxy:
            deg = SLOT_DEGREES[col]
            if dual:
                deg = 3 - deg
            name = (b.proxy or b.symbol) if kind in ("sds", "sdts") else b.symbol
            if kind in TEMPORAL_KINDS:
                txt = f"∂_t {name}"
            else:
                key = (kind, deg) if not dual else ({"d": "sds", "sds": "d"}[kind], deg)
                txt = f"{_PROXY_OP.get(key, kind)} {name}"
        else:
            txt = _OP_TEXT[kind].format(x=b.symbol, m=b.material_label)
        lhs.append((sign, txt))
    rhs = []
    s = part.source(row)
    if s is not None and (s.terms or s.external is not None or s.symbol):
        rhs.append((s.sign, s.proxy if proxy else s.symbol))
    return lhs, rhs


def row_text(model: ModelSpec, part: Part, row: str, proxy: bool = False) -> str:
    table = model.proxy_text if proxy else model.row_text
    if (part.label, row) in table:
        return table[(part.label, row)]
    lhs, rhs = _row_terms(part, row, proxy, part.dual)
    return f"{_join(lhs)} = {_join(rhs)}"


def row_map(model: ModelSpec) -> str:
    """Which rows of the law are active and what each one says."""
    lines = [f"model: {model.name} (fiber dimension {model.fiber_dim})"]
    for part in model.parts:
        rows = active_rows(model, part.label)
        head = f"part {part.label} ({'dual' if part.dual else 'primal'} cochains)" if part.label else "rows"
        lines.append(f"{head}: active rows {{{', '.join(str(row_number(r)) for r in rows)}}}")
        for r in rows:
            lines.append(f"  row {row_number(r)} [{r}]: {row_text(model, part, r)}")
    for note in model.notes:
        lines.append(f"note: {note}")
    return "\n".join(lines)


def vector_proxy_table(model: ModelSpec) -> str:
    """Active rows in grad/curl/div form with the model's materials substituted."""
    if model.name not in MODEL_NAMES:
        raise ValueError(f"no vector proxy for model {model.name!r}")
    lines = []
    for part in model.parts:
        for r in active_rows(model, part.label):
            tag = f"{part.label} " if part.label else ""
            lines.append(f"{tag}row {row_number(r)}: {row_text(model, part, r, proxy=True)}")
    return "\n".join(lines)


# -- binding to a grid -----------------------------------------------------------------

def _kron(mat, m: int) -> sp.csr_matrix:
    mat = sp.csr_matrix(mat, dtype=float)
    return mat if m == 1 else sp.kron(mat, sp.identity(m), format="csr")


def _term_matrix(cx: CubicalComplex, t: Term, var_deg: int, m: int, vac: Mapping[int, HodgeMap]) -> sp.csr_matrix:
    n = cx.cell_counts[var_deg]
    coef = t.coef(cx) if callable(t.coef) else t.coef
    coef = np.broadcast_to(np.asarray(coef, dtype=float), (n,))
    mat = _kron(sp.diags(coef), m)
    deg = var_deg
    for op in t.ops:
        if op == "d":
            mat = _kron(cx.incidence(deg), m) @ mat
            deg += 1
        else:
            mat = vac[deg].operator(m) @ mat
            deg = 3 - deg
    return sp.csr_matrix(mat)


def _terms_matrices(cx, terms, spec: ModelSpec, vac) -> dict[str, sp.csr_matrix]:
    out: dict[str, sp.csr_matrix] = {}
    for t in terms:
        mat = _term_matrix(cx, t, spec.variable(t.var).degree, spec.fiber_dim, vac)
        out[t.var] = out[t.var] + mat if t.var in out else mat
    return out


@dataclass(eq=False)
class BoundPart:
    label: str
    dual: bool
    op: BlockOperator
    values: dict[str, dict[str, sp.csr_matrix]]
    rates: dict[str, dict[str, sp.csr_matrix]]
    sources: dict[str, dict[str, sp.csr_matrix]]
    externals: dict[str, External]


@dataclass(eq=False)
class CompiledStage:
    """``rate(var) = sum_w terms[w] @ x_w + scale * external(t)`` with clamped rows zeroed."""

    part: str
    row: str
    var: str
    terms: dict[str, sp.csr_matrix]
    externals: list[tuple[np.ndarray, External]]
    depends_on_self: bool

    def matvec(self, values: Mapping[str, np.ndarray]) -> np.ndarray:
        out = None
        for w, mat in self.terms.items():
            y = mat @ values[w]
            out = y if out is None else out + y
        return out

    def external(self, cx: CubicalComplex, t: float) -> np.ndarray | None:
        out = None
        for scale, fn in self.externals:
            y = scale * np.asarray(fn(cx, t), dtype=float).reshape(-1)
            out = y if out is None else out + y
        return out


@dataclass(eq=False)
class BoundModel:
    spec: ModelSpec
    complex: CubicalComplex
    parts: dict[str, BoundPart]
    stages: tuple[CompiledStage, CompiledStage]
    clamp: dict[str, np.ndarray]  # flattened masks
    weights: dict[str, sp.csr_matrix]
    sizes: dict[str, int]

    @property
    def fiber_dim(self) -> int:
        return self.spec.fiber_dim

    def zero_state(self) -> dict[str, np.ndarray]:
        return {v: np.zeros(n) for v, n in self.sizes.items()}

    def apply_clamp(self, values: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
        out = {}
        for v, x in values.items():
            x = np.array(x, dtype=float).reshape(-1)
            x[self.clamp[v]] = 0.0
            out[v] = x
        return out

    def cochain(self, var: str, values: np.ndarray) -> Cochain:
        deg = self.spec.variable(var).degree
        return Cochain(deg, np.asarray(values).reshape(-1, self.fiber_dim), self.complex)

    def _slot(self, part: BoundPart, slot: str, maps: Mapping[str, sp.csr_matrix], values) -> Cochain:
        flat = None
        for w, mat in maps.items():
            y = mat @ values[w]
            flat = y if flat is None else flat + y
        if flat is None:
            n = self.complex.cell_counts[3 - SLOT_DEGREES[slot] if part.dual else SLOT_DEGREES[slot]]
            flat = np.zeros(n * self.fiber_dim)
        return Cochain(SLOT_DEGREES[slot], flat.reshape(-1, self.fiber_dim), self.complex, part.dual)

    def field(self, part: str, values: Mapping[str, np.ndarray]) -> GeneralField:
        bp = self.parts[part]
        slots = {s: self._slot(bp, s, maps, values) for s, maps in bp.values.items()}
        return GeneralField(self.complex, self.fiber_dim, bp.dual, **slots)

    def source(self, part: str, values: Mapping[str, np.ndarray], t: float) -> SourceField:
        bp = self.parts[part]
        slots = {}
        for s in set(bp.sources) | set(bp.externals):
            c = self._slot(bp, s, bp.sources.get(s, {}), values)
            if s in bp.externals:
                ext = np.asarray(bp.externals[s](self.complex, t), dtype=float).reshape(c.values.shape)
                c = c.with_values(c.values + ext)
            slots[s] = c
        return SourceField(self.complex, self.fiber_dim, bp.dual, **slots)

    def time_derivative(self, part: str, rates: Mapping[str, np.ndarray]) -> Callable[[str], Cochain | None]:
        bp = self.parts[part]

        def rate(slot: str) -> Cochain | None:
            maps = bp.rates.get(slot)
            if maps is None:
                return None
            return self._slot(bp, slot, maps, rates)

        return rate

    def residual(
        self,
        part: str,
        values: Mapping[str, np.ndarray],
        rates: Mapping[str, np.ndarray],
        t: float,
    ) -> Residual:
        return evaluate_residual(
            self.parts[part].op,
            self.field(part, values),
            self.source(part, values, t),
            self.time_derivative(part, rates),
        )

    def rate(self, stage: CompiledStage, values: Mapping[str, np.ndarray], t: float) -> np.ndarray:
        r = stage.matvec(values)
        ext = stage.external(self.complex, t)
        return r if ext is None else r + ext

    def monitor(self, values: Mapping[str, np.ndarray], half_rate: np.ndarray, dt: float) -> float:
        """Staggered quadratic invariant of the leapfrog scheme.

        The variable updated by the first stage lives at half steps; its
        neighbours ``x -/+ dt/2 * rate`` are paired, the others are squared.
        """
        a = self.stages[0].var
        total = 0.0
        for v, w in self.weights.items():
            x = values[v]
            if v == a:
                lo = x - 0.5 * dt * half_rate
                hi = x + 0.5 * dt * half_rate
                total += 0.5 * float(lo @ (w @ hi))
            else:
                total += 0.5 * float(x @ (w @ x))
        return total


def _part_hodges(cx: CubicalComplex, part: Part) -> dict[str, HodgeMap]:
    hodges = {}
    for col in COLS:
        b = part.binding(col)
        deg = 3 - SLOT_DEGREES[col] if part.dual else SLOT_DEGREES[col]
        mat = b.material if b is not None else None
        hodges[col] = build_hodge(cx, deg, mat)
    return hodges


def instantiate(model: ModelSpec, complex: CubicalComplex) -> BoundModel:
    """Bind ``model`` to ``complex``.

    Cells flagged as boundary (on non-periodic box faces) are clamped for
    every variable with ``clamp=True``: zero-valued Dirichlet conditions.
    """
    cx = complex
    m = model.fiber_dim
    vac = {p: build_hodge(cx, p) for p in range(4)}
    parts = {}
    for part in model.parts:
        op = assemble_block_operator(cx, _part_hodges(cx, part), m, part.dual)
        values, rates, sources, externals = {}, {}, {}, {}
        for b in part.slots:
            values[b.slot] = _terms_matrices(cx, b.value, model, vac)
            rates[b.slot] = values[b.slot] if b.rate is None else _terms_matrices(cx, b.rate, model, vac)
        for s in part.sources:
            if s.terms:
                sources[s.slot] = _terms_matrices(cx, s.terms, model, vac)
            if s.external is not None:
                externals[s.slot] = s.external
        parts[part.label] = BoundPart(part.label, part.dual, op, values, rates, sources, externals)

    sizes = {v.name: cx.cell_counts[v.degree] * m for v in model.variables}
    clamp = {}
    for v in model.variables:
        mask = cx.boundary_flags(v.degree) if v.clamp else np.zeros(cx.cell_counts[v.degree], bool)
        clamp[v.name] = np.repeat(mask, m)

    stages = tuple(_compile_stage(model, cx, parts[st.part], st, clamp[st.var]) for st in model.stages)

    weights = {}
    for label, slot in model.monitor:
        bp = parts[label]
        maps = bp.values[slot]
        if len(maps) != 1:
            raise ValueError(f"monitor slot {slot} must depend on exactly one variable")
        (var, vmap), = maps.items()
        h = bp.op.hodges[slot]
        hm = h.inverse_operator(m) if bp.dual else h.operator(m)
        weights[var] = sp.csr_matrix(vmap.T @ hm @ vmap)
    return BoundModel(model, cx, parts, stages, clamp, weights, sizes)


def _compile_stage(model: ModelSpec, cx: CubicalComplex, bp: BoundPart, st: Stage, mask: np.ndarray) -> CompiledStage:
    op = bp.op
    temporal = None
    terms: dict[str, sp.csr_matrix] = {}

    def acc(var: str, mat) -> None:
        terms[var] = terms[var] + mat if var in terms else sp.csr_matrix(mat)

    for col in COLS:
        blk = op.blocks.get((st.row, col))
        if blk is None or col not in bp.values:
            continue
        if blk.kind in TEMPORAL_KINDS:
            for w, rmap in bp.rates[col].items():
                contrib = blk.matrix @ rmap
                if w == st.var:
                    temporal = contrib if temporal is None else temporal + contrib
                elif sp.csr_matrix(contrib).count_nonzero():
                    raise ValueError(f"row {st.row} couples the rate of {w} into the update of {st.var}")
        else:
            for w, vmap in bp.values[col].items():
                acc(w, -(blk.matrix @ vmap))
    for w, smap in bp.sources.get(st.row, {}).items():
        acc(w, smap)
    if temporal is None:
        raise ValueError(f"row {st.row} has no time derivative of {st.var}")
    temporal = sp.csr_matrix(temporal)
    diag = temporal.diagonal()
    off = temporal - sp.diags(diag)
    if sp.csr_matrix(off).count_nonzero():
        raise ValueError(f"time derivative in row {st.row} is not diagonal; explicit update impossible")
    if np.any(diag[~mask] == 0):
        raise ValueError(f"row {st.row} does not determine the rate of {st.var} everywhere")
    scale = np.where(mask, 0.0, 1.0 / np.where(diag == 0, 1.0, diag))
    S = sp.diags(scale)
    compiled = {}
    for w, mat in terms.items():
        mat = sp.csr_matrix(S @ mat)
        mat.eliminate_zeros()
        if mat.nnz:
            compiled[w] = mat
    externals = []
    ext = bp.externals.get(st.row)
    if ext is not None:
        externals.append((scale, ext))
    return CompiledStage(st.part, st.row, st.var, compiled, externals, st.var in compiled)
