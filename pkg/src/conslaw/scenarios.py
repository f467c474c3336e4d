"""Initial conditions and measurements for the shipped demo runs."""
from __future__ import annotations

import ast
import math
from typing import Callable, Mapping

import numpy as np

from .cochain import project_function
from .models import BoundModel
from .timestep import RunResult, measure_frequency, peak_position

__all__ = [
    "INITIALIZERS",
    "ANALYSES",
    "initial_values",
    "analyse",
    "evaluate_expression",
    "vector_to_two_form",
    "pulse_speed",
    "expected_energy",
]

_SAFE = {
    name: getattr(np, name)
    for name in (
        "sin", "cos", "tan", "exp", "log", "sqrt", "abs", "tanh", "sinh", "cosh",
        "arctan", "arctan2", "where", "minimum", "maximum", "ones_like", "zeros_like",
    )
}
_SAFE.update(pi=math.pi, e=math.e)

# arithmetic, comparisons, calls of plain names, lists: nothing else
_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.BoolOp, ast.Compare, ast.IfExp, ast.Call,
    ast.Name, ast.Load, ast.Constant, ast.List, ast.Tuple,
    ast.operator, ast.unaryop, ast.boolop, ast.cmpop,
)


def _check_expression(expr: str) -> ast.Expression:
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse expression {expr!r}: {exc.msg}") from None
    for node in ast.walk(tree):
        if not isinstance(node, _NODES):
            raise ValueError(f"expression {expr!r}: {type(node).__name__} is not allowed")
        if isinstance(node, ast.Call) and (not isinstance(node.func, ast.Name) or node.keywords):
            raise ValueError(f"expression {expr!r}: only plain function calls are allowed")
    return tree


def evaluate_expression(expr: str, points: np.ndarray, t: float = 0.0, extra: Mapping[str, float] | None = None) -> np.ndarray:
    """Evaluate ``expr`` in ``x, y, z, t`` with a small numpy namespace.

    The result is broadcast to one value per point, or one row per point
    when the expression is a list (vector components).
    """
    ns = dict(_SAFE)
    ns.update(extra or {})
    ns.update(x=points[:, 0], y=points[:, 1], z=points[:, 2], t=t)
    tree = _check_expression(expr)
    try:
        val = eval(compile(tree, "<expression>", "eval"), {"__builtins__": {}}, ns)
    except Exception as exc:  # report any failure as a bad expression
        raise ValueError(f"cannot evaluate expression {expr!r}: {exc}") from None
    n = points.shape[0]
    if isinstance(val, (list, tuple)):
        return np.stack([np.broadcast_to(np.asarray(v, dtype=float), (n,)) for v in val], axis=1)
    return np.broadcast_to(np.asarray(val, dtype=float), (n,)).copy()


def vector_to_two_form(v: np.ndarray) -> np.ndarray:
    """Flux vector ``(vx, vy, vz)`` to 2-form components ``(dxdy, dxdz, dydz)``."""
    return np.stack([v[:, 2], -v[:, 1], v[:, 0]], axis=1)


def _box(bound: BoundModel) -> np.ndarray:
    cx = bound.complex
    return np.array(cx.extents, dtype=float) * np.array(cx.spacings)


def _float(params: Mapping[str, str], key: str, default: float) -> float:
    return float(params.get(key, default))


# -- initial conditions ------------------------------------------------------------

def _maxwell_cavity(bound: BoundModel, params) -> dict[str, np.ndarray]:
    lx, ly, lz = _box(bound)
    mx, my = int(params.get("mx", 1)), int(params.get("my", 1))

    def e(x):
        z = np.zeros(len(x))
        ez = np.sin(mx * np.pi * x[:, 0] / lx) * np.sin(my * np.pi * x[:, 1] / ly)
        return np.stack([z, z, ez], axis=1)

    return {"e": project_function(bound.complex, 1, 1, e).values}


def _maxwell_plane_wave(bound: BoundModel, params) -> dict[str, np.ndarray]:
    lx = _box(bound)[0]
    k = 2 * np.pi * int(params.get("mode", 1)) / lx
    amp = _float(params, "amplitude", 1.0)

    def e(x):
        z = np.zeros(len(x))
        return np.stack([z, amp * np.cos(k * x[:, 0]), z], axis=1)

    def b(x):
        z = np.zeros(len(x))
        return vector_to_two_form(np.stack([z, z, amp * np.cos(k * x[:, 0])], axis=1))

    cx = bound.complex
    return {"e": project_function(cx, 1, 1, e).values, "b": project_function(cx, 2, 1, b).values}


def _schrodinger_packet(bound: BoundModel, params) -> dict[str, np.ndarray]:
    box = _box(bound)
    x0 = _float(params, "x0", 0.5 * box[0])
    width = _float(params, "width", 0.05 * box[0])
    k = _float(params, "k", 0.0)
    x = bound.complex.cell_centers(0)[:, 0]
    env = np.exp(-((x - x0) ** 2) / (2 * width**2))
    return {"R": env * np.cos(k * x), "I": env * np.sin(k * x)}


def _schrodinger_plane_wave(bound: BoundModel, params) -> dict[str, np.ndarray]:
    k = 2 * np.pi * int(params.get("mode", 1)) / _box(bound)[0]
    x = bound.complex.cell_centers(0)[:, 0]
    return {"R": np.cos(k * x), "I": np.sin(k * x)}


def _schrodinger_ground(bound: BoundModel, params) -> dict[str, np.ndarray]:
    x = bound.complex.cell_centers(0)[:, 0]
    return {"R": np.sin(np.pi * x / _box(bound)[0]), "I": np.zeros_like(x)}


def _elastic_pulse(bound: BoundModel, params) -> dict[str, np.ndarray]:
    cx = bound.complex
    h = cx.spacings[0]
    width = _float(params, "width_cells", 40.0) * h
    sigma = width / 4.0
    x0 = _float(params, "x0", 0.25 * _box(bound)[0])
    c = float(bound.spec.params["wave_speed"])
    lx = _box(bound)[0]

    def g(x):
        # periodic distance to the centre
        d = (x - x0 + 0.5 * lx) % lx - 0.5 * lx
        return np.exp(-(d**2) / (2 * sigma**2))

    u = np.zeros((cx.cell_counts[0], 3))
    u[:, 0] = -c * g(cx.cell_centers(0)[:, 0])
    eps = np.zeros((cx.cell_counts[1], 3))
    blk = cx.block_of(1, (0,))
    sl = slice(blk.offset, blk.offset + blk.size)
    eps[sl, 0] = g(cx.cell_centers(1)[sl, 0]) * h
    return {"u": u.reshape(-1), "eps": eps.reshape(-1)}


def _elastic_rigid(bound: BoundModel, params) -> dict[str, np.ndarray]:
    cx = bound.complex
    vel = [float(v) for v in str(params.get("velocity", "1,0,0")).split(",")]
    u = np.tile(np.asarray(vel, dtype=float), (cx.cell_counts[0], 1))
    return {"u": u.reshape(-1)}


def _expressions(bound: BoundModel, params) -> dict[str, np.ndarray]:
    out = {}
    cx = bound.complex
    m = bound.fiber_dim
    for v in bound.spec.variables:
        expr = params.get(v.name)
        if expr is None:
            continue
        if v.degree == 0:
            vals = evaluate_expression(expr, cx.cell_centers(0))
            out[v.name] = vals.reshape(-1)
            continue

        def f(x, expr=expr, deg=v.degree):
            vec = evaluate_expression(expr, x)
            if vec.ndim == 1:
                return vec
            if m == 1 and deg == 2:
                return vector_to_two_form(vec)
            return vec

        out[v.name] = project_function(cx, v.degree, 1, f).values.reshape(-1) if m == 1 else _vector_form(cx, v.degree, f)
    return out


def _vector_form(cx, degree, f) -> np.ndarray:
    # vector-valued forms: the expression gives fiber components per point,
    # each multiplied by the cell measure (all cell types alike)
    centers = cx.cell_centers(degree)
    vals = np.asarray(f(centers), dtype=float).reshape(len(centers), -1)
    if vals.shape[1] != 3:
        raise ValueError("vector-valued initial data needs three components")
    return (vals * cx.primal_measure(degree)[:, None]).reshape(-1)


INITIALIZERS: dict[str, dict[str, Callable]] = {
    "maxwell": {"cavity": _maxwell_cavity, "plane_wave": _maxwell_plane_wave},
    "schrodinger": {"packet": _schrodinger_packet, "plane_wave": _schrodinger_plane_wave,
                    "box_ground_state": _schrodinger_ground},
    "elasticity": {"p_pulse": _elastic_pulse, "rigid": _elastic_rigid},
}
INITIALIZERS["yang-mills"] = INITIALIZERS["maxwell"]


def initial_values(bound: BoundModel, kind: str, params: Mapping[str, str], noise: float = 0.0, seed: int = 0) -> dict[str, np.ndarray]:
    """Initial variable values; ``noise`` adds seeded Gaussian perturbations."""
    if kind == "zero":
        vals = bound.zero_state()
    elif kind == "expression":
        vals = _expressions(bound, params)
    else:
        table = INITIALIZERS.get(bound.spec.name, {})
        if kind not in table:
            avail = ", ".join(["zero", "expression", *table])
            raise ValueError(f"unknown initial condition {kind!r} for {bound.spec.name}; available: {avail}")
        vals = table[kind](bound, params)
    full = bound.zero_state()
    for k, v in vals.items():
        full[k] = np.asarray(v, dtype=float).reshape(-1)
    if noise:
        rng = np.random.default_rng(seed)
        for k in sorted(full):
            full[k] = full[k] + noise * rng.standard_normal(full[k].shape)
    return bound.apply_clamp(full)


# -- measurements ---------------------------------------------------------------------

def _dispersion(bound: BoundModel, result: RunResult, init: Mapping[str, str], probe: str) -> dict[str, float]:
    dt = result.column("time")[1] - result.column("time")[0]
    omega = measure_frequency(result.column(probe), dt)
    k = 2 * np.pi * int(init.get("mode", 1)) / _box(bound)[0]
    c = float(bound.spec.params["wave_speed"])
    speed = omega / k
    return {"omega": omega, "phase_speed": speed, "exact_speed": c, "phase_speed_error": abs(speed - c) / c}


def _free_dispersion(bound: BoundModel, result: RunResult, init, probe: str) -> dict[str, float]:
    dt = result.column("time")[1] - result.column("time")[0]
    omega = measure_frequency(result.column(probe), dt)
    k = 2 * np.pi * int(init.get("mode", 1)) / _box(bound)[0]
    hbar, m = float(bound.spec.params["hbar"]), float(bound.spec.params["mass"])
    exact = hbar * k * k / (2 * m)
    return {"omega": omega, "exact_omega": exact, "omega_error": abs(omega - exact) / exact}


def expected_energy(bound: BoundModel, values: Mapping[str, np.ndarray]) -> float:
    """``<H>`` of the discrete Schrodinger state (vertex-weighted)."""
    w = bound.weights["R"]
    hbar = float(bound.spec.params["hbar"])
    a = bound.stages[0]  # hbar dR/dt = H I
    hi = hbar * bound.rate(a, values, 0.0)
    num = float(values["I"] @ (w @ hi))
    b = bound.stages[1]  # hbar dI/dt = -H R
    hr = -hbar * bound.rate(b, values, 0.0)
    num += float(values["R"] @ (w @ hr))
    den = float(values["R"] @ (w @ values["R"]) + values["I"] @ (w @ values["I"]))
    return num / den


def _ground_state(bound: BoundModel, result: RunResult, init, probe: str) -> dict[str, float]:
    dt = result.column("time")[1] - result.column("time")[0]
    omega = measure_frequency(result.column(probe), dt)
    hbar, m = float(bound.spec.params["hbar"]), float(bound.spec.params["mass"])
    length = _box(bound)[0]
    exact = hbar**2 * np.pi**2 / (2 * m * length**2)
    energy = hbar * omega
    return {
        "ground_energy": energy,
        "exact_energy": exact,
        "energy_error": abs(energy - exact) / exact,
        "expected_hamiltonian": expected_energy(bound, result.state.values),
    }


def analyse(
    kind: str,
    bound: BoundModel,
    result: RunResult,
    init_params: Mapping[str, str],
    initial: Mapping[str, np.ndarray],
    probe: str | None = None,
) -> dict[str, float]:
    """Named post-run measurement (``none`` gives an empty dict)."""
    if kind == "none":
        return {}
    out: dict[str, float] = {"energy_drift": result.energy_drift}
    if kind in ("energy", "norm"):
        e = result.column("energy")
        out["initial"] = float(e[0])
        out["final"] = float(e[-1])
        for var, w in bound.weights.items():
            x = result.state.values[var]
            out[f"final_{var}_part"] = 0.5 * float(x @ (w @ x))
        return out
    if kind == "pulse_speed":
        out.update(pulse_speed(bound, initial, result.state.values, result.state.t - result.diagnostics[0]["time"]))
        return {k: float(v) for k, v in out.items()}
    if probe is None:
        raise ValueError(f"analysis {kind!r} needs a probe")
    fn = {"dispersion": _dispersion, "free_dispersion": _free_dispersion, "ground_state": _ground_state}.get(kind)
    if fn is None:
        raise ValueError(f"unknown analysis {kind!r}; available: none, energy, norm, {', '.join(ANALYSES)}")
    out.update(fn(bound, result, init_params, probe))
    return {k: float(v) for k, v in out.items()}


def pulse_speed(bound: BoundModel, before: Mapping[str, np.ndarray], after: Mapping[str, np.ndarray], elapsed: float) -> dict[str, float]:
    """Speed of the |u_x| peak along x between two states (x-periodic grid)."""
    cx = bound.complex
    x = cx.cell_centers(0)
    line = (x[:, 1] == 0) & (x[:, 2] == 0)
    xs = x[line, 0]
    order = np.argsort(xs)
    lx = _box(bound)[0]
    period = lx if cx.periodic[0] else None
    p0 = peak_position(np.abs(before["u"].reshape(-1, 3)[line, 0])[order], xs[order], period)
    p1 = peak_position(np.abs(after["u"].reshape(-1, 3)[line, 0])[order], xs[order], period)
    dist = p1 - p0
    c = float(bound.spec.params["wave_speed"])
    if period is not None:
        # unwrap towards the expected travel distance
        dist += lx * round((c * elapsed - dist) / lx)
    speed = dist / elapsed
    return {
        "distance": dist,
        "expected_distance": c * elapsed,
        "front_speed": speed,
        "exact_speed": c,
        "speed_error": abs(speed - c) / c,
    }


ANALYSES = ("dispersion", "free_dispersion", "ground_state", "pulse_speed")
