"""Explicit staggered leapfrog for bound models.

A model provides two stages.  The first stage's variable lives at half
steps, the second's at whole steps; one step is the symmetric sequence
``A(dt/2) B(dt) A(dt/2)``, which is exactly time-reversible and conserves
the staggered quadratic form reported by :meth:`BoundModel.monitor`.  The
kinematic rows hold exactly because each update *is* the row solved for the
time derivative.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .grid import CubicalComplex
from .models import BoundModel, ModelSpec

__all__ = [
    "DivergedError",
    "SteppingPlan",
    "SimulationState",
    "Probe",
    "RunResult",
    "cfl_bound",
    "make_plan",
    "initial_state",
    "step",
    "run",
    "stage_records",
    "measure_frequency",
    "peak_position",
]


class DivergedError(RuntimeError):
    def __init__(self, step: int, reason: str, result: "RunResult | None" = None):
        super().__init__(f"diverged at step {step}: {reason}")
        self.step = step
        self.reason = reason
        self.result = result


def _resolved_spacings(cx: CubicalComplex) -> list[float]:
    # A periodic axis with a single cell carries no variation: D rows cancel.
    return [h for n, h, per in zip(cx.extents, cx.spacings, cx.periodic) if not (per and n == 1)]


def cfl_bound(model: ModelSpec, complex: CubicalComplex) -> float:
    """Largest stable time step for ``model`` on ``complex``.

    Waves: ``(1/c_max) (sum 1/h^2)^(-1/2)``.  Schrodinger:
    ``0.9 / ((hbar/2m) sum 4/h^2 + V_max/hbar)``.  Degenerate axes (periodic
    with one cell) do not count.
    """
    hs = _resolved_spacings(complex)
    inv = sum(1.0 / h**2 for h in hs)
    if model.cfl_kind == "wave":
        c = float(model.params["wave_speed"])
        return math.inf if inv == 0 else 1.0 / (c * math.sqrt(inv))
    if model.cfl_kind == "schrodinger":
        hbar, mass = float(model.params["hbar"]), float(model.params["mass"])
        pot = model.params.get("potential", 0.0)
        if callable(pot):
            vmax = float(np.max(np.abs(pot(complex.cell_centers(0)))))
        else:
            vmax = abs(float(pot))
        rate = hbar / (2 * mass) * 4 * inv + vmax / hbar
        return math.inf if rate == 0 else 0.9 / rate
    raise ValueError(f"unknown CFL kind {model.cfl_kind!r}")


@dataclass(frozen=True)
class SteppingPlan:
    dt: float
    steps: int
    cfl: float
    staggering: Mapping[str, str]  # variable -> "half" | "whole"
    order: tuple[str, str]  # variables updated by stage A then stage B
    monitor_every: int = 1
    divergence_factor: float | None = 1e6  # monitored value growth that counts as divergence

    def __post_init__(self) -> None:
        if not math.isfinite(self.dt) or self.dt == 0:
            raise ValueError("dt must be finite and nonzero")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.monitor_every < 1:
            raise ValueError("monitor_every must be >= 1")

    def reversed(self) -> "SteppingPlan":
        return replace(self, dt=-self.dt)


def make_plan(
    bound: BoundModel,
    steps: int,
    dt: float | None = None,
    courant: float = 0.5,
    allow_unstable: bool = False,
    **kwargs,
) -> SteppingPlan:
    """Plan with explicit ``dt`` or ``dt = courant * cfl_bound``."""
    cfl = cfl_bound(bound.spec, bound.complex)
    if dt is None:
        if not math.isfinite(cfl):
            raise ValueError("no finite CFL bound; give dt explicitly")
        dt = courant * cfl
    if abs(dt) > cfl * (1 + 1e-12) and not allow_unstable:
        raise ValueError(f"dt = {dt:g} exceeds the CFL bound {cfl:g}")
    a, b = bound.stages[0].var, bound.stages[1].var
    stag = {v: "whole" for v in bound.sizes}
    stag[a] = "half"
    return SteppingPlan(float(dt), int(steps), cfl, stag, (a, b), **kwargs)


@dataclass
class SimulationState:
    """Values at a whole time level ``t``.

    The half-step variable is stored at ``t`` as well (the mean of its two
    neighbouring half levels); ``x -/+ dt/2 * rate`` recovers them.
    """

    values: dict[str, np.ndarray]
    t: float = 0.0
    step: int = 0
    history: list[dict] = field(default_factory=list)

    def copy(self) -> "SimulationState":
        return SimulationState({k: v.copy() for k, v in self.values.items()}, self.t, self.step, list(self.history))


def initial_state(bound: BoundModel, values: Mapping[str, np.ndarray] | None = None, t: float = 0.0) -> SimulationState:
    """State from (partial) initial values; Dirichlet cells are zeroed."""
    full = bound.zero_state()
    for k, v in (values or {}).items():
        if k not in full:
            raise KeyError(f"unknown variable {k}")
        arr = np.asarray(v, dtype=float).reshape(-1)
        if arr.shape != full[k].shape:
            raise ValueError(f"initial value for {k} has {arr.size} entries, expected {full[k].size}")
        full[k] = arr
    return SimulationState(bound.apply_clamp(full), t, 0)


def _check_plan(bound: BoundModel, plan: SteppingPlan) -> None:
    if plan.order != (bound.stages[0].var, bound.stages[1].var):
        raise ValueError("stepping plan does not match the model's stages")


def step(state: SimulationState, plan: SteppingPlan, bound: BoundModel) -> SimulationState:
    """One symmetric leapfrog step; returns a new state."""
    _check_plan(bound, plan)
    a, b = bound.stages
    dt, t = plan.dt, state.t
    x = {k: v.copy() for k, v in state.values.items()}
    x[a.var] += 0.5 * dt * bound.rate(a, x, t + 0.25 * dt)
    x[b.var] += dt * bound.rate(b, x, t + 0.5 * dt)
    x[a.var] += 0.5 * dt * bound.rate(a, x, t + 0.75 * dt)
    for k, v in x.items():
        if not np.all(np.isfinite(v)):
            raise DivergedError(state.step + 1, f"non-finite values in {k}")
    return SimulationState(x, t + dt, state.step + 1, state.history)


@dataclass
class StageRecord:
    """Values at which one sub-update was evaluated, and its finite-difference rate."""

    part: str
    row: str
    var: str
    values: dict[str, np.ndarray]
    rates: dict[str, np.ndarray]
    t: float


def stage_records(state: SimulationState, plan: SteppingPlan, bound: BoundModel) -> tuple[SimulationState, list[StageRecord]]:
    """Take one step and record each sub-update for residual evaluation."""
    _check_plan(bound, plan)
    a, b = bound.stages
    dt, t = plan.dt, state.t
    x = {k: v.copy() for k, v in state.values.items()}
    records = []
    for stage, h, tm in ((a, 0.5 * dt, t + 0.25 * dt), (b, dt, t + 0.5 * dt), (a, 0.5 * dt, t + 0.75 * dt)):
        before = {k: v.copy() for k, v in x.items()}
        x[stage.var] = x[stage.var] + h * bound.rate(stage, x, tm)
        rates = {k: np.zeros_like(v) for k, v in x.items()}
        rates[stage.var] = (x[stage.var] - before[stage.var]) / h
        records.append(StageRecord(stage.part, stage.row, stage.var, before, rates, tm))
    return SimulationState(x, t + dt, state.step + 1, state.history), records


@dataclass(frozen=True)
class Probe:
    """Reads ``var`` at flattened cell ``index`` and fiber ``component``."""

    label: str
    var: str
    index: int
    component: int = 0

    def read(self, values: Mapping[str, np.ndarray], fiber_dim: int) -> float:
        return float(values[self.var][self.index * fiber_dim + self.component])


@dataclass
class RunResult:
    state: SimulationState
    diagnostics: list[dict]
    columns: list[str]
    diverged: DivergedError | None = None
    wall_time: float = 0.0

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.diagnostics], dtype=float)

    @property
    def energy_drift(self) -> float:
        e = self.column("energy")
        if e.size == 0 or e[0] == 0:
            return 0.0
        return float(np.max(np.abs(e - e[0])) / abs(e[0]))


def run(
    bound: BoundModel,
    plan: SteppingPlan,
    state: SimulationState,
    probes: Sequence[Probe] = (),
    snapshot: Callable[[SimulationState], None] | None = None,
    snapshot_every: int = 0,
    raise_on_divergence: bool = True,
) -> RunResult:
    """Advance ``plan.steps`` steps, recording diagnostics.

    Each diagnostic row holds step, time, the monitored invariant (energy,
    or norm for Schrodinger), the discrete L2 norm and the probe values.
    The half-kick that ends a step and the one that starts the next share
    one operator application when the first stage does not depend on its own
    variable.
    """
    _check_plan(bound, plan)
    a, b = bound.stages
    cx, dt = bound.complex, plan.dt
    x = {k: v.copy() for k, v in state.values.items()}
    t, n0 = state.t, state.step
    columns = ["step", "time", "energy", "norm"] + [p.label for p in probes]
    rows: list[dict] = []
    cache = not a.depends_on_self

    def record(n: int, t_now: float, base_a: np.ndarray) -> float:
        ext = a.external(cx, t_now)
        ra = base_a if ext is None else base_a + ext
        e = bound.monitor(x, ra, dt)
        row = {"step": n, "time": t_now, "energy": e,
               "norm": math.sqrt(sum(float(v @ v) for v in x.values()))}
        for p in probes:
            row[p.label] = p.read(x, bound.fiber_dim)
        rows.append(row)
        return e

    start = time.perf_counter()
    base_a = a.matvec(x)
    e0 = record(n0, t, base_a)
    diverged = None
    for k in range(plan.steps):
        n = n0 + k + 1
        ext = a.external(cx, t + 0.25 * dt)
        x[a.var] += 0.5 * dt * (base_a if ext is None else base_a + ext)
        x[b.var] += dt * bound.rate(b, x, t + 0.5 * dt)
        base_a = a.matvec(x)
        ext = a.external(cx, t + 0.75 * dt)
        x[a.var] += 0.5 * dt * (base_a if ext is None else base_a + ext)
        if not cache:
            base_a = a.matvec(x)
        t = state.t + (k + 1) * dt
        last = k + 1 == plan.steps
        if (k + 1) % plan.monitor_every == 0 or last:
            e = record(n, t, base_a)
            reason = None
            if not math.isfinite(e) or not all(np.all(np.isfinite(v)) for v in x.values()):
                reason = "non-finite values"
            elif plan.divergence_factor is not None and e0 != 0 and abs(e) > plan.divergence_factor * abs(e0):
                reason = f"monitored value grew by more than {plan.divergence_factor:g}"
            if reason is not None:
                diverged = DivergedError(n, reason)
                break
        if snapshot is not None and snapshot_every and (k + 1) % snapshot_every == 0:
            snapshot(SimulationState({kk: v.copy() for kk, v in x.items()}, t, n))
    final = SimulationState(x, t, n0 + (diverged.step - n0 if diverged else plan.steps), rows)
    result = RunResult(final, rows, columns, diverged, time.perf_counter() - start)
    if diverged is not None:
        diverged.result = result
        if raise_on_divergence:
            raise diverged
    return result


# -- measurements ---------------------------------------------------------------------

def measure_frequency(series: Sequence[float], dt: float) -> float:
    """Angular frequency of a leapfrog oscillation from its samples.

    A single discrete mode obeys ``x[n+1] + x[n-1] = 2 cos(w dt) x[n]``
    exactly; ``cos(w dt)`` is fitted by least squares over all triples.
    """
    x = np.asarray(series, dtype=float)
    if x.size < 3:
        raise ValueError("need at least three samples")
    mid = x[1:-1]
    c = float(np.dot(mid, x[2:] + x[:-2]) / (2.0 * np.dot(mid, mid)))
    return math.acos(max(-1.0, min(1.0, c))) / abs(dt)


def peak_position(values: np.ndarray, positions: np.ndarray, period: float | None = None) -> float:
    """Location of the maximum of ``values`` with quadratic interpolation.

    ``positions`` must be uniformly spaced; with ``period`` the data wrap.
    """
    v = np.asarray(values, dtype=float)
    x = np.asarray(positions, dtype=float)
    i = int(np.argmax(v))
    n = v.size
    if period is not None:
        lo, hi = v[(i - 1) % n], v[(i + 1) % n]
    else:
        if i == 0 or i == n - 1:
            return float(x[i])
        lo, hi = v[i - 1], v[i + 1]
    h = x[1] - x[0]
    denom = lo - 2 * v[i] + hi
    shift = 0.0 if denom == 0 else 0.5 * (lo - hi) / denom
    pos = x[i] + shift * h
    if period is not None:
        pos %= period
    return float(pos)
