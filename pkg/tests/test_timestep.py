import math

import numpy as np
import pytest

from conslaw.grid import build_complex
from conslaw.models import elasticity_spec, instantiate, maxwell_spec, schrodinger_spec
from conslaw.timestep import (
    DivergedError,
    Probe,
    cfl_bound,
    initial_state,
    make_plan,
    measure_frequency,
    peak_position,
    run,
    stage_records,
    step,
)


def unit(n=4, periodic=True, h=1.0):
    return build_complex(3, [n, n, n], [h, h, h], periodic)


def random_values(bound, seed=0):
    rng = np.random.default_rng(seed)
    return {v: rng.normal(size=n) for v, n in bound.sizes.items()}


def test_cfl_maxwell_unit():
    assert cfl_bound(maxwell_spec(), unit()) == pytest.approx(1 / math.sqrt(3))


def test_cfl_elasticity_scales():
    ratio = cfl_bound(elasticity_spec(), unit()) / cfl_bound(maxwell_spec(), unit())
    assert ratio == pytest.approx(1 / math.sqrt(3))


def test_cfl_doubling_spacing():
    for spec in (maxwell_spec(), elasticity_spec(), schrodinger_spec()):
        a = cfl_bound(spec, unit(h=1.0))
        b = cfl_bound(spec, unit(h=2.0))
        if spec.cfl_kind == "wave":
            assert b == pytest.approx(2 * a)
        else:
            # the diffusive-type bound of the Schrodinger leapfrog scales with h^2
            assert b == pytest.approx(4 * a)


def test_cfl_schrodinger_formula():
    cx = build_complex(3, [10, 1, 1], [0.1, 1, 1], (False, True, True))
    spec = schrodinger_spec(mass=2.0, hbar=0.5, potential=3.0)
    want = 0.9 / (0.5 / 4.0 * 4 / 0.01 + 3.0 / 0.5)
    assert cfl_bound(spec, cx) == pytest.approx(want)


def test_cfl_wave_speed_uses_materials():
    assert cfl_bound(maxwell_spec(eps=4.0), unit()) == pytest.approx(2 / math.sqrt(3))


def test_make_plan_refuses_unstable():
    bound = instantiate(maxwell_spec(), unit())
    with pytest.raises(ValueError, match="CFL"):
        make_plan(bound, 10, courant=1.05)
    plan = make_plan(bound, 10, courant=1.05, allow_unstable=True)
    assert plan.dt == pytest.approx(1.05 / math.sqrt(3))
    assert plan.staggering == {"b": "half", "e": "whole"}


def test_zero_stays_zero():
    for spec in (maxwell_spec(), schrodinger_spec(), elasticity_spec()):
        bound = instantiate(spec, unit(3))
        plan = make_plan(bound, 20)
        state = initial_state(bound)
        for _ in range(20):
            state = step(state, plan, bound)
        assert all(not v.any() for v in state.values.values())


def test_maxwell_plane_wave_divergence_free():
    n = 32
    cx = build_complex(3, [n, 1, 1], [1.0 / n, 1, 1], True)
    bound = instantiate(maxwell_spec(), cx)
    vals = bound.zero_state()
    y = cx.block_of(1, (1,))
    x = (np.arange(n) + 0.0) / n
    vals["e"][y.offset : y.offset + y.size] = np.sin(2 * np.pi * x)
    plan = make_plan(bound, 200)
    state = initial_state(bound, vals)
    for _ in range(200):
        state, records = stage_records(state, plan, bound)
        res = bound.residual("", state.values, {k: 0 * v for k, v in state.values.items()}, state.t)
        assert res.max("g3s") == 0
        for rec in records:
            r = bound.residual(rec.part, rec.values, rec.rates, rec.t)
            scale = max(np.abs(v).max() for v in rec.rates.values())
            # the row that produced the update holds to rounding
            assert r.max(rec.row) <= 1e-13 * max(scale, 1.0)


def test_elasticity_constant_velocity_keeps_zero_strain():
    cx = unit(4)
    bound = instantiate(elasticity_spec(), cx)
    u = np.tile([0.3, -1.0, 2.0], cx.cell_counts[0])
    plan = make_plan(bound, 50)
    state = initial_state(bound, {"u": u})
    for _ in range(50):
        state = step(state, plan, bound)
    assert not state.values["eps"].any()
    assert np.array_equal(state.values["u"], u)


@pytest.mark.parametrize("factory", [maxwell_spec, schrodinger_spec, elasticity_spec])
def test_exactness_rows_every_stage(factory):
    cx = build_complex(3, [4, 3, 5], [0.5, 0.7, 0.4], True)
    bound = instantiate(factory(), cx)
    plan = make_plan(bound, 5)
    state = initial_state(bound, random_values(bound, 3))
    for _ in range(5):
        state, records = stage_records(state, plan, bound)
        for rec in records:
            res = bound.residual(rec.part, rec.values, rec.rates, rec.t)
            scale = max(float(np.abs(v).max()) for v in rec.rates.values())
            assert res.max(rec.row) <= 1e-12 * scale, rec.row


def test_maxwell_time_reversal():
    cx = build_complex(3, [6, 6, 6], [1, 1, 1])
    bound = instantiate(maxwell_spec(eps=2.0), cx)
    plan = make_plan(bound, 300)
    start = initial_state(bound, random_values(bound, 1))
    fwd = run(bound, plan, start.copy())
    back = run(bound, plan.reversed(), fwd.state)
    for k, v in start.values.items():
        assert np.linalg.norm(back.state.values[k] - v) <= 1e-10 * np.linalg.norm(v)
    assert back.state.t == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize(
    "factory,grid",
    [
        (maxwell_spec, ([6, 6, 6], False)),
        (schrodinger_spec, ([32, 1, 1], (False, True, True))),
        (elasticity_spec, ([5, 5, 5], True)),
    ],
)
def test_long_run_bounded(factory, grid):
    extents, periodic = grid
    cx = build_complex(3, extents, [1.0 / extents[0]] * 3, periodic)
    bound = instantiate(factory(), cx)
    plan = make_plan(bound, 10_000, courant=0.9, monitor_every=50)
    res = run(bound, plan, initial_state(bound, random_values(bound, 7)))
    assert res.diverged is None
    e = res.column("energy")
    assert np.max(np.abs(e / e[0] - 1)) < 0.01


def test_run_matches_step():
    cx = unit(4)
    bound = instantiate(maxwell_spec(), cx)
    plan = make_plan(bound, 25)
    start = initial_state(bound, random_values(bound, 2))
    state = start.copy()
    for _ in range(25):
        state = step(state, plan, bound)
    res = run(bound, plan, start)
    for k in state.values:
        np.testing.assert_allclose(res.state.values[k], state.values[k], rtol=1e-13, atol=1e-13)
    assert res.state.step == 25


def test_run_probes_and_cadence():
    cx = unit(3)
    bound = instantiate(maxwell_spec(), cx)
    plan = make_plan(bound, 10, monitor_every=4)
    snaps = []
    res = run(bound, plan, initial_state(bound, random_values(bound)), [Probe("p", "e", 5)],
              snapshot=snaps.append, snapshot_every=5)
    assert res.columns == ["step", "time", "energy", "norm", "p"]
    assert [r["step"] for r in res.diagnostics] == [0, 4, 8, 10]
    assert [s.step for s in snaps] == [5, 10]
    assert res.diagnostics[-1]["p"] == res.state.values["e"][5]


def test_nan_raises_diverged():
    cx = unit(3)
    bound = instantiate(maxwell_spec(), cx)
    plan = make_plan(bound, 3)
    vals = random_values(bound)
    vals["e"][0] = np.nan
    with pytest.raises(DivergedError) as info:
        step(initial_state(bound, vals), plan, bound)
    assert info.value.step == 1


def test_unstable_run_diverges():
    cx = unit(6, periodic=False)
    bound = instantiate(maxwell_spec(), cx)
    plan = make_plan(bound, 2000, courant=1.05, allow_unstable=True)
    res = run(bound, plan, initial_state(bound, random_values(bound)), raise_on_divergence=False)
    assert res.diverged is not None
    assert res.diverged.step < 2000


def test_initial_state_checks():
    bound = instantiate(maxwell_spec(), unit(2))
    with pytest.raises(KeyError):
        initial_state(bound, {"x": np.zeros(3)})
    with pytest.raises(ValueError):
        initial_state(bound, {"e": np.zeros(3)})


def test_measure_frequency():
    dt, w = 0.1, 1.7
    n = np.arange(400)
    assert measure_frequency(np.cos(w * n * dt + 0.3), dt) == pytest.approx(w, rel=1e-12)
    with pytest.raises(ValueError):
        measure_frequency([1.0, 2.0], dt)


def test_peak_position():
    x = np.arange(20) * 0.5
    v = -((x - 3.3) ** 2)
    assert peak_position(v, x) == pytest.approx(3.3)
    wrapped = -np.minimum((x - 0.1) % 10, 10 - (x - 0.1) % 10) ** 2
    assert peak_position(wrapped, x, period=10.0) == pytest.approx(0.1)


def elastic_speed_error(n):
    cx = build_complex(3, [n, 1, 1], [1.0 / n, 1, 1], True)
    bound = instantiate(elasticity_spec(rho=1.0, lam=2.0, mu=1.0), cx)
    x = cx.cell_centers(0)[:, 0]
    u = np.zeros((n, 3))
    u[:, 0] = np.cos(2 * np.pi * x)
    plan = make_plan(bound, 8 * n, courant=0.5)
    res = run(bound, plan, initial_state(bound, {"u": u.reshape(-1)}), [Probe("ux", "u", 0, 0)])
    speed = measure_frequency(res.column("ux"), plan.dt) / (2 * np.pi)
    c = bound.spec.params["wave_speed"]
    return abs(speed - c) / c


def test_elastic_wave_speed_second_order():
    errs = [elastic_speed_error(n) for n in (16, 32, 64)]
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    assert all(3.4 <= r <= 4.6 for r in ratios), (errs, ratios)
