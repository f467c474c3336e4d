import numpy as np
import pytest

from conslaw.grid import build_complex
from conslaw.models import elasticity_spec, instantiate, maxwell_spec, schrodinger_spec
from conslaw.scenarios import (
    analyse,
    evaluate_expression,
    expected_energy,
    initial_values,
    pulse_speed,
    vector_to_two_form,
)
from conslaw.timestep import initial_state, make_plan, run

PTS = np.array([[0.0, 0.5, 1.0], [0.25, 0.0, 2.0]])


def test_scalar_expression():
    np.testing.assert_allclose(evaluate_expression("x + 2*y*z + t", PTS, t=1.0), [2.0, 1.25])


def test_vector_expression_broadcasts():
    v = evaluate_expression("[0, sin(pi*x), 1]", PTS)
    assert v.shape == (2, 3)
    np.testing.assert_allclose(v[:, 2], 1.0)


@pytest.mark.parametrize(
    "expr",
    ["().__class__", "x.__class__", "__import__('os')", "open('f')", "[a for a in x]", "lambda: 1", "sin(x, out=x)", "x +"],
)
def test_expression_rejects_unsafe_or_bad(expr):
    with pytest.raises(ValueError):
        evaluate_expression(expr, PTS)


def test_vector_to_two_form():
    assert vector_to_two_form(np.array([[1.0, 2.0, 3.0]])).tolist() == [[3.0, -2.0, 1.0]]


def test_noise_is_seeded():
    cx = build_complex(3, [3, 3, 3], [1, 1, 1], True)
    bound = instantiate(maxwell_spec(), cx)
    a = initial_values(bound, "zero", {}, noise=1e-3, seed=4)
    b = initial_values(bound, "zero", {}, noise=1e-3, seed=4)
    c = initial_values(bound, "zero", {}, noise=1e-3, seed=5)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert not np.array_equal(a["e"], c["e"])


def test_unknown_initializer():
    cx = build_complex(3, [2, 2, 2], [1, 1, 1])
    with pytest.raises(ValueError, match="available"):
        initial_values(instantiate(maxwell_spec(), cx), "vortex", {})


def test_cavity_respects_clamp():
    cx = build_complex(3, [4, 4, 4], [0.25] * 3)
    bound = instantiate(maxwell_spec(), cx)
    vals = initial_values(bound, "cavity", {})
    assert np.abs(vals["e"]).max() > 0
    assert not vals["e"][bound.clamp["e"]].any()


def test_expected_energy_of_box_eigenvector():
    # a discrete eigenvector gives exactly its eigenvalue
    n = 32
    cx = build_complex(3, [n, 1, 1], [1.0 / n, 1, 1], (False, True, True))
    bound = instantiate(schrodinger_spec(), cx)
    vals = initial_values(bound, "box_ground_state", {})
    want = 0.5 * 4 * n**2 * np.sin(np.pi / (2 * n)) ** 2
    assert expected_energy(bound, vals) == pytest.approx(want, rel=1e-12)


def test_pulse_speed_of_shifted_profile():
    n = 50
    cx = build_complex(3, [n, 1, 1], [1.0 / n, 1, 1], True)
    bound = instantiate(elasticity_spec(), cx)
    x = cx.cell_centers(0)[:, 0]
    prof = lambda c: np.exp(-(((x - c + 0.5) % 1.0 - 0.5) ** 2) / 0.01)
    u0, u1 = np.zeros((n, 3)), np.zeros((n, 3))
    u0[:, 0], u1[:, 0] = prof(0.2), prof(0.2 + 0.3 * np.sqrt(3))
    res = pulse_speed(bound, {"u": u0.reshape(-1)}, {"u": u1.reshape(-1)}, 0.3)
    assert res["front_speed"] == pytest.approx(np.sqrt(3), rel=1e-3)


def test_analyse_energy_parts():
    cx = build_complex(3, [3, 3, 3], [1, 1, 1], True)
    bound = instantiate(maxwell_spec(), cx)
    vals = initial_values(bound, "zero", {}, noise=1.0, seed=0)
    res = run(bound, make_plan(bound, 10), initial_state(bound, vals))
    out = analyse("energy", bound, res, {}, vals)
    assert set(out) == {"energy_drift", "initial", "final", "final_e_part", "final_b_part"}
    assert analyse("none", bound, res, {}, vals) == {}
    with pytest.raises(ValueError):
        analyse("dispersion", bound, res, {}, vals)
    with pytest.raises(ValueError):
        analyse("spectrum", bound, res, {}, vals, "p")
