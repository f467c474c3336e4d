import numpy as np
import pytest

from conslaw.cochain import SLOT_DEGREES, project_function
from conslaw.core import ROWS
from conslaw.grid import build_complex
from conslaw.models import (
    MODEL_NAMES,
    ModelSpec,
    Part,
    SlotBinding,
    Stage,
    Term,
    Variable,
    active_rows,
    elasticity_spec,
    get_model,
    instantiate,
    maxwell_spec,
    row_map,
    row_number,
    schrodinger_spec,
    vector_proxy_table,
    yang_mills_spec,
)


def numbers(rows):
    return {row_number(r) for r in rows}


def test_maxwell_rows():
    m = maxwell_spec()
    assert numbers(active_rows(m)) == {2, 4, 5, 7}
    text = row_map(m)
    assert "row 2 [g3s]: d^s b = 0" in text
    assert "row 5 [G2s]: d^s e + ∂_t b = 0" in text
    proxy = vector_proxy_table(m)
    assert "row 4: −∂_t εe + curl νb = j" in proxy
    assert "row 2: div b = 0" in proxy


def test_elasticity_rows():
    m = elasticity_spec()
    assert numbers(active_rows(m)) == {3, 6, 8}
    assert "row 3 [G1s]: ∂_t ε − d^s u = 0" in row_map(m)
    assert "row 8: ρ ∂_t u − div σ = f_v" in vector_proxy_table(m)


def test_schrodinger_rows():
    m = schrodinger_spec()
    assert numbers(active_rows(m, "R")) == {3, 6, 8}
    assert numbers(active_rows(m, "I")) == {1, 3, 6}


def test_yang_mills_alias():
    ym = yang_mills_spec()
    assert numbers(active_rows(ym)) == {2, 4, 5, 7}
    assert any("not supported" in n for n in ym.notes)


def test_get_model():
    for name in MODEL_NAMES:
        assert get_model(name).name == name
    with pytest.raises(ValueError, match="available"):
        get_model("navier-stokes")


@pytest.mark.parametrize(
    "factory,kwargs",
    [
        (maxwell_spec, {"eps": 0.0}),
        (maxwell_spec, {"mu": -1.0}),
        (schrodinger_spec, {"mass": 0.0}),
        (schrodinger_spec, {"hbar": -1.0}),
        (elasticity_spec, {"rho": 0.0}),
        (elasticity_spec, {"mu": 0.0}),
        (elasticity_spec, {"lam": -3.0, "mu": 1.0}),
    ],
)
def test_nonpositive_materials(factory, kwargs):
    with pytest.raises(ValueError):
        factory(**kwargs)


def test_binding_degree_checked():
    with pytest.raises(ValueError, match="f2s"):
        ModelSpec(
            name="bad",
            fiber_dim=1,
            variables=(Variable("e", 1),),
            parts=(Part("", False, (SlotBinding("f2s", (Term("e"),)),)),),
            stages=(Stage("", "G2s", "e"), Stage("", "G2s", "e")),
            monitor=(),
        )


def plane_wave_residual(n, t=0.3):
    k = 2 * np.pi
    cx = build_complex(3, [n, 1, 1], [1.0 / n, 1, 1], True)
    bound = instantiate(maxwell_spec(), cx)
    s = lambda x: np.sin(k * (x[:, 0] - t))
    c = lambda x: -k * np.cos(k * (x[:, 0] - t))
    zero = lambda x: 0 * x[:, 0]
    e = project_function(cx, 1, 1, lambda x: np.stack([zero(x), s(x), zero(x)], 1)).values.reshape(-1)
    de = project_function(cx, 1, 1, lambda x: np.stack([zero(x), c(x), zero(x)], 1)).values.reshape(-1)
    # b = B_z dx ^ dy
    b = project_function(cx, 2, 1, lambda x: np.stack([s(x), zero(x), zero(x)], 1)).values.reshape(-1)
    db = project_function(cx, 2, 1, lambda x: np.stack([c(x), zero(x), zero(x)], 1)).values.reshape(-1)
    res = bound.residual("", {"e": e, "b": b}, {"e": de, "b": db}, t)
    # compare densities: each row's residual divided by its cells' measure
    out = {}
    for r in ROWS:
        dens = res.rows[r].values[:, 0] / cx.primal_measure(SLOT_DEGREES[r])
        out[row_number(r)] = np.abs(dens).max() / k
    return out


def test_plane_wave_satisfies_rows():
    coarse, fine = plane_wave_residual(32), plane_wave_residual(64)
    for row in (2, 7):
        assert coarse[row] == 0 and fine[row] == 0
    for row in (4, 5):
        assert fine[row] < 1e-2
        assert 3.5 < coarse[row] / fine[row] < 4.5, (row, coarse[row], fine[row])
    for row in (1, 3, 6, 8):
        assert coarse[row] == 0


def test_constant_e_row7_periodic():
    cx = build_complex(3, [3, 3, 3], [1, 1, 1], True)
    bound = instantiate(maxwell_spec(), cx)
    e = np.ones(cx.cell_counts[1])
    res = bound.residual("", {"e": e, "b": np.zeros(cx.cell_counts[2])}, {"e": 0 * e, "b": np.zeros(cx.cell_counts[2])}, 0.0)
    assert res.max("G0") == 0


def test_schrodinger_box_spectrum():
    # dR/dt = A I, dI/dt = B R, so -A B = (H/hbar)^2; the box spectrum of the
    # three-point Laplacian is known in closed form
    n, mass, hbar = 16, 0.7, 1.3
    cx = build_complex(3, [n, 1, 1], [1.0 / n, 1, 1], (False, True, True))
    bound = instantiate(schrodinger_spec(mass=mass, hbar=hbar), cx)
    sa, sb = bound.stages
    assert (sa.var, sb.var) == ("R", "I")
    A = sa.terms["I"].toarray()
    B = sb.terms["R"].toarray()
    inner = ~cx.boundary_flags(0)
    sq = -(A @ B)[np.ix_(inner, inner)]
    got = np.sort(np.sqrt(np.linalg.eigvals(sq).real))
    h = 1.0 / n
    modes = np.arange(1, n)
    energies = hbar**2 / (2 * mass) * 4 / h**2 * np.sin(modes * np.pi / (2 * n)) ** 2
    np.testing.assert_allclose(got, np.sort(energies / hbar), rtol=1e-10)


def test_schrodinger_potential_shift():
    # a constant potential only shifts the energy
    n = 8
    cx = build_complex(3, [n, 1, 1], [1.0 / n, 1, 1], True)
    free = instantiate(schrodinger_spec(), cx)
    shifted = instantiate(schrodinger_spec(potential=2.5), cx)
    diff = shifted.stages[0].terms["I"] - free.stages[0].terms["I"]
    np.testing.assert_allclose(diff.diagonal(), 2.5)
    assert abs(diff - np.diag(diff.diagonal())).max() == 0


@pytest.fixture
def elastic():
    cx = build_complex(3, [3, 3, 3], [1, 1, 1], True)
    return cx, instantiate(elasticity_spec(rho=1.5, lam=0.8, mu=1.1), cx)


def test_elastic_constant_velocity(elastic):
    cx, bound = elastic
    u = np.tile([1.0, -0.5, 0.25], cx.cell_counts[0])
    vals = {"u": u, "eps": np.zeros(3 * cx.cell_counts[1])}
    assert np.abs(bound.rate(bound.stages[0], vals, 0.0)).max() == 0
    assert np.abs(bound.rate(bound.stages[1], vals, 0.0)).max() == 0


def test_elastic_rotation_is_stress_free():
    cx = build_complex(3, [3, 3, 3], [1, 1, 1])
    bound = instantiate(elasticity_spec(), cx)
    W = np.array([[0, 1.0, -2.0], [-1.0, 0, 0.5], [2.0, -0.5, 0]])
    eps = np.concatenate([np.tile(W[:, b.axes[0]] * cx.spacings[b.axes[0]], (b.size, 1)) for b in cx.blocks[1]])
    vals = {"u": np.zeros(3 * cx.cell_counts[0]), "eps": eps.reshape(-1)}
    assert np.abs(bound.rate(bound.stages[1], vals, 0.0)).max() < 1e-12


def test_dirichlet_clamp_masks():
    cx = build_complex(3, [2, 2, 2], [1, 1, 1])
    bound = instantiate(maxwell_spec(), cx)
    assert bound.clamp["e"].sum() == cx.boundary_flags(1).sum()
    vals = bound.apply_clamp({"e": np.ones(cx.cell_counts[1]), "b": np.ones(cx.cell_counts[2])})
    assert not vals["e"][bound.clamp["e"]].any()


def test_maxwell_current_source_enters_ampere():
    cx = build_complex(3, [4, 1, 1], [0.25, 1, 1], True)
    spec = maxwell_spec(current=lambda x, t: np.tile([0.0, 2.0, 0.0], (len(x), 1)))
    bound = instantiate(spec, cx)
    vals = bound.zero_state()
    rate = bound.rate(bound.stages[1], vals, 0.0)
    # -eps de/dt + curl nu b = j with b = 0 gives de/dt = -j
    y = cx.block_of(1, (1,))
    np.testing.assert_allclose(rate[y.offset : y.offset + y.size], -2.0)
