import json

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from conslaw.cochain import Cochain, project_function
from conslaw.config import ConfigError, ProbeSpec, RunConfig, load_config, parse_config
from conslaw.grid import build_complex
from conslaw.io import (
    cell_proxy,
    format_float,
    load_material_csv,
    read_cochain_binary,
    read_cochain_csv,
    read_triplets,
    write_cochain_binary,
    write_cochain_csv,
    write_diagnostics,
    write_triplets,
    write_vtk,
)

MINIMAL = """
[model]
name = maxwell
[grid]
extents = 4, 4, 4
"""


def test_parse_minimal_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.model == "maxwell"
    assert cfg.extents == (4, 4, 4)
    assert cfg.periodic == (True, True, True)
    assert cfg.spacings == (0.25, 0.25, 0.25)
    assert cfg.steps == 100 and cfg.courant == 0.5 and cfg.dt is None


def test_round_trip_full_config():
    cfg = RunConfig(
        model="elasticity",
        extents=(8, 2, 3),
        model_params={"rho": "2.5", "lam": "@lam.csv"},
        length=(2.0, 0.5, 0.75),
        boundary="dirichlet",
        periodic_axes="yz",
        steps=17,
        courant=0.3,
        dt=0.001,
        allow_unstable=True,
        monitor_every=3,
        divergence_factor=None,
        init="p_pulse",
        init_params={"width_cells": "40"},
        noise=1e-6,
        seed=9,
        probes=(ProbeSpec("ux", "u", "-", (0.5, 0.25, 0.125), 1),),
        out_dir="out/x",
        snapshot_every=5,
        snapshot_format="binary",
        analysis="pulse_speed",
        analysis_probe="ux",
        threads=2,
    )
    assert parse_config(cfg.to_ini()) == cfg
    assert cfg.periodic == (False, True, True)


@settings(max_examples=30, deadline=None)
@given(
    st.tuples(st.integers(1, 64), st.integers(1, 64), st.integers(1, 64)),
    st.floats(1e-3, 10),
    st.integers(0, 10**6),
    st.floats(1e-4, 2.0),
)
def test_round_trip_property(extents, length, steps, courant):
    cfg = RunConfig(model="maxwell", extents=extents, length=(length,) * 3, steps=steps, courant=courant)
    assert parse_config(cfg.to_ini()) == cfg


@pytest.mark.parametrize(
    "text",
    [
        "[grid]\nextents = 1, 1, 1",
        "[model]\nname = maxwell",
        MINIMAL + "[grid2]\nx = 1",
        MINIMAL.replace("extents = 4, 4, 4", "extents = 4, 4"),
        MINIMAL.replace("extents = 4, 4, 4", "extents = 4, 0, 4"),
        MINIMAL + "[time]\nstep = 10",
        MINIMAL + "[time]\nsteps = ten",
        MINIMAL + "[time]\nallow_unstable = maybe",
        MINIMAL.replace("[grid]", "[grid]\nboundary = open"),
        MINIMAL + "[probes]\np = e q 0 0 0",
        MINIMAL + "[probes]\np = e x 0 0",
        MINIMAL + "[output]\nsnapshot_format = png",
        "not an ini",
    ],
)
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_load_config_missing(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.ini")


def test_shipped_configs_parse():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "configs"
    files = sorted(root.glob("*.ini"))
    assert len(files) >= 10
    for f in files:
        assert parse_config(f.read_text()).model


@pytest.fixture
def cx():
    return build_complex(3, [3, 2, 2], [0.5, 1.0, 0.25], (True, False, False))


def random_cochain(cx, p, fiber, dual=False, seed=0):
    n = cx.cell_counts[3 - p if dual else p]
    return Cochain(p, np.random.default_rng(seed).normal(size=(n, fiber)), cx, dual)


@pytest.mark.parametrize("p,fiber,dual", [(0, 1, False), (1, 3, False), (2, 1, True), (3, 1, False)])
def test_cochain_csv_round_trip(tmp_path, cx, p, fiber, dual):
    c = random_cochain(cx, p, fiber, dual)
    write_cochain_csv(tmp_path / "c.csv", c)
    back = read_cochain_csv(tmp_path / "c.csv", cx)
    assert back.degree == p and back.dual == dual
    assert np.array_equal(back.values, c.values)
    head = (tmp_path / "c.csv").read_text().splitlines()
    assert head[0] == f"# degree {p}"
    assert head[3] == "# extents 3 2 2"


@pytest.mark.parametrize("p,fiber", [(1, 1), (0, 3)])
def test_cochain_binary_round_trip(tmp_path, cx, p, fiber):
    c = random_cochain(cx, p, fiber)
    write_cochain_binary(tmp_path / "c.bin", c)
    back = read_cochain_binary(tmp_path / "c.bin", cx)
    assert np.array_equal(back.values, c.values)
    raw = (tmp_path / "c.bin").read_bytes()
    head = json.loads(raw.split(b"\n", 1)[0])
    assert head["fiber_dim"] == fiber
    assert len(raw.split(b"\n", 1)[1]) == c.values.size * 8


def test_cochain_file_for_other_complex(tmp_path, cx):
    write_cochain_csv(tmp_path / "c.csv", random_cochain(cx, 1, 1))
    with pytest.raises(ValueError):
        read_cochain_csv(tmp_path / "c.csv", build_complex(3, [3, 2, 2], [1, 1, 1]))


def test_triplets_round_trip(tmp_path, cx):
    mat = cx.incidence(1)
    write_triplets(tmp_path / "d1.txt", mat)
    back = read_triplets(tmp_path / "d1.txt")
    assert back.shape == mat.shape
    assert (back != mat).nnz == 0
    lines = (tmp_path / "d1.txt").read_text().splitlines()
    assert lines[0] == f"# shape {mat.shape[0]} {mat.shape[1]}"
    rows = [tuple(map(int, l.split()[:2])) for l in lines[1:]]
    assert rows == sorted(rows)
    write_triplets(tmp_path / "w.txt", sp.csr_matrix(np.array([[0.1, 0], [0, 2.0]])))
    assert (tmp_path / "w.txt").read_text().splitlines()[1:] == ["0 0 0.10000000000000001", "1 1 2"]


def test_vtk_header(tmp_path):
    cx = build_complex(3, [2, 3, 4], [0.5, 1.0, 0.25], (True, False, False))
    e = project_function(cx, 1, 1, lambda x: np.tile([1.0, 2.0, 3.0], (len(x), 1)))
    phi = project_function(cx, 0, 1, lambda x: x[:, 0])
    write_vtk(tmp_path / "s.vtk", cx, {"e": e, "phi": phi})
    lines = (tmp_path / "s.vtk").read_text().splitlines()
    assert lines[0] == "# vtk DataFile Version 3.0"
    assert lines[2:7] == ["ASCII", "DATASET STRUCTURED_POINTS", "DIMENSIONS 3 4 5", "ORIGIN 0 0 0", "SPACING 0.5 1 0.25"]
    i = lines.index("POINT_DATA 60")
    assert lines[i + 1] == "SCALARS phi double 1"
    # periodic x: the far vertex plane repeats the first one (value 0)
    pts = [float(v) for v in lines[i + 3 : i + 3 + 60]]
    assert pts[:3] == [0.0, 0.5, 0.0]
    j = lines.index("CELL_DATA 24")
    assert lines[j + 1] == "VECTORS e double"
    assert lines[j + 2] == "1 2 3"


def test_cell_proxy_of_uniform_flux():
    cx = build_complex(3, [2, 2, 2], [0.5, 1.0, 2.0])
    b = project_function(cx, 2, 1, lambda x: np.tile([1.0, -2.0, 3.0], (len(x), 1)))
    prox = cell_proxy(b)
    assert np.allclose(prox[:, :, 0], [1.0, -2.0, 3.0])


def test_diagnostics_format(tmp_path):
    rows = [{"step": 0, "time": 0.0, "energy": 1 / 3}, {"step": 1, "time": 0.1, "energy": 2.0}]
    write_diagnostics(tmp_path / "d.csv", ["step", "time", "energy"], rows, marker="DIVERGED")
    assert (tmp_path / "d.csv").read_text().splitlines() == [
        "step,time,energy",
        "0,0,0.33333333333333331",
        "1,0.10000000000000001,2",
        "DIVERGED,,",
    ]
    assert format_float(0.1) == "0.10000000000000001"


def test_material_csv(tmp_path):
    (tmp_path / "a.csv").write_text("# eps\nvalue\n1.0\n2.0\n3.0\n")
    assert load_material_csv(tmp_path / "a.csv", 3).tolist() == [1.0, 2.0, 3.0]
    (tmp_path / "b.csv").write_text("1,2.0\n0,1.0\n")
    assert load_material_csv(tmp_path / "b.csv").tolist() == [1.0, 2.0]
    with pytest.raises(ValueError):
        load_material_csv(tmp_path / "a.csv", 4)
    (tmp_path / "c.csv").write_text("2,2.0\n0,1.0\n")
    with pytest.raises(ValueError):
        load_material_csv(tmp_path / "c.csv")
