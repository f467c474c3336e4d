import json
import subprocess
import sys
from importlib import resources
from pathlib import Path

import pytest

from conslaw.cli import main
from conslaw.io import read_triplets

ROOT = Path(__file__).resolve().parents[1]

SMALL = """
[model]
name = maxwell
[grid]
extents = 4, 4, 4
boundary = dirichlet
[time]
steps = 20
[init]
kind = cavity
noise = 1e-3
seed = 3
[probes]
ey = e y 0.5 0.5 0.5
[output]
analysis = energy
"""


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_verify_passes(capsys, tmp_path):
    assert main(["verify", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "4D split: max discrepancy 0" in out
    assert "FAIL" not in out
    assert (tmp_path / "verify.csv").read_text().startswith("check,status,detail")


def test_verify_detects_tampered_golden(capsys, tmp_path):
    text = resources.files("conslaw").joinpath("data/pattern_v1.txt").read_text()
    lines = text.splitlines()
    idx = next(i for i, l in enumerate(lines) if l.split()[:2] == ["g1s", "f2s"])
    lines[idx] = lines[idx].replace("+", "-")
    golden = tmp_path / "bad.txt"
    golden.write_text("\n".join(lines) + "\n")
    assert main(["verify", "--golden", str(golden)]) == 1
    out = capsys.readouterr().out
    assert "block (row g1s, col f2s): expected -sds, got +sds" in out


def test_verify_unreadable_golden(tmp_path):
    assert main(["verify", "--golden", str(tmp_path / "missing.txt")]) == 2


def test_rows(capsys):
    assert main(["rows", "maxwell"]) == 0
    out = capsys.readouterr().out
    assert "active rows {2, 4, 5, 7}" in out
    assert "row 5 [G2s]: d^s e + ∂_t b = 0" in out


def test_rows_unknown_model(capsys):
    assert main(["rows", "plasma"]) == 2
    assert "available: maxwell" in capsys.readouterr().err


def test_run_outputs(tmp_path, capsys):
    cfg = write(tmp_path, SMALL)
    out = tmp_path / "o"
    assert main(["run", "--config", cfg, "--out", str(out), "--snapshot-every", "10"]) == 0
    diag = (out / "diagnostics.csv").read_text().splitlines()
    assert diag[0] == "step,time,energy,norm,ey"
    assert len(diag) == 22
    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"] == "ok" and summary["steps_done"] == 20
    assert summary["energy_drift"] < 1e-12
    assert sorted(p.name for p in (out / "snapshots").iterdir()) == [
        "step_00000000.vtk", "step_00000010.vtk", "step_00000020.vtk"]


@pytest.mark.parametrize("fmt,suffix", [("csv", ".csv"), ("binary", ".bin")])
def test_run_cochain_snapshots(tmp_path, fmt, suffix):
    cfg = write(tmp_path, SMALL + f"snapshot_format = {fmt}\nsnapshot_every = 20\n")
    out = tmp_path / "o"
    assert main(["run", "--config", cfg, "--out", str(out)]) == 0
    names = sorted(p.name for p in (out / "snapshots").iterdir())
    assert names == sorted(f"{v}_{s:08d}{suffix}" for v in ("b", "e") for s in (0, 20))


def test_run_diverges_exit_3(tmp_path, capsys):
    # on a periodic even grid the checkerboard mode reaches the bound exactly
    text = SMALL.replace("steps = 20", "steps = 3000\ncourant = 1.05\nallow_unstable = true")
    text = text.replace("boundary = dirichlet", "boundary = periodic").replace("kind = cavity", "kind = zero")
    cfg = write(tmp_path, text)
    out = tmp_path / "o"
    assert main(["run", "--config", cfg, "--out", str(out)]) == 3
    assert "DIVERGED" in capsys.readouterr().err
    assert (out / "diagnostics.csv").read_text().splitlines()[-1].startswith("DIVERGED")
    assert json.loads((out / "summary.json").read_text())["status"] == "diverged"


@pytest.mark.parametrize(
    "patch",
    [
        ("name = maxwell", "name = plasma"),
        ("[grid]", "[grid]\nfoo = 1"),
        ("ey = e y", "ey = q y"),
        ("ey = e y", "ey = e xy"),
        ("steps = 20", "steps = 20\ncourant = 1.5"),
        ("kind = cavity", "kind = vortex"),
        ("name = maxwell", "name = maxwell\neps = -1"),
        ("name = maxwell", "name = maxwell\neps = @nofile.csv"),
        ("name = maxwell", "name = maxwell\nhbar = 1"),
    ],
)
def test_run_config_errors(tmp_path, patch, capsys):
    cfg = write(tmp_path, SMALL.replace(*patch))
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "config error" in capsys.readouterr().err


def test_material_from_csv(tmp_path):
    from conslaw.grid import build_complex

    n = build_complex(3, [4, 4, 4], [1, 1, 1]).cell_counts[1]
    (tmp_path / "eps.csv").write_text("\n".join(["2.0"] * n) + "\n")
    cfg = write(tmp_path, SMALL.replace("name = maxwell", "name = maxwell\neps = @eps.csv"))
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["cfl_bound"] == pytest.approx(2 ** 0.5 / 3 ** 0.5 * 0.25)


def test_expression_sources(tmp_path):
    text = SMALL.replace("name = maxwell", "name = maxwell\ncurrent = [0, sin(2*pi*t), 0]")
    cfg = write(tmp_path, text)
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 0


def test_dump_operators(tmp_path):
    assert main(["dump-operators", "--out", str(tmp_path)]) == 0
    d1 = read_triplets(tmp_path / "D1.txt")
    d2 = read_triplets(tmp_path / "D2.txt")
    assert (d2 @ d1).count_nonzero() == 0
    assert (tmp_path / "maxwell_g1s_f2s_sds.txt").exists()
    assert len(list(tmp_path.glob("maxwell_*.txt"))) == 20


def test_run_requires_config():
    with pytest.raises(SystemExit):
        main(["run"])


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "conslaw", "rows", "elasticity"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "active rows {3, 6, 8}" in proc.stdout


def test_thread_count_does_not_change_bytes(tmp_path):
    cfg = write(tmp_path, SMALL)
    outs = []
    for n in ("1", "4"):
        out = tmp_path / f"t{n}"
        assert main(["run", "--config", cfg, "--out", str(out), "--threads", n]) == 0
        outs.append((out / "diagnostics.csv").read_bytes())
    assert outs[0] == outs[1]
