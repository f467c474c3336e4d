"""Command-line front end: ``verify``, ``run``, ``rows``, ``dump-operators``.

Exit codes: 0 success, 1 failed check, 2 configuration error, 3 diverged run.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import json
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .core import (
    COLS,
    ROWS,
    compare_patterns,
    derive_split_pattern,
    load_golden_pattern,
    verify_4d_decomposition,
)
from .grid import build_complex
from .io import (
    format_float,
    load_material_csv,
    write_cochain_binary,
    write_cochain_csv,
    write_diagnostics,
    write_triplets,
    write_vtk,
)
from .models import MODEL_NAMES, BoundModel, ModelSpec, get_model, instantiate, row_map, vector_proxy_table
from .scenarios import analyse, evaluate_expression, initial_values
from .timestep import DivergedError, Probe, initial_state, make_plan, run

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3

# model parameter -> degree of the cells a CSV material is given on
_MATERIAL_DEGREE = {
    "maxwell": {"eps": 1, "mu": 2},
    "yang-mills": {"eps": 1, "mu": 2},
    "elasticity": {"rho": 0, "lam": 3, "mu": 3},
    "schrodinger": {},
}
_FUNCTIONS = {
    "maxwell": {"current": "vector", "charge": "scalar"},
    "yang-mills": {"current": "vector", "charge": "scalar"},
    "elasticity": {"body_force": "vector"},
    "schrodinger": {"potential": "static"},
}
_SCALARS = {
    "maxwell": ("eps", "mu"),
    "yang-mills": ("eps", "mu"),
    "elasticity": ("rho", "lam", "mu"),
    "schrodinger": ("mass", "hbar", "potential"),
}


def _threads(n: int):
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def build_model(cfg: RunConfig, base: Path = Path(".")) -> tuple[ModelSpec, BoundModel]:
    """Complex, model spec and bound model for a run configuration."""
    if cfg.model not in MODEL_NAMES:
        raise ConfigError(f"unknown model {cfg.model!r}; available: {', '.join(MODEL_NAMES)}")
    cx = build_complex(3, cfg.extents, cfg.spacings, cfg.periodic)
    allowed = set(_SCALARS[cfg.model]) | set(_FUNCTIONS[cfg.model])
    params: dict = {}
    for key, raw in cfg.model_params.items():
        if key not in allowed:
            raise ConfigError(f"[model] unknown parameter {key!r} for {cfg.model}; known: {', '.join(sorted(allowed))}")
        raw = raw.strip()
        if raw.startswith("@"):
            deg = _MATERIAL_DEGREE[cfg.model].get(key)
            if deg is None:
                raise ConfigError(f"[model] {key} cannot be read from a CSV file")
            path = Path(raw[1:])
            if not path.is_absolute():
                path = base / path
            try:
                params[key] = load_material_csv(path, cx.cell_counts[deg])
            except (OSError, ValueError) as exc:
                raise ConfigError(f"[model] {key}: {exc}") from None
            continue
        try:
            params[key] = float(raw)
            continue
        except ValueError:
            pass
        kind = _FUNCTIONS[cfg.model].get(key)
        if kind is None:
            raise ConfigError(f"[model] {key} must be a number or @file.csv, got {raw!r}")
        params[key] = _function(raw, kind)
    try:
        spec = get_model(cfg.model, **params)
        bound = instantiate(spec, cx)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return spec, bound


def _function(expr: str, kind: str):
    if kind == "static":
        return lambda x: evaluate_expression(expr, x)
    if kind == "scalar":
        return lambda x, t: evaluate_expression(expr, x, t)

    def vec(x, t):
        v = evaluate_expression(expr, x, t)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError(f"expression {expr!r} must give three components")
        return v

    return vec


def resolve_probes(cfg: RunConfig, bound: BoundModel) -> list[Probe]:
    cx = bound.complex
    out = []
    for p in cfg.probes:
        try:
            var = bound.spec.variable(p.var)
        except KeyError:
            names = ", ".join(v.name for v in bound.spec.variables)
            raise ConfigError(f"probe {p.label}: unknown variable {p.var!r} (have {names})") from None
        axes = () if p.axes == "-" else tuple("xyz".index(a) for a in p.axes)
        if len(axes) != var.degree:
            raise ConfigError(f"probe {p.label}: {p.var} lives on {var.degree}-cells")
        if not 0 <= p.component < bound.fiber_dim:
            raise ConfigError(f"probe {p.label}: component out of range")
        blk = cx.block_of(var.degree, axes)
        centers = cx.cell_centers(var.degree)[blk.offset : blk.offset + blk.size]
        k = int(np.argmin(np.sum((centers - np.asarray(p.point)) ** 2, axis=1)))
        out.append(Probe(p.label, p.var, blk.offset + k, p.component))
    return out


def _snapshot_writer(cfg: RunConfig, bound: BoundModel, out: Path, fmt: str):
    snap_dir = out / "snapshots"
    snap_dir.mkdir(parents=True, exist_ok=True)

    def write(state) -> None:
        cochains = {v: bound.cochain(v, x) for v, x in state.values.items()}
        tag = f"{state.step:08d}"
        if fmt == "vtk":
            write_vtk(snap_dir / f"step_{tag}.vtk", bound.complex, cochains, f"{cfg.model} step {state.step} t={state.t!r}")
        else:
            for v, c in cochains.items():
                if fmt == "csv":
                    write_cochain_csv(snap_dir / f"{v}_{tag}.csv", c)
                else:
                    write_cochain_binary(snap_dir / f"{v}_{tag}.bin", c)

    return write


def cmd_run(cfg: RunConfig, base: Path, out_dir: str | None, snapshot_every: int | None, threads: int | None) -> int:
    out = Path(out_dir or cfg.out_dir)
    every = cfg.snapshot_every if snapshot_every is None else snapshot_every
    nthreads = cfg.threads if threads is None else threads
    with _threads(nthreads):
        spec, bound = build_model(cfg, base)
        probes = resolve_probes(cfg, bound)
        try:
            values = initial_values(bound, cfg.init, cfg.init_params, cfg.noise, cfg.seed)
            plan = make_plan(
                bound, cfg.steps, dt=cfg.dt, courant=cfg.courant, allow_unstable=cfg.allow_unstable,
                monitor_every=cfg.monitor_every, divergence_factor=cfg.divergence_factor,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if cfg.analysis not in ("none", "energy", "norm", "pulse_speed") and cfg.analysis_probe not in {p.label for p in probes}:
            raise ConfigError(f"analysis {cfg.analysis!r} needs analysis_probe naming a probe")
        out.mkdir(parents=True, exist_ok=True)
        state = initial_state(bound, values)
        writer = _snapshot_writer(cfg, bound, out, cfg.snapshot_format) if every else None
        if writer is not None:
            writer(state)
        start = time.perf_counter()
        result = run(bound, plan, state, probes, writer, every, raise_on_divergence=False)
        wall = time.perf_counter() - start
    marker = "DIVERGED" if result.diverged is not None else None
    write_diagnostics(out / "diagnostics.csv", result.columns, result.diagnostics, marker)
    summary = {
        "model": cfg.model,
        "steps_requested": cfg.steps,
        "steps_done": result.state.step,
        "dt": plan.dt,
        "cfl_bound": plan.cfl,
        "final_time": result.state.t,
        "initial_energy": result.diagnostics[0]["energy"],
        "final_energy": result.diagnostics[-1]["energy"],
        "energy_drift": result.energy_drift,
        "wall_time_s": wall,
        "status": "diverged" if result.diverged else "ok",
    }
    if result.diverged is not None:
        summary["diverged_at_step"] = result.diverged.step
        summary["reason"] = result.diverged.reason
    else:
        try:
            summary["analysis"] = analyse(cfg.analysis, bound, result, cfg.init_params, values, cfg.analysis_probe or None)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"model {cfg.model}: {summary['steps_done']} steps, dt={format_float(plan.dt)}, status {summary['status']}")
    print(f"energy drift {summary['energy_drift']:.3e}")
    for k, v in summary.get("analysis", {}).items():
        print(f"{k}: {v!r}")
    if result.diverged is not None:
        print(f"DIVERGED at step {result.diverged.step}: {result.diverged.reason}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_verify(cfg: RunConfig | None, golden_path: str | None, out_dir: str | None) -> int:
    checks: list[tuple[str, bool, str]] = []
    extents = cfg.extents if cfg is not None else (4, 4, 4)
    spacings = cfg.spacings if cfg is not None else (1.0, 1.0, 1.0)
    periodic = cfg.periodic if cfg is not None else (False, False, False)
    cx = build_complex(3, extents, spacings, periodic)
    for p in range(2):
        dd = cx.incidence(p + 1) @ cx.incidence(p)
        checks.append((f"d∘d=0 (p={p})", dd.count_nonzero() == 0, f"nonzeros {dd.count_nonzero()}"))
    cx4 = build_complex(4, (3,) * 4, (1.0,) * 4)
    for p in range(3):
        dd = cx4.incidence(p + 1) @ cx4.incidence(p)
        checks.append((f"d∘d=0 (p={p}, 4D 3^4)", dd.count_nonzero() == 0, f"nonzeros {dd.count_nonzero()}"))
    try:
        golden = load_golden_pattern(golden_path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load golden pattern: {exc}") from None
    derived = derive_split_pattern()
    problems = compare_patterns(derived, golden)
    checks.append(("block pattern (derived vs golden)", not problems, "; ".join(problems) or f"{len(golden)} blocks"))
    for name in ("maxwell", "schrodinger", "elasticity"):
        bound = instantiate(get_model(name), cx)
        for label, part in bound.parts.items():
            probs = compare_patterns(part.op.pattern(), golden)
            tag = f"{name}{' ' + label if label else ''}"
            checks.append((f"block pattern ({tag} operator vs golden)", not probs, "; ".join(probs) or "match"))
    worst_all = 0
    for n in (2, 3):
        cx4 = build_complex(4, (n,) * 4, (1.0,) * 4)
        rep = verify_4d_decomposition(cx4, trials=100, seed=cfg.seed if cfg else 0)
        worst = max(rep.discrepancy.values())
        worst_all = max(worst_all, worst)
        checks.append((f"4D split {n}^4", rep.passed, f"max discrepancy {worst}"))
    failed = [c for c in checks if not c[1]]
    for name, ok, detail in checks:
        print(f"{name}: {'PASS' if ok else 'FAIL'}  {detail}")
    print(f"4D split: max discrepancy {worst_all}")
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "verify.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["check", "status", "detail"])
            for name, ok, detail in checks:
                w.writerow([name, "PASS" if ok else "FAIL", detail])
    if failed:
        print(f"FAILED: {', '.join(c[0] for c in failed)}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def cmd_rows(model: str) -> int:
    try:
        spec = get_model(model)
    except ValueError:
        print(f"unknown model {model!r}; available: {', '.join(MODEL_NAMES)}", file=sys.stderr)
        return EXIT_CONFIG
    print(row_map(spec))
    print("vector calculus form:")
    print(vector_proxy_table(spec))
    return EXIT_OK


def cmd_dump(cfg: RunConfig | None, out_dir: str | None) -> int:
    out = Path(out_dir or (cfg.out_dir if cfg else "operators"))
    out.mkdir(parents=True, exist_ok=True)
    if cfg is None:
        cx = build_complex(3, (2, 2, 2), (1.0, 1.0, 1.0))
        bound = instantiate(get_model("maxwell"), cx)
    else:
        _, bound = build_model(cfg)
        cx = bound.complex
    for p in range(3):
        write_triplets(out / f"D{p}.txt", cx.incidence(p))
    for label, part in bound.parts.items():
        prefix = f"{bound.spec.name}{'_' + label if label else ''}"
        for (row, col), blk in sorted(part.op.blocks.items(), key=lambda kv: (ROWS.index(kv[0][0]), COLS.index(kv[0][1]))):
            write_triplets(out / f"{prefix}_{row}_{col}_{blk.kind}.txt", blk.matrix)
    print(f"operators written to {out}")
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="conslaw", description="Discrete conservation-law engine on cubical grids.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="verb", required=True)

    def common(p, config_required=False):
        p.add_argument("--config", required=config_required, help="INI run configuration")
        p.add_argument("--threads", type=int, default=None, help="thread limit for numeric kernels")
        p.add_argument("--out", default=None, help="output directory")

    p = sub.add_parser("verify", help="structural checks (d∘d, block pattern, 4D split)")
    common(p)
    p.add_argument("--golden", default=None, help="alternative golden block table")
    p = sub.add_parser("run", help="time-step a configured model")
    common(p, config_required=True)
    p.add_argument("--snapshot-every", type=int, default=None, help="snapshot cadence in steps (0: none)")
    p = sub.add_parser("rows", help="print the active rows of a model")
    p.add_argument("model")
    p = sub.add_parser("dump-operators", help="write incidence and block matrices as triplets")
    common(p)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    try:
        if args.verb == "rows":
            return cmd_rows(args.model)
        cfg = load_config(args.config) if getattr(args, "config", None) else None
        base = Path(args.config).parent if getattr(args, "config", None) else Path(".")
        if args.verb == "run":
            if args.snapshot_every is not None and args.snapshot_every < 0:
                raise ConfigError("--snapshot-every must be >= 0")
            return cmd_run(cfg, base, args.out, args.snapshot_every, args.threads)
        with _threads(args.threads or 0):
            if args.verb == "verify":
                return cmd_verify(cfg, args.golden, args.out)
            return cmd_dump(cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergedError as exc:
        print(f"DIVERGED: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
