"""Run configuration in INI form (``key = value`` sections)."""
from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

__all__ = ["ConfigError", "ProbeSpec", "RunConfig", "load_config", "parse_config"]

AXES = "xyz"
BOUNDARIES = ("periodic", "dirichlet")
SNAPSHOT_FORMATS = ("vtk", "csv", "binary")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ProbeSpec:
    """``label = var axes x y z [component]``; ``axes`` is ``-`` for vertices."""

    label: str
    var: str
    axes: str
    point: tuple[float, float, float]
    component: int = 0

    def to_text(self) -> str:
        pt = " ".join(repr(c) for c in self.point)
        return f"{self.var} {self.axes} {pt} {self.component}"

    @classmethod
    def parse(cls, label: str, text: str) -> "ProbeSpec":
        parts = text.split()
        if len(parts) not in (5, 6):
            raise ConfigError(f"probe {label}: expected 'var axes x y z [component]', got {text!r}")
        var, axes = parts[0], parts[1]
        if axes != "-" and (any(a not in AXES for a in axes) or list(axes) != sorted(set(axes))):
            raise ConfigError(f"probe {label}: axes must be '-' or increasing letters from 'xyz'")
        try:
            point = tuple(float(p) for p in parts[2:5])
            comp = int(parts[5]) if len(parts) == 6 else 0
        except ValueError:
            raise ConfigError(f"probe {label}: bad number in {text!r}") from None
        return cls(label, var, axes, point, comp)


@dataclass(frozen=True)
class RunConfig:
    model: str
    extents: tuple[int, int, int]
    model_params: Mapping[str, str] = field(default_factory=dict)
    length: tuple[float, float, float] = (1.0, 1.0, 1.0)
    boundary: str = "periodic"
    periodic_axes: str = ""  # axes kept periodic under a Dirichlet boundary
    steps: int = 100
    courant: float = 0.5
    dt: float | None = None
    allow_unstable: bool = False
    monitor_every: int = 1
    divergence_factor: float | None = 1e6
    init: str = "zero"
    init_params: Mapping[str, str] = field(default_factory=dict)
    noise: float = 0.0
    seed: int = 0
    probes: tuple[ProbeSpec, ...] = ()
    out_dir: str = "out"
    snapshot_every: int = 0
    snapshot_format: str = "vtk"
    analysis: str = "none"
    analysis_probe: str = ""
    threads: int = 0  # 0: library default

    def __post_init__(self) -> None:
        if not self.model:
            raise ConfigError("model name is required")
        if len(self.extents) != 3 or any(int(n) < 1 for n in self.extents):
            raise ConfigError("grid extents must be three positive integers")
        if len(self.length) != 3 or any(not (float(v) > 0) for v in self.length):
            raise ConfigError("grid length must be three positive numbers")
        if self.boundary not in BOUNDARIES:
            raise ConfigError(f"boundary must be one of {BOUNDARIES}")
        if any(a not in AXES for a in self.periodic_axes):
            raise ConfigError("periodic_axes takes letters from 'xyz'")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.dt is None and not self.courant > 0:
            raise ConfigError("courant must be positive")
        if self.dt is not None and self.dt == 0:
            raise ConfigError("dt must be nonzero")
        if self.monitor_every < 1:
            raise ConfigError("monitor_every must be >= 1")
        if self.snapshot_every < 0:
            raise ConfigError("snapshot_every must be >= 0")
        if self.snapshot_format not in SNAPSHOT_FORMATS:
            raise ConfigError(f"snapshot_format must be one of {SNAPSHOT_FORMATS}")
        if self.threads < 0:
            raise ConfigError("threads must be >= 0")

    @property
    def spacings(self) -> tuple[float, float, float]:
        return tuple(float(l) / int(n) for l, n in zip(self.length, self.extents))

    @property
    def periodic(self) -> tuple[bool, bool, bool]:
        if self.boundary == "periodic":
            return (True, True, True)
        return tuple(a in self.periodic_axes for a in AXES)

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp["model"] = {"name": self.model, **dict(self.model_params)}
        cp["grid"] = {
            "extents": ", ".join(str(n) for n in self.extents),
            "length": ", ".join(repr(float(v)) for v in self.length),
            "boundary": self.boundary,
            "periodic_axes": self.periodic_axes,
        }
        cp["time"] = {
            "steps": str(self.steps),
            "courant": repr(self.courant),
            "dt": "" if self.dt is None else repr(self.dt),
            "allow_unstable": str(self.allow_unstable).lower(),
            "monitor_every": str(self.monitor_every),
            "divergence_factor": "none" if self.divergence_factor is None else repr(self.divergence_factor),
        }
        cp["init"] = {"kind": self.init, "noise": repr(self.noise), "seed": str(self.seed), **dict(self.init_params)}
        cp["probes"] = {p.label: p.to_text() for p in self.probes}
        cp["output"] = {
            "dir": self.out_dir,
            "snapshot_every": str(self.snapshot_every),
            "snapshot_format": self.snapshot_format,
            "analysis": self.analysis,
            "analysis_probe": self.analysis_probe,
            "threads": str(self.threads),
        }
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _tuple(text: str, conv, n: int, what: str):
    try:
        vals = tuple(conv(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"{what}: bad value {text!r}") from None
    if len(vals) != n:
        raise ConfigError(f"{what}: expected {n} values, got {len(vals)}")
    return vals


def _get(section, key: str, conv, default):
    if section is None or key not in section or section[key].strip() == "":
        return default
    raw = section[key].strip()
    try:
        if conv is bool:
            low = raw.lower()
            if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                raise ValueError
            return low in ("true", "yes", "1", "on")
        return conv(raw)
    except ValueError:
        raise ConfigError(f"[{section.name}] {key}: bad value {raw!r}") from None


def _optional_float(raw: str) -> float | None:
    return None if raw.lower() == "none" else float(raw)


_KNOWN = {
    "grid": {"extents", "length", "boundary", "periodic_axes"},
    "time": {"steps", "courant", "dt", "allow_unstable", "monitor_every", "divergence_factor"},
    "output": {"dir", "snapshot_every", "snapshot_format", "analysis", "analysis_probe", "threads"},
}


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    unknown = set(cp.sections()) - {"model", "grid", "time", "init", "probes", "output"}
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    for name, keys in _KNOWN.items():
        if cp.has_section(name):
            extra = set(cp[name]) - keys
            if extra:
                raise ConfigError(f"[{name}]: unknown key(s) {', '.join(sorted(extra))}")
    if not cp.has_section("model") or not cp["model"].get("name", "").strip():
        raise ConfigError("[model] name is required")
    if not cp.has_section("grid") or "extents" not in cp["grid"]:
        raise ConfigError("[grid] extents is required")
    model = cp["model"]
    grid = cp["grid"]
    tm = cp["time"] if cp.has_section("time") else None
    init = cp["init"] if cp.has_section("init") else None
    out = cp["output"] if cp.has_section("output") else None
    probes = ()
    if cp.has_section("probes"):
        probes = tuple(ProbeSpec.parse(k, v) for k, v in cp["probes"].items())
    init_params = {k: v for k, v in (init.items() if init is not None else ()) if k not in ("kind", "noise", "seed")}
    return RunConfig(
        model=model["name"].strip(),
        model_params={k: v for k, v in model.items() if k != "name"},
        extents=_tuple(grid["extents"], int, 3, "[grid] extents"),
        length=_tuple(grid.get("length", "1 1 1"), float, 3, "[grid] length"),
        boundary=_get(grid, "boundary", str, "periodic"),
        periodic_axes=_get(grid, "periodic_axes", str, "").replace(",", "").replace(" ", ""),
        steps=_get(tm, "steps", int, 100),
        courant=_get(tm, "courant", float, 0.5),
        dt=_get(tm, "dt", float, None),
        allow_unstable=_get(tm, "allow_unstable", bool, False),
        monitor_every=_get(tm, "monitor_every", int, 1),
        divergence_factor=_get(tm, "divergence_factor", _optional_float, 1e6),
        init=_get(init, "kind", str, "zero"),
        init_params=init_params,
        noise=_get(init, "noise", float, 0.0),
        seed=_get(init, "seed", int, 0),
        probes=probes,
        out_dir=_get(out, "dir", str, "out"),
        snapshot_every=_get(out, "snapshot_every", int, 0),
        snapshot_format=_get(out, "snapshot_format", str, "vtk"),
        analysis=_get(out, "analysis", str, "none"),
        analysis_probe=_get(out, "analysis_probe", str, ""),
        threads=_get(out, "threads", int, 0),
    )


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)
