"""Run and sweep configuration files.

The format is one ``section.key = value`` assignment per line; values are
JSON literals (numbers, ``true``/``false``, ``null``, strings in double
quotes, lists). ``#`` starts a comment line. Serialization writes every key
in schema order with shortest round-trip float formatting, so
``parse(serialize(cfg)) == cfg``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .dynamics import SCHEMES, SchemeConfig
from .grid import Field, Grid, chirped_gaussian, read_field_csv
from .sweep import SweepPlan
from .theory import ModelParams

__all__ = [
    "ConfigError",
    "RunConfig",
    "InitialSpec",
    "parse_text",
    "load_run_config",
    "load_sweep_plan",
    "sweep_plan_from_text",
    "sweep_plan_to_text",
    "RUN_SCHEMA",
    "SWEEP_SCHEMA",
]


class ConfigError(ValueError):
    pass


# key -> (kind, default); kind is one of
# float, int, bool, str, float?, pair?, floats
_MODEL = {
    "model.lam": ("float", None),
    "model.p": ("float", None),
    "model.k": ("float", None),
    "model.r": ("float", None),
    "model.a": ("float", 0.0),
    "model.validation": ("bool", False),
}
_GRID = {
    "grid.L": ("float", 40.0),
    "grid.N": ("int", 2048),
}
_SCHEME = {
    "scheme.name": ("str", "CN"),
    "scheme.dt0": ("float", 1e-3),
    "scheme.nl_tol": ("float", 1e-12),
    "scheme.nl_max_iter": ("int", 50),
    "scheme.adapt": ("bool", False),
    "scheme.dt_min": ("float", 1e-9),
    "scheme.blowup_factor": ("float", 1e6),
    "scheme.blowup_threshold": ("float?", None),
    "scheme.oracle_tol": ("float", 1e-9),
}
RUN_SCHEMA = {
    **_MODEL,
    **_GRID,
    **_SCHEME,
    "initial.family": ("str", "chirped_gaussian"),
    "initial.amplitude": ("float", 1.0),
    "initial.chirp": ("float", 0.0),
    "initial.center": ("float", 0.0),
    "initial.width": ("float", 1.0),
    "initial.path": ("str", ""),
    "run.t_end": ("float", 1.0),
    "run.sample_every": ("float", 0.01),
    "run.snapshot_every": ("float?", None),
    "run.fit_window": ("pair?", None),
    "run.refinement_tol": ("float", 0.1),
    "run.out": ("str", "out"),
    "verify.min_order": ("float", 1.9),
    "verify.sample_stride": ("int", 10),
    "verify.ceiling": ("float", 1.0),
    "verify.floor": ("float", 1e-9),
}
SWEEP_SCHEMA = {
    "sweep.r": ("floats", None),
    "sweep.p": ("floats", None),
    "sweep.a": ("floats", [0.0]),
    "sweep.lam": ("floats", [1.0]),
    "sweep.amplitude": ("floats", [1.0]),
    "sweep.chirp": ("floats", [0.0]),
    "sweep.k": ("float", 1.0),
    "sweep.center": ("float", 2.0),
    "sweep.width": ("float", 1.0),
    "sweep.refine": ("str", "near-threshold"),
    "sweep.refinement_tol": ("float", 0.1),
    "sweep.workers": ("int", 1),
    "grid.L": ("float", 40.0),
    "grid.N": ("int", 1024),
    **{k: v for k, v in _SCHEME.items()},
    "scheme.adapt": ("bool", True),
    "scheme.blowup_factor": ("float", 30.0),
    "run.t_end": ("float", 10.0),
    "run.sample_every": ("float", 0.1),
    "run.fit_window": ("pair?", None),
}

FAMILIES = ("chirped_gaussian", "zero", "csv")


def _coerce(key: str, kind: str, value):
    def bad(expected):
        return ConfigError(f"{key}: expected {expected}, got {value!r}")

    if kind in ("float", "float?"):
        if value is None and kind == "float?":
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise bad("a number")
        v = float(value)
        if not math.isfinite(v):
            raise bad("a finite number")
        return v
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise bad("an integer")
        return int(value)
    if kind == "bool":
        if not isinstance(value, bool):
            raise bad("true or false")
        return value
    if kind == "str":
        if not isinstance(value, str):
            raise bad("a double-quoted string")
        return value
    if kind == "pair?":
        if value is None:
            return None
        if not isinstance(value, (list, tuple)) or len(value) != 2:
            raise bad("a list of two numbers or null")
        return (_coerce(key, "float", value[0]), _coerce(key, "float", value[1]))
    if kind == "floats":
        if not isinstance(value, (list, tuple)) or not value:
            raise bad("a nonempty list of numbers")
        return tuple(_coerce(key, "float", v) for v in value)
    raise AssertionError(kind)


def parse_text(text: str, schema: dict, source: str = "<config>") -> dict:
    """Parse assignments into a dict keyed like ``schema`` with defaults filled."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key not in schema:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            raw[key] = json.loads(value.strip())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc.msg}") from None
    out = {}
    for key, (kind, default) in schema.items():
        if key in raw:
            out[key] = _coerce(key, kind, raw[key])
        elif default is None and kind not in ("float?", "pair?"):
            raise ConfigError(f"{source}: missing required key {key!r}")
        else:
            out[key] = tuple(default) if isinstance(default, list) else default
    return out


def _dump_value(v) -> str:
    if isinstance(v, tuple):
        v = list(v)
    return json.dumps(v)


def serialize(values: dict, schema: dict) -> str:
    lines = []
    section = None
    for key in schema:
        head = key.split(".", 1)[0]
        if head != section:
            if section is not None:
                lines.append("")
            section = head
        lines.append(f"{key} = {_dump_value(values[key])}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class InitialSpec:
    family: str = "chirped_gaussian"
    amplitude: float = 1.0
    chirp: float = 0.0
    center: float = 0.0
    width: float = 1.0
    path: str = ""

    def build(self, grid: Grid) -> Field:
        """Initial field on ``grid``; CSV data must match the grid exactly."""
        if self.family == "zero":
            return grid.zeros()
        if self.family == "chirped_gaussian":
            return chirped_gaussian(grid, self.amplitude, self.chirp, self.center, self.width)
        f = read_field_csv(self.path)
        if f.grid != grid:
            raise ConfigError(
                f"{self.path}: field grid (L={f.grid.L}, N={f.grid.N}) does not match "
                f"the configured grid (L={grid.L}, N={grid.N})"
            )
        return f


@dataclass(frozen=True)
class RunConfig:
    values: dict = field(compare=True)

    # typed views
    @property
    def model(self) -> ModelParams:
        v = self.values
        return ModelParams(
            lam=v["model.lam"], p=v["model.p"], k=v["model.k"], r=v["model.r"],
            a=v["model.a"], validation=v["model.validation"],
        )

    @property
    def grid(self) -> Grid:
        return Grid(self.values["grid.L"], self.values["grid.N"])

    @property
    def scheme(self) -> SchemeConfig:
        return _scheme(self.values)

    @property
    def initial(self) -> InitialSpec:
        v = self.values
        return InitialSpec(
            v["initial.family"], v["initial.amplitude"], v["initial.chirp"],
            v["initial.center"], v["initial.width"], v["initial.path"],
        )

    def __getitem__(self, key):
        return self.values[key]

    def validate(self) -> "RunConfig":
        try:
            self.model
            self.grid
            self.scheme
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        v = self.values
        if v["initial.family"] not in FAMILIES:
            raise ConfigError(f"initial.family must be one of {FAMILIES}, got {v['initial.family']!r}")
        if v["initial.family"] == "csv" and not Path(v["initial.path"]).is_file():
            raise ConfigError(f"initial.path {v['initial.path']!r} does not exist")
        if v["run.t_end"] < 0:
            raise ConfigError("run.t_end must be nonnegative")
        if v["run.sample_every"] <= 0:
            raise ConfigError("run.sample_every must be positive")
        if v["run.snapshot_every"] is not None and v["run.snapshot_every"] <= 0:
            raise ConfigError("run.snapshot_every must be positive or null")
        w = v["run.fit_window"]
        if w is not None and not w[0] < w[1]:
            raise ConfigError("run.fit_window must satisfy lo < hi")
        if v["verify.sample_stride"] < 1:
            raise ConfigError("verify.sample_stride must be at least 1")
        return self

    def to_text(self) -> str:
        return serialize(self.values, RUN_SCHEMA)

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "RunConfig":
        return cls(parse_text(text, RUN_SCHEMA, source)).validate()

    def with_values(self, **changes) -> "RunConfig":
        """Copy with dotted keys given as ``section__key`` keyword names."""
        new = dict(self.values)
        for name, value in changes.items():
            key = name.replace("__", ".")
            if key not in RUN_SCHEMA:
                raise ConfigError(f"unknown key {key!r}")
            new[key] = _coerce(key, RUN_SCHEMA[key][0], value)
        return RunConfig(new).validate()


def _scheme(v: dict) -> SchemeConfig:
    name = v["scheme.name"]
    if name not in SCHEMES:
        raise ConfigError(f"scheme.name must be one of {sorted(SCHEMES)}, got {name!r}")
    return SchemeConfig(
        dt0=v["scheme.dt0"], scheme=name, nl_tol=v["scheme.nl_tol"],
        nl_max_iter=v["scheme.nl_max_iter"], adapt=v["scheme.adapt"],
        dt_min=v["scheme.dt_min"], blowup_factor=v["scheme.blowup_factor"],
        blowup_threshold=v["scheme.blowup_threshold"], oracle_tol=v["scheme.oracle_tol"],
    )


def _read(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror or exc}") from None


def load_run_config(path) -> RunConfig:
    return RunConfig.from_text(_read(path), str(path))


def sweep_plan_from_text(text: str, source: str = "<plan>") -> SweepPlan:
    v = parse_text(text, SWEEP_SCHEMA, source)
    try:
        return SweepPlan(
            r=v["sweep.r"], p=v["sweep.p"], a=v["sweep.a"], lam=v["sweep.lam"],
            amplitude=v["sweep.amplitude"], chirp=v["sweep.chirp"], k=v["sweep.k"],
            center=v["sweep.center"], width=v["sweep.width"],
            L=v["grid.L"], N=v["grid.N"], scheme=_scheme(v),
            t_end=v["run.t_end"], sample_every=v["run.sample_every"],
            refine=v["sweep.refine"], refinement_tol=v["sweep.refinement_tol"],
            fit_window=v["run.fit_window"], workers=v["sweep.workers"],
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def sweep_plan_to_text(plan: SweepPlan) -> str:
    s = plan.scheme
    values = {
        "sweep.r": plan.r, "sweep.p": plan.p, "sweep.a": plan.a, "sweep.lam": plan.lam,
        "sweep.amplitude": plan.amplitude, "sweep.chirp": plan.chirp, "sweep.k": plan.k,
        "sweep.center": plan.center, "sweep.width": plan.width, "sweep.refine": plan.refine,
        "sweep.refinement_tol": plan.refinement_tol, "sweep.workers": plan.workers,
        "grid.L": plan.L, "grid.N": plan.N,
        "scheme.name": s.scheme, "scheme.dt0": s.dt0, "scheme.nl_tol": s.nl_tol,
        "scheme.nl_max_iter": s.nl_max_iter, "scheme.adapt": s.adapt, "scheme.dt_min": s.dt_min,
        "scheme.blowup_factor": s.blowup_factor, "scheme.blowup_threshold": s.blowup_threshold,
        "scheme.oracle_tol": s.oracle_tol,
        "run.t_end": plan.t_end, "run.sample_every": plan.sample_every, "run.fit_window": plan.fit_window,
    }
    return serialize(values, SWEEP_SCHEMA)


def load_sweep_plan(path) -> SweepPlan:
    return sweep_plan_from_text(_read(path), str(path))
