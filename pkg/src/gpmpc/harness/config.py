"""Scenario configuration: YAML grammar, defaults and validation.

A scenario file is a YAML mapping::

    application: pathfollow | platoon
    controller: nmpc | gp-nmpc | fblmpc | gp-fblmpc | mpc | gp-mpc | sparse-gp-mpc
    seed: 1
    duration: 30.0          # simulated seconds
    gp: {...}               # optional
    pathfollow: {...}       # only for application pathfollow
    platoon: {...}          # only for application platoon

Every section and key is listed in ``SCHEMA`` with its default. Unknown
keys are errors. Validation never stops at the first problem: all errors
are collected and reported together, with YAML line numbers when known.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from pathlib import Path

import yaml

from gpmpc.errors import ConfigError

APPLICATIONS = ("pathfollow", "platoon")
APP_CONTROLLERS = {
    "pathfollow": ("nmpc", "gp-nmpc", "fblmpc", "gp-fblmpc"),
    "platoon": ("mpc", "gp-mpc", "sparse-gp-mpc"),
}
REQUIRED = object()


@dataclass(frozen=True)
class Field:
    kind: str  # float | int | str | bool | path
    default: object = REQUIRED
    choices: tuple | None = None
    low: float | None = None  # inclusive lower bound
    positive: bool = False
    nullable: bool = False


def _f(default, **kw):
    return Field("float", default, **kw)


def _i(default, **kw):
    return Field("int", default, **kw)


PATH_SCHEMA = {
    "kind": Field("str", "figure_eight", choices=("straight", "circle", "figure_eight", "csv")),
    "file": Field("path", None, nullable=True),
    "length": _f(40.0, positive=True),
    "radius": _f(6.0, positive=True),
    "size": _f(6.0, positive=True),
    "speed": _f(1.0, positive=True),
}

SCHEMA = {
    "application": Field("str", REQUIRED, choices=APPLICATIONS),
    "controller": Field("str", REQUIRED, choices=tuple(c for cs in APP_CONTROLLERS.values() for c in cs)),
    "seed": _i(REQUIRED, low=0),
    "duration": _f(30.0, positive=True),
    "gp": {
        "kind": Field("str", "exact", choices=("exact", "sparse")),
        "inducing": _i(20, low=1),
        "strategy": Field("str", "greedy-variance", choices=("subset-random", "kmeans-like", "greedy-variance")),
        "budget": _i(None, low=1, nullable=True),  # None: 60 for pathfollow, 80 for platoon
        "max_points": _i(None, low=10, nullable=True),  # None: 300 for pathfollow, 400 for platoon
        "load": Field("path", None, nullable=True),
    },
    "pathfollow": {
        "path": PATH_SCHEMA,
        "slip": {
            "gamma_v": _f(0.85, low=0.0),
            "beta_v": _f(0.0),
            "gamma_w": _f(0.9, low=0.0),
            "beta_w": _f(0.0),
            "w_bias": _f(0.1),
            "lateral_drift": _f(0.05),
            "noise_v": _f(0.01, low=0.0),
            "noise_w": _f(0.01, low=0.0),
        },
        "controller": {
            "T": _f(0.1, positive=True),
            "N": _i(20, low=1),
            "omega_max": _f(2.0, positive=True),
            "initial_offset": _f(0.3),
            "q_lat": _f(10.0, low=0.0),
            "q_rate": _f(1.0, low=0.0),
            "r_fbl": _f(0.1, positive=True),
            "q_pos": _f(10.0, low=0.0),
            "q_head": _f(1.0, low=0.0),
            "r_v": _f(1.0, positive=True),
            "r_w": _f(0.1, positive=True),
            "max_iter": _i(15, low=1),
            "tol": _f(1e-4, positive=True),
        },
        "training": {
            "path": dict(PATH_SCHEMA, kind=Field("str", None, nullable=True,
                                                 choices=("straight", "circle", "figure_eight", "csv"))),
            "duration": _f(None, positive=True, nullable=True),
            "seed_offset": _i(1000, low=0),
        },
    },
    "platoon": {
        "profile": {
            "kind": Field("str", "emergency_brake", choices=("constant", "emergency_brake", "wltp_like")),
            "cruise": _f(15.0, positive=True),
            "brake_at": _f(10.0, low=0.0),
            "stop_hold": _f(3.0, low=0.0),
        },
        "driver": {
            "delay": _i(1, low=0),
            "gain": _f(0.5, positive=True),
            "noise_std": _f(0.1, low=0.0),
            "saturation": _f(1.0, positive=True, nullable=True),
            "drag": _f(0.0, low=0.0),
            "speed_fade": _f(0.9, low=0.0),
            "v_max": _f(30.0, positive=True),
        },
        "limits": {
            "T": _f(0.1, positive=True),
            "N": _i(20, low=1),
            "n_av": _i(3, low=1),
            "delta": _f(10.0, positive=True),
            "delta_ext": _f(0.0, low=0.0),
            "p_def": _f(0.95),
            "v_min": _f(0.0),
            "v_max": _f(30.0),
            "acc_min": _f(-6.0),
            "acc_max": _f(3.0),
            "R": _f(1.0, positive=True),
            "Q1": _f(10.0, low=0.0),
            "Q2": _f(10.0, low=0.0),
        },
        "initial": {
            "gap_av": _f(15.0, positive=True),
            "gap_hv": _f(23.0, positive=True),
        },
        "training": {
            "duration": _f(120.0, positive=True),
            "harsh_brakes": _i(2, low=0),
            "lead_jitter": _f(1.5, low=0.0),
            "seed_offset": _i(1000, low=0),
        },
    },
}


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated scenario with every default filled in."""

    data: dict
    source: str | None = None

    @property
    def application(self) -> str:
        return self.data["application"]

    @property
    def controller(self) -> str:
        return self.data["controller"]

    @property
    def seed(self) -> int:
        return self.data["seed"]

    @property
    def duration(self) -> float:
        return self.data["duration"]

    @property
    def gp(self) -> dict:
        return self.data["gp"]

    @property
    def section(self) -> dict:
        return self.data[self.application]

    @property
    def uses_gp(self) -> bool:
        return self.controller.startswith(("gp-", "sparse-gp-"))

    def with_seed(self, seed: int) -> "ScenarioConfig":
        d = copy.deepcopy(self.data)
        d["seed"] = int(seed)
        return ScenarioConfig(d, self.source)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=True, default_flow_style=False)


def _line_map(text: str) -> dict:
    """Dotted key path -> 1-based line of the key in the YAML source."""
    out: dict = {}
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError:
        return out

    def walk(node, prefix):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = f"{prefix}{k.value}"
                out[key] = k.start_mark.line + 1
                walk(v, key + ".")

    walk(root, "")
    return out


def _check_value(spec: Field, value, where: str, errors: list, base: Path | None):
    if value is None:
        if spec.nullable or spec.default is None:
            return None
        errors.append(f"{where}: must not be null")
        return None
    kind = spec.kind
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            errors.append(f"{where}: expected a number, got {value!r}")
            return None
        value = float(value)
        if not math.isfinite(value):
            errors.append(f"{where}: must be finite")
            return None
    elif kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            errors.append(f"{where}: expected an integer, got {value!r}")
            return None
    elif kind == "bool":
        if not isinstance(value, bool):
            errors.append(f"{where}: expected true/false, got {value!r}")
            return None
    elif kind in ("str", "path"):
        if not isinstance(value, str):
            errors.append(f"{where}: expected a string, got {value!r}")
            return None
    if spec.choices is not None and value not in spec.choices:
        errors.append(f"{where}: {value!r} is not one of {', '.join(spec.choices)}")
        return None
    if spec.positive and value <= 0:
        errors.append(f"{where}: must be > 0")
    if spec.low is not None and value < spec.low:
        errors.append(f"{where}: must be >= {spec.low}")
    if kind == "path":
        p = Path(value)
        if not p.is_absolute() and base is not None:
            p = base / p
        if not p.exists():
            errors.append(f"{where}: file {value!r} does not exist")
        value = str(p)
    return value


def _merge(schema: dict, given, prefix: str, errors: list, base: Path | None) -> dict:
    if given is None:
        given = {}
    if not isinstance(given, dict):
        errors.append(f"{prefix.rstrip('.') or '<root>'}: expected a mapping")
        given = {}
    out = {}
    for key in given:
        if not isinstance(key, str) or key not in schema:
            errors.append(f"{prefix}{key}: unknown key")
    for key, spec in schema.items():
        where = f"{prefix}{key}"
        if isinstance(spec, dict):
            out[key] = _merge(spec, given.get(key), where + ".", errors, base)
            continue
        if key not in given:
            if spec.default is REQUIRED:
                errors.append(f"{where}: required field is missing")
                out[key] = None
            else:
                out[key] = copy.deepcopy(spec.default)
            continue
        out[key] = _check_value(spec, given[key], where, errors, base)
    return out


def _semantic_checks(d: dict, given: dict, errors: list):
    app, ctrl = d.get("application"), d.get("controller")
    if app in APP_CONTROLLERS and ctrl is not None and ctrl not in APP_CONTROLLERS[app]:
        errors.append(f"controller: {ctrl!r} is not available for application {app!r} "
                      f"(choose one of {', '.join(APP_CONTROLLERS[app])})")
    for other in APPLICATIONS:
        if app in APPLICATIONS and other != app and other in given:
            errors.append(f"{other}: section does not apply to application {app!r}")
    if app == "platoon":
        gp_kind = given.get("gp", {}).get("kind") if isinstance(given.get("gp"), dict) else None
        if gp_kind is not None and ctrl in ("gp-mpc", "sparse-gp-mpc"):
            implied = "sparse" if ctrl == "sparse-gp-mpc" else "exact"
            if gp_kind != implied:
                errors.append(f"gp.kind: {gp_kind!r} conflicts with controller {ctrl!r}")
        lim = d["platoon"]["limits"]
        if all(isinstance(lim.get(k), float) for k in ("p_def", "v_min", "v_max", "acc_min", "acc_max")):
            if not 0.5 <= lim["p_def"] < 1.0:
                errors.append("platoon.limits.p_def: must be in [0.5, 1)")
            if not lim["v_min"] < lim["v_max"]:
                errors.append("platoon.limits.v_min: must be below v_max")
            if not lim["acc_min"] < 0.0 < lim["acc_max"]:
                errors.append("platoon.limits.acc_min: acc_min < 0 < acc_max required")
        drv = d["platoon"]["driver"]
        if isinstance(drv.get("speed_fade"), float) and drv["speed_fade"] >= 1.0:
            errors.append("platoon.driver.speed_fade: must be < 1")
    if app == "pathfollow":
        for sect in ("path",):
            p = d["pathfollow"][sect]
            if p.get("kind") == "csv" and not p.get("file"):
                errors.append(f"pathfollow.{sect}.file: required when kind is csv")
        tp = d["pathfollow"]["training"]["path"]
        if tp.get("kind") == "csv" and not tp.get("file"):
            errors.append("pathfollow.training.path.file: required when kind is csv")
    dur = d.get("duration")
    if app in APPLICATIONS and isinstance(dur, float):
        T = d[app]["limits" if app == "platoon" else "controller"]["T"]
        if isinstance(T, float) and T > 0 and dur / T > 1e6:
            errors.append("duration: too many steps (duration / T > 1e6)")


def _locate(errors: list, lines: dict) -> list:
    out = []
    for e in errors:
        key = e.split(":", 1)[0]
        line = lines.get(key)
        while line is None and "." in key:
            key = key.rsplit(".", 1)[0]
            line = lines.get(key)
        out.append(f"line {line}: {e}" if line is not None else e)
    return out


def parse_config_text(text: str, source: str | None = None, base: Path | None = None) -> ScenarioConfig:
    """Validate YAML text; raises :class:`ConfigError` listing every problem."""
    try:
        given = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark is not None else "unknown position"
        raise ConfigError([f"{where}: YAML parse error: {exc.problem}"]) from None
    except yaml.YAMLError as exc:
        raise ConfigError([f"YAML parse error: {exc}"]) from None
    if not isinstance(given, dict):
        raise ConfigError(["<root>: configuration must be a YAML mapping"])
    errors: list = []
    schema = dict(SCHEMA)
    d = _merge(schema, given, "", errors, base)
    app = d.get("application")
    for other in APPLICATIONS:
        if other != app:
            d.pop(other, None)
    _semantic_checks(d, given, errors)
    if errors:
        raise ConfigError(_locate(errors, _line_map(text)))
    return ScenarioConfig(d, source)


def validate_config(path) -> ScenarioConfig:
    """Read and validate a scenario file.

    Raises
    ------
    ConfigError
        With the full list of problems. Any unexpected failure while
        reading or checking is reported the same way.
    """
    try:
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            raise ConfigError([f"{path}: cannot read configuration ({exc})"]) from None
        return parse_config_text(text, str(p), p.parent)
    except ConfigError:
        raise
    except Exception as exc:  # validation must never crash
        raise ConfigError([f"{path}: invalid configuration ({type(exc).__name__}: {exc})"]) from None
