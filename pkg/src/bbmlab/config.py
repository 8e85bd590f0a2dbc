"""``key = value`` configuration files and their per-subcommand schemas.

Blank lines and lines starting with ``#`` are ignored.  A repeated key keeps
the last value and logs a warning.  Command-line flags override file values.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass
from typing import Callable

from bbmlab.errors import ConfigError
from bbmlab.lab.experiments import DEFAULT_X_GRID, DEFAULT_Y_GRID

log = logging.getLogger(__name__)

REQUIRED = object()


@dataclass(frozen=True)
class Key:
    name: str
    kind: str  # int, float, bool, str, floats, choice
    default: object = None
    choices: tuple = ()
    check: Callable[[object], bool] | None = None
    rule: str = ""


def _pos(v) -> bool:
    return v > 0


def _alpha(v) -> bool:
    return 0 < v <= 0.5


def _dt(v) -> bool:
    return 0 < v <= 0.1


COMMON = (
    Key("seed", "int", 0, check=lambda v: 0 <= v < 2**64, rule="an unsigned 64-bit integer"),
    Key("threads", "int", 1, check=lambda v: v >= 1, rule=">= 1"),
    Key("out", "str", None),
    Key("assert", "bool", False),
)

SCHEMAS: dict[str, tuple] = {
    "simulate": (
        Key("T", "float", REQUIRED, check=_pos, rule="> 0"),
        Key("mode", "choice", "event", choices=("event", "grid")),
        Key("dt", "float", 0.01, check=_dt, rule="in (0, 0.1]"),
        Key("snapshots", "floats", ()),
        Key("prune", "choice", "none", choices=("none", "line_barrier", "gap_to_max", "cap_count")),
        Key("A", "float", None, check=_pos, rule="> 0"),
        Key("L", "float", None, check=_pos, rule="> 0"),
        Key("N_max", "int", None, check=lambda v: v >= 1, rule=">= 1"),
        Key("hard_limit", "int", 2_000_000, check=lambda v: v >= 1, rule=">= 1"),
        Key("trials", "int", 1, check=lambda v: v >= 1, rule=">= 1"),
        Key("genealogy", "bool", False),
        Key("checkpoint", "str", None),
        Key("checkpoint_at", "float", None, check=_pos, rule="> 0"),
        Key("resume", "str", None),
    ),
    "ergodic": (
        Key("T", "float", 50.0, check=_pos, rule="> 0"),
        Key("eps", "float", 0.1, check=lambda v: 0 < v < 1, rule="in (0, 1)"),
        Key("L", "float", 8.0, check=_pos, rule="> 0"),
        Key("dt_sample", "float", 0.1, check=_pos, rule="> 0"),
        Key("x_grid", "floats", DEFAULT_X_GRID),
        Key("seeds", "int", 8, check=lambda v: v >= 2, rule=">= 2"),
        Key("t0", "float", 5.0, check=_pos, rule="> 0"),
        Key("fit_low", "float", -1.0),
        Key("fit_high", "float", 1.0),
        Key("beta", "float", 0.9, check=lambda v: 0 < v < 1, rule="in (0, 1)"),
        Key("signal_x", "float", 0.0),
        Key("sensitivity", "bool", True),
        Key("hard_limit", "int", 2_000_000, check=lambda v: v >= 1, rule=">= 1"),
    ),
    "early-branching": (
        Key("s", "float", 6.0, check=_pos, rule="> 0"),
        Key("t", "float", 12.0, check=_pos, rule="> 0"),
        Key("x", "float", -1.0),
        Key("x_t", "float", None),
        Key("R", "floats", (1.0, 2.0, 4.0)),
        Key("trials", "int", 10_000, check=lambda v: v >= 1, rule=">= 1"),
    ),
    "localization": (
        Key("t", "float", 10.0, check=_pos, rule="> 0"),
        Key("x", "float", -1.0),
        Key("alpha", "float", 0.4, check=_alpha, rule="in (0, 1/2]"),
        Key("r", "floats", (1.0, 2.0, 3.0)),
        Key("trials", "int", 1000, check=lambda v: v >= 1, rule=">= 1"),
        Key("dt", "float", 0.01, check=_dt, rule="in (0, 0.1]"),
    ),
    "decorrelate": (
        Key("R", "float", 2.0, check=_pos, rule="> 0"),
        Key("s", "float", 6.0, check=_pos, rule="> 0"),
        Key("t", "float", 10.0, check=_pos, rule="> 0"),
        Key("x", "float", -1.0),
        Key("y", "float", -1.0),
        Key("outer", "int", 200, check=lambda v: v >= 1, rule=">= 1"),
        Key("inner", "int", 500, check=lambda v: v >= 2, rule=">= 2"),
    ),
    "bkr-check": (
        Key("instances", "int", 1000, check=lambda v: v >= 1, rule=">= 1"),
        Key("n_max", "int", 3, check=lambda v: v >= 1, rule=">= 1"),
        Key("size_max", "int", 4, check=lambda v: v >= 1, rule=">= 1"),
    ),
    "bridge-check": (
        Key("paths", "int", 100_000, check=lambda v: v >= 100, rule=">= 100"),
        Key("steps", "int", 1000, check=lambda v: v >= 10, rule=">= 10"),
        Key("tuples", "int", 50, check=lambda v: v >= 1, rule=">= 1"),
        Key("tuple_paths", "int", 10_000, check=lambda v: v >= 100, rule=">= 100"),
    ),
    "moment-check": (
        Key("trials", "int", 100_000, check=lambda v: v >= 2, rule=">= 2"),
        Key("nodes", "int", 256, check=lambda v: v >= 64, rule=">= 64"),
    ),
    "tail": (
        Key("t", "float", 10.0, check=_pos, rule="> 0"),
        Key("trials", "int", 20_000, check=lambda v: v >= 1, rule=">= 1"),
        Key("y_grid", "floats", DEFAULT_Y_GRID),
        Key("fit_low", "float", 1.0),
        Key("fit_high", "float", 3.5),
        Key("min_hits", "int", 100, check=lambda v: v >= 1, rule=">= 1"),
    ),
}

SUBCOMMANDS = tuple(SCHEMAS)


def schema(subcommand: str) -> dict[str, Key]:
    if subcommand not in SCHEMAS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    return {k.name: k for k in COMMON + SCHEMAS[subcommand]}


def _convert(key: Key, raw: str):
    raw = raw.strip()
    if raw.lower() in ("", "none") and key.kind != "str" and key.default is None:
        return None
    try:
        if key.kind == "int":
            v = int(raw, 10)
        elif key.kind == "float":
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError
        elif key.kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            v = low in ("true", "1", "yes")
        elif key.kind == "floats":
            parts = [p for p in raw.replace(",", " ").split() if p]
            v = tuple(float(p) for p in parts)
            if not all(math.isfinite(p) for p in v):
                raise ValueError
        elif key.kind == "choice":
            if raw not in key.choices:
                raise ConfigError(f"{key.name}: {raw!r} is not one of {', '.join(key.choices)}")
            v = raw
        else:
            v = raw
    except ValueError:
        raise ConfigError(f"{key.name}: cannot read {raw!r} as {key.kind}") from None
    if key.check is not None and v is not None and not key.check(v):
        raise ConfigError(f"{key.name} = {raw} is outside its domain ({key.rule})")
    return v


def read_config_file(path: str) -> list[tuple[str, str, int]]:
    """(key, raw value, line number) triples in file order."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e.strerror}") from e
    out = []
    for n, line in enumerate(lines, 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        if "=" not in s:
            raise ConfigError(f"{path}:{n}: expected 'key = value', got {s!r}")
        k, v = s.split("=", 1)
        out.append((k.strip(), v.strip(), n))
    return out


def parse_config(subcommand: str, path: str | None = None,
                 flags: dict[str, str] | None = None) -> dict:
    """Resolve defaults, then file values, then flags; every key is materialised."""
    keys = schema(subcommand)
    raw: dict[str, str] = {}
    if path is not None:
        seen: dict[str, int] = {}
        for k, v, n in read_config_file(path):
            if k not in keys:
                raise ConfigError(f"unknown config key {k!r} ({path}:{n})")
            if k in seen:
                log.warning("duplicate key %r at %s:%d overrides line %d", k, path, n, seen[k])
            seen[k] = n
            raw[k] = v
    for k, v in (flags or {}).items():
        if k not in keys:
            raise ConfigError(f"unknown config key {k!r}")
        raw[k] = v
    cfg = {}
    for name, key in keys.items():
        if name in raw:
            cfg[name] = _convert(key, raw[name])
        elif key.default is REQUIRED:
            raise ConfigError(f"missing required key {name!r}")
        else:
            cfg[name] = key.default
    if cfg["out"] is None:
        cfg["out"] = os.environ.get("BBM_OUT_DIR", "bbm_out")
    return cfg
