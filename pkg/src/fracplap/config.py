"""Sectioned ``key = value`` run configurations.

Grammar (one item per line, ``#`` starts a comment)::

    command = solve            # top-level keys come before any section
    seed = 0
    [operator]
    s = 0.5
    p = 2

Unknown sections or keys are errors.  Errors carry the 1-based line and
column of the offending token.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field as dc_field

from .core import OperatorParams

__all__ = ["ConfigError", "RunConfig", "parse_config", "COMMANDS", "SCHEMA"]

COMMANDS = ("eval", "solve", "eigen", "slide", "verify")


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None,
                 token: str | None = None):
        where = f"line {line}, column {column}: " if line is not None else ""
        tok = f" (at {token!r})" if token is not None else ""
        super().__init__(f"{where}{message}{tok}")
        self.line, self.column, self.token = line, column, token


def _float(v):
    return float(v)


def _int(v):
    return int(v)


def _floats(v):
    return tuple(float(x) for x in v.split(",") if x.strip())


def _ints(v):
    return tuple(int(x) for x in v.split(",") if x.strip())


def _names(v):
    return tuple(x.strip() for x in v.split(",") if x.strip())


def _str(v):
    return v


SCHEMA: dict = {
    "": {"command": _str, "seed": _int, "threads": _int, "out": _str, "field": _str},
    "operator": {"n": _int, "s": _float, "p": _float, "c_norm": _float,
                 "delta_split": _float, "cell_rule": _str, "tail_radius": _float},
    "grid": {"origin": _floats, "h": _float, "counts": _ints, "truncation_radius": _float,
             "length": _float},
    "domain": {"kind": _str, "center": _floats, "radius": _float, "height": _float},
    "nonlinearity": {"kind": _str},
    "solver": {"dt": _float, "tol": _float, "max_iters": _int, "damping": _float,
               "init": _str, "exterior": _str, "tol_far": _float},
    "verify": {"suites": _names, "tau": _float, "tau_max": _float, "direction": _floats,
               "slide_tol": _float},
}


@dataclass
class RunConfig:
    command: str = "verify"
    seed: int = 0
    threads: int = 1
    out: str = "out"
    field: str | None = None
    operator: dict = dc_field(default_factory=dict)
    grid: dict = dc_field(default_factory=dict)
    domain: dict = dc_field(default_factory=dict)
    nonlinearity: dict = dc_field(default_factory=dict)
    solver: dict = dc_field(default_factory=dict)
    verify: dict = dc_field(default_factory=dict)
    text: str = ""
    positions: dict = dc_field(default_factory=dict, repr=False)

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()

    def params(self) -> OperatorParams:
        op = self.operator
        return OperatorParams(op.get("n", self.grid_dim()), op.get("s", 0.5), op.get("p", 2.0),
                              op.get("c_norm", 1.0))

    def grid_dim(self) -> int:
        if "origin" in self.grid:
            return len(self.grid["origin"])
        return self.operator.get("n", 1)


def parse_config(text: str, command: str | None = None) -> RunConfig:
    """Parse and validate; ``command`` overrides the file's own top-level command."""
    cfg = RunConfig(text=text)
    section = ""
    seen: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        stripped = line.strip()
        if not stripped:
            continue
        col = len(line) - len(line.lstrip()) + 1
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ConfigError("unterminated section header", lineno, col, stripped)
            name = stripped[1:-1].strip()
            if name not in SCHEMA or name == "":
                raise ConfigError(f"unknown section [{name}]", lineno, col + 1, name)
            section = name
            continue
        if "=" not in stripped:
            raise ConfigError("expected 'key = value'", lineno, col, stripped)
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if key not in SCHEMA[section]:
            where = f"[{section}]" if section else "top level"
            raise ConfigError(f"unknown key {key!r} in {where}", lineno, col, key)
        if (section, key) in seen:
            raise ConfigError(f"duplicate key {key!r}", lineno, col, key)
        if not value:
            raise ConfigError(f"missing value for {key!r}", lineno, col + len(key), key)
        vcol = line.index("=") + 2 + (len(line.split("=", 1)[1]) - len(line.split("=", 1)[1].lstrip()))
        try:
            parsed = SCHEMA[section][key](value)
        except ValueError:
            raise ConfigError(f"bad value for {key!r}", lineno, vcol, value) from None
        seen[(section, key)] = parsed
        cfg.positions[(section, key)] = (lineno, vcol)
        if section:
            getattr(cfg, section)[key] = parsed
        else:
            setattr(cfg, key, parsed)
    if command is not None:
        cfg.command = command
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    def fail(message, section, key, token=None):
        line, col = cfg.positions.get((section, key), (None, None))
        raise ConfigError(message, line, col, token)

    if cfg.command not in COMMANDS:
        fail(f"unknown command; expected one of {', '.join(COMMANDS)}", "", "command", cfg.command)
    if cfg.threads < 0:
        fail("threads must be >= 0", "", "threads")
    try:
        cfg.params()
    except ValueError as exc:
        msg = str(exc)
        key = msg.split()[0]
        fail(msg, "operator", key)
    if cfg.nonlinearity.get("kind", "allen_cahn") not in ("allen_cahn", "fisher_kpp"):
        fail("unknown nonlinearity", "nonlinearity", "kind", cfg.nonlinearity["kind"])
    if cfg.operator.get("cell_rule", "gauss") not in ("gauss", "midpoint"):
        fail("cell_rule must be gauss or midpoint", "operator", "cell_rule", cfg.operator["cell_rule"])
    from .verify import SUITES
    for name in cfg.verify.get("suites", ()):
        if name not in SUITES:
            fail(f"unknown suite {name!r}", "verify", "suites", name)
    if cfg.command == "eval" and not cfg.field:
        raise ConfigError("eval needs an input 'field' path")
