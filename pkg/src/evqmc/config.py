"""Experiment configuration files.

The format is UTF-8 text with one ``key = value`` per line; ``#`` starts a
comment.  Lists are comma separated, booleans are ``true``/``false``, and
real numbers may be written as fractions such as ``1/64``.  Unknown keys,
duplicate keys and invalid values are rejected with the offending line
number.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .coefficients import FAMILIES
from .fem import DOMAIN_KINDS
from .lattice import is_prime

FUNCTIONALS = ("none", "mean", "left-half-indicator")


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass(frozen=True)
class ExperimentConfig:
    domain_kind: str
    h: float
    family: str
    s_max: int
    theta: float
    scale: float
    p: Optional[float] = None
    s_list: tuple[int, ...] = ()
    N_list: tuple[int, ...] = (251, 503, 1009, 2017, 4001)
    R: int = 16
    seed: int = 0
    tol: float = 1e-10
    fd_step: float = 1e-3
    functional: str = "none"
    # keys beyond the core set
    s: int = 16
    N: Optional[int] = None
    N_ref: int = 2017
    gap_samples: int = 1000
    mc_baseline: bool = True
    fd_first: int = 8
    fd_second: int = 4
    lambda_w: Optional[float] = None

    @property
    def cbc_N(self) -> int:
        return self.N if self.N is not None else self.N_list[0]


REQUIRED = ("domain_kind", "h", "family", "s_max", "theta", "scale")
_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
_INT = {"s_max", "R", "seed", "s", "N", "N_ref", "gap_samples", "fd_first", "fd_second"}
_FLOAT = {"h", "theta", "scale", "p", "tol", "fd_step", "lambda_w"}
_INT_LIST = {"s_list", "N_list"}
_BOOL = {"mc_baseline"}


def _real(text: str) -> float:
    text = text.strip()
    if "/" in text:
        return float(Fraction(text))
    return float(text)


def _integer(text: str) -> int:
    return int(text.strip())


def _convert(key: str, raw: str):
    if raw.lower() == "none" and key in {"p", "N", "lambda_w"}:
        return None
    if key in _INT:
        return _integer(raw)
    if key in _FLOAT:
        return _real(raw)
    if key in _INT_LIST:
        items = [x for x in (t.strip() for t in raw.split(",")) if x]
        return tuple(_integer(x) for x in items)
    if key in _BOOL:
        low = raw.lower()
        if low not in ("true", "false"):
            raise ValueError(f"expected true or false, got {raw!r}")
        return low == "true"
    return raw


def _default_s_list(s_max: int) -> tuple[int, ...]:
    out, s = [], 2
    while 2 * s <= s_max:
        out.append(s)
        s *= 2
    return tuple(out)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate configuration text."""
    values: dict = {}
    lines: dict[str, int] = {}
    for no, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"expected 'key = value', got {body!r}", no)
        key, raw = (t.strip() for t in body.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"unknown key {key!r}", no)
        if key in values:
            raise ConfigError(f"duplicate key {key!r} (first set on line {lines[key]})", no)
        if not raw:
            raise ConfigError(f"missing value for {key!r}", no)
        try:
            values[key] = _convert(key, raw)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"cannot parse {key} = {raw!r}: {exc}", no) from None
        lines[key] = no
    for key in REQUIRED:
        if key not in values:
            raise ConfigError(f"missing required key {key!r}")
    if "s_list" not in values and isinstance(values.get("s_max"), int):
        values["s_list"] = _default_s_list(values["s_max"])
    if "s" not in values and isinstance(values.get("s_max"), int):
        values["s"] = min(16, values["s_max"])
    cfg = ExperimentConfig(**values)
    validate_config(cfg, lines)
    return cfg


def validate_config(cfg: ExperimentConfig, lines: Optional[dict[str, int]] = None) -> None:
    """Check every field against the preconditions of the operations it feeds."""
    lines = lines or {}

    def fail(key, msg):
        raise ConfigError(msg, lines.get(key))

    if cfg.domain_kind not in DOMAIN_KINDS:
        fail("domain_kind", f"domain_kind must be one of {', '.join(DOMAIN_KINDS)}, got {cfg.domain_kind!r}")
    n = round(1.0 / cfg.h) if cfg.h > 0 else 0
    if n < 2 or abs(n * cfg.h - 1.0) > 1e-12:
        fail("h", f"h = {cfg.h!r} is not of the form 1/n with integer n >= 2")
    if cfg.family not in FAMILIES:
        fail("family", f"family must be one of {', '.join(FAMILIES)}, got {cfg.family!r}")
    if cfg.s_max < 1:
        fail("s_max", f"s_max must be >= 1, got {cfg.s_max}")
    if not cfg.theta > 1:
        fail("theta", f"theta must exceed 1, got {cfg.theta!r}")
    if not cfg.scale > 0:
        fail("scale", f"scale must be positive, got {cfg.scale!r}")
    if cfg.p is not None and not 0 < cfg.p <= 1:
        fail("p", f"p must lie in (0, 1], got {cfg.p!r}")
    if cfg.lambda_w is not None and not 0.5 < cfg.lambda_w <= 1:
        fail("lambda_w", f"lambda_w must lie in (1/2, 1], got {cfg.lambda_w!r}")
    if any(v < 1 for v in cfg.s_list) or any(b <= a for a, b in zip(cfg.s_list, cfg.s_list[1:])):
        fail("s_list", f"s_list must be increasing positive integers, got {list(cfg.s_list)}")
    if cfg.s_list and 2 * cfg.s_list[-1] > cfg.s_max:
        fail("s_list", f"2 * max(s_list) = {2 * cfg.s_list[-1]} exceeds s_max = {cfg.s_max}")
    if not cfg.N_list:
        fail("N_list", "N_list must not be empty")
    for v in cfg.N_list:
        if not is_prime(v):
            fail("N_list", f"{v} is not prime")
    if any(b <= a for a, b in zip(cfg.N_list, cfg.N_list[1:])):
        fail("N_list", f"N_list must be increasing, got {list(cfg.N_list)}")
    for key in ("N", "N_ref"):
        v = getattr(cfg, key)
        if v is not None and not is_prime(v):
            fail(key, f"{v} is not prime")
    if not 1 <= cfg.s <= cfg.s_max:
        fail("s", f"s must lie in [1, s_max = {cfg.s_max}], got {cfg.s}")
    if cfg.R < 8:
        fail("R", f"R must be >= 8, got {cfg.R}")
    if not cfg.tol > 0:
        fail("tol", f"tol must be positive, got {cfg.tol!r}")
    if not cfg.fd_step > 0:
        fail("fd_step", f"fd_step must be positive, got {cfg.fd_step!r}")
    if cfg.functional not in FUNCTIONALS:
        fail("functional", f"functional must be one of {', '.join(FUNCTIONALS)}, got {cfg.functional!r}")
    if cfg.gap_samples < 1:
        fail("gap_samples", f"gap_samples must be >= 1, got {cfg.gap_samples}")
    for key in ("fd_first", "fd_second"):
        if not 0 <= getattr(cfg, key) <= cfg.s_max:
            fail(key, f"{key} must lie in [0, s_max = {cfg.s_max}], got {getattr(cfg, key)}")
    if cfg.seed < 0 or cfg.seed >= 2**64:
        fail("seed", f"seed must be a 64-bit unsigned integer, got {cfg.seed}")


def _format(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialize(cfg: ExperimentConfig) -> str:
    """Config text that parses back to an equal config."""
    return "".join(f"{f.name} = {_format(getattr(cfg, f.name))}\n" for f in dataclasses.fields(cfg))
