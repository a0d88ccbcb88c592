"""Command-line entry point: ``evqmc <subcommand> --config FILE [--out DIR]``.

Every subcommand writes ``<name>.csv`` (columns documented in SCHEMA.md)
and ``<name>.manifest`` (JSON: timestamp, config echo, seed, constants
report, checks).  The exit status is 1 iff a PASS/FAIL check failed and 2
for configuration or I/O errors.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import math
import sys
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__
from .coefficients import make_expansion
from .config import ConfigError, ExperimentConfig, parse_config, serialize
from .fem import FemSpace, build_mesh
from .harness import (
    ConstantsReport,
    StudyTable,
    constants_report,
    convergence_study,
    default_orders,
    derivative_check,
    functional_weights,
    gap_scan,
    qmc_weights,
    truncation_study,
)
from .lattice import cbc_construct, write_generating_vector

SUBCOMMANDS = ("constants", "gap-scan", "derivative-check", "truncation", "convergence", "functional", "cbc")
GENERATING_VECTOR_FILE = "cbc.gv"


def format_cell(v) -> str:
    """Shortest round-trip decimal for floats; integers and strings verbatim."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_csv(path: Path, columns: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([format_cell(v) for v in r])


def _json_safe(v):
    if isinstance(v, np.generic):
        v = v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    return v


class Run:
    """Problem objects shared by the subcommands of one invocation."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.mesh = build_mesh(cfg.domain_kind, cfg.h)
        self.exp = make_expansion(cfg.family, cfg.s_max, cfg.theta, cfg.scale, p=cfg.p)
        self.space = FemSpace.from_expansion(self.mesh, self.exp)
        self._consts: Optional[ConstantsReport] = None

    @property
    def consts(self) -> ConstantsReport:
        if self._consts is None:
            c = self.cfg
            self._consts = constants_report(self.exp, self.space, c.gap_samples, c.seed, c.tol)
        return self._consts


# ---------------------------------------------------------------- subcommands
# each returns (columns, rows, checks, extra manifest fields)


def _constants(run: Run):
    rows = list(run.consts.items())
    return ("name", "value", "kind"), rows, {}, {}


def _gap_scan(run: Run):
    c = run.cfg
    chi = (run.consts.chi1_h, run.consts.chi2_h)
    t = gap_scan(run.exp, run.space, c.gap_samples, c.seed, c.tol, chi)
    return t.columns, t.rows, t.checks, {"summary": t.summary}


def _derivative(run: Run):
    c = run.cfg
    t = derivative_check(run.exp, run.space, default_orders(c.fd_first, c.fd_second), c.fd_step, run.consts, c.tol)
    return t.columns, t.rows, t.checks, {}


def _slope(t: StudyTable) -> float:
    return float(t.slope) if t.slope is not None else math.nan


def _truncation(run: Run):
    c = run.cfg
    t = truncation_study(run.exp, run.space, c.s_list, c.N_ref, c.R, run.consts, c.seed, c.tol,
                         lambda_w=c.lambda_w)
    rows = [r + (_slope(t),) for r in t.rows]
    return t.columns + ("slope",), rows, t.checks, {"summary": t.summary, "slope_ci": t.slope_ci}


def _convergence(run: Run):
    c = run.cfg
    t = convergence_study(run.exp, run.space, c.s, c.N_list, c.R, run.consts, c.seed, c.tol,
                          c.mc_baseline, lambda_w=c.lambda_w)
    mc = float(t.summary.get("mc_slope", math.nan))
    rows = [r + (_slope(t), mc) for r in t.rows]
    return t.columns + ("qmc_slope", "mc_slope"), rows, t.checks, {"summary": t.summary}


FUNCTIONAL_COLUMNS = ("study", "control", "estimate", "error", "stderr", "mc_error", "bound", "slope")


def _functional(run: Run):
    c = run.cfg
    g = functional_weights(run.space, c.functional)
    if g is None:
        raise ConfigError("the functional subcommand needs functional = mean or left-half-indicator")
    tr = truncation_study(run.exp, run.space, c.s_list, c.N_ref, c.R, run.consts, c.seed, c.tol, g=g,
                          lambda_w=c.lambda_w)
    cv = convergence_study(run.exp, run.space, c.s, c.N_list, c.R, run.consts, c.seed, c.tol, c.mc_baseline,
                           g=g, lambda_w=c.lambda_w)
    rows = []
    for r in tr.rows:
        d = dict(zip(tr.columns, r))
        rows.append(("truncation", d["s"], d["estimate"], d["error"], d["stderr"], math.nan, d["bound"], _slope(tr)))
    for r in cv.rows:
        d = dict(zip(cv.columns, r))
        rows.append(("convergence", d["N"], d["qmc_mean"], d["qmc_rms"], d["qmc_stderr"], d["mc_rms"],
                     d["bound_phi"], _slope(cv)))
    checks = {f"truncation_{k}": v for k, v in tr.checks.items()}
    checks.update({f"convergence_{k}": v for k, v in cv.checks.items()})
    return FUNCTIONAL_COLUMNS, rows, checks, {"summary": {"truncation": tr.summary, "convergence": cv.summary}}


def _cbc(run: Run, out: Path):
    c = run.cfg
    rule = cbc_construct(c.s, c.cbc_N, qmc_weights(run.exp, c.s, run.consts, c.lambda_w))
    gv = out / GENERATING_VECTOR_FILE
    with open(gv, "w", encoding="utf-8") as fh:
        write_generating_vector(rule, fh)
    rows = [(j + 1, int(rule.z[j]), float(rule.weights.gamma[j]), float(rule.partial_wce[j])) for j in range(rule.s)]
    return ("j", "z", "gamma", "partial_wce"), rows, {}, {"generating_vector": str(gv), "N": rule.N,
                                                          "lambda_w": rule.weights.lambda_w}


_HANDLERS: dict[str, Callable] = {
    "constants": _constants,
    "gap-scan": _gap_scan,
    "derivative-check": _derivative,
    "truncation": _truncation,
    "convergence": _convergence,
    "functional": _functional,
}


def run_subcommand(name: str, cfg: ExperimentConfig, out: Path | str = ".") -> int:
    """Run one subcommand, write its CSV and manifest into ``out``; return the exit status."""
    if name not in SUBCOMMANDS:
        raise ValueError(f"unknown subcommand {name!r}; expected one of {', '.join(SUBCOMMANDS)}")
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror}") from exc
    run = Run(cfg)
    if name == "cbc":
        columns, rows, checks, extra = _cbc(run, out)
    else:
        columns, rows, checks, extra = _HANDLERS[name](run)
    csv_path = out / f"{name}.csv"
    write_csv(csv_path, columns, rows)
    manifest = {
        "subcommand": name,
        "version": __version__,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "seed": cfg.seed,
        "config": serialize(cfg),
        "constants": {k: v for k, v, _ in run.consts.items()},
        "checks": checks,
        "passed": all(checks.values()),
        **extra,
    }
    with open(out / f"{name}.manifest", "w", encoding="utf-8") as fh:
        json.dump(_json_safe(manifest), fh, indent=2)
        fh.write("\n")
    return 0 if all(checks.values()) else 1


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = argparse.ArgumentParser(prog="evqmc", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="experiment configuration file")
    ap.add_argument("--out", default=".", help="output directory (default: current directory)")
    args = ap.parse_args(argv)
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"evqmc: cannot read {args.config}: {exc.strerror}", file=sys.stderr)
        return 2
    try:
        cfg = parse_config(text)
        status = run_subcommand(args.subcommand, cfg, args.out)
    except ConfigError as exc:
        print(f"evqmc: {args.config}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"evqmc: {exc}", file=sys.stderr)
        return 2
    print(f"{args.subcommand}: {'PASS' if status == 0 else 'FAIL'} ({Path(args.out) / (args.subcommand + '.csv')})")
    return status


if __name__ == "__main__":
    sys.exit(main())
