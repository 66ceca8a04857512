"""Command-line entry point: ``simulate``, ``verify``, ``sweep`` and ``report``.

Exit codes: 0 success, 1 failed verification, 2 configuration error,
3 solver failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_run_config, load_sweep_plan, sweep_plan_to_text
from .detector import detect_blowup, fit_decay_rate, needs_refinement
from .diagnostics import RESIDUAL_COLUMNS, identity_residuals
from .dynamics import Termination, refined, run_simulation
from .grid import GridTailError, TruncationWarning
from .sweep import Agreement, PhaseTable, aggregate_phase_table, run_sweep
from .theory import (
    ROW_CONDITIONS,
    Row,
    check_blowup_hypotheses,
    classify_regime,
    smallness_report,
)

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_IO = 4

PHASE_TABLE_NAME = "phase_table.csv"


class _Fail(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _clean(obj):
    """Replace non-finite floats by ``None`` so the JSON stays valid."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _dump_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _mkdir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise _Fail(EXIT_IO, f"cannot create output directory {path}: {exc.strerror or exc}") from None
    return path


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise _Fail(EXIT_IO, f"cannot write {path}: {exc.strerror or exc}") from None


def _load_config(args) -> RunConfig:
    if not args.config:
        raise _Fail(EXIT_CONFIG, "--config is required")
    cfg = load_run_config(args.config)
    if args.refine:
        grid, scheme = refined(cfg.grid, cfg.scheme, args.refine)
        cfg = cfg.with_values(grid__N=grid.N, scheme__dt0=scheme.dt0, scheme__dt_min=scheme.dt_min)
    return cfg


def _out_dir(args, cfg_out: str) -> Path:
    return Path(args.out if args.out else cfg_out)


def _say(args, *lines) -> None:
    if not args.quiet:
        for line in lines:
            print(line)


# -- simulate -------------------------------------------------------------------


def _residual_maxima(series, params):
    try:
        return identity_residuals(series, params).max_abs()
    except ValueError:
        return None


def simulate(cfg: RunConfig) -> tuple[dict, object]:
    """Run one configuration; return the JSON summary and the series."""
    params, grid, scheme = cfg.model, cfg.grid, cfg.scheme
    init = cfg.initial
    u0 = init.build(grid)
    try:
        cert = check_blowup_hypotheses(params, u0)
    except GridTailError as exc:
        raise ConfigError(f"initial data reaches the truncation point: {exc}") from None
    report = smallness_report(params, u0)
    regime = classify_regime(params)
    t_end, every = cfg["run.t_end"], cfg["run.sample_every"]
    series = run_simulation(u0, t_end, params, scheme, sample_every=every,
                            snapshot_every=cfg["run.snapshot_every"])
    fine = None
    if needs_refinement(series) and scheme.scheme != "OracleRK":
        fine_grid, fine_scheme = refined(grid, scheme)
        if math.isfinite(series.threshold):
            fine_scheme = replace(fine_scheme, blowup_threshold=series.threshold)
        fine = run_simulation(init.build(fine_grid), t_end, params, fine_scheme, sample_every=every)
    verdict = detect_blowup(series, cert, fine, tol=cfg["run.refinement_tol"])
    fit = None
    if params.a > 0 and series.termination is Termination.COMPLETED and regime.nominal_rate:
        try:
            fit = fit_decay_rate(series, cfg["run.fit_window"], regime.nominal_rate, regime.epsilon or None)
        except ValueError:
            fit = None
    summary = {
        "termination": series.termination.value,
        "message": series.message,
        "t_final": series.t_final,
        "steps": series.steps,
        "rejected_steps": series.rejected,
        "threshold": series.threshold,
        "refined_termination": fine.termination.value if fine else None,
        "regime": {
            "row": regime.row.value,
            "condition": ROW_CONDITIONS[regime.row],
            "blowup": regime.blowup_status,
            "global": regime.global_status,
            "rate_label": regime.rate_label,
            "nominal_rate": regime.nominal_rate,
            "epsilon": regime.epsilon,
        },
        "certificate": cert.to_dict(),
        "smallness": report.to_dict(),
        "verdict": verdict.to_dict(),
        "rate_fit": fit.to_dict() if fit else None,
        "residual_maxima": _residual_maxima(series, params),
    }
    return summary, series


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg["run.out"])
    summary, series = simulate(cfg)
    _mkdir(out)
    try:
        series.write_csv(out / "series.csv")
        if series.snapshots:
            series.write_snapshots(_mkdir(out / "snapshots"))
    except OSError as exc:
        raise _Fail(EXIT_IO, f"cannot write outputs to {out}: {exc.strerror or exc}") from None
    _write(out / "summary.json", _dump_json(summary))
    _write(out / "config.cfg", cfg.to_text())
    v = summary["verdict"]
    _say(
        args,
        f"termination: {summary['termination']} at t = {summary['t_final']:.6g}",
        f"row {summary['regime']['row']} ({summary['regime']['condition']}); "
        f"certificate met: {summary['certificate']['hypotheses_met']}",
        f"verdict: {v['status']}" + (f" at t = {v['t_detect']:.6g}" if v["detected"] else ""),
        f"outputs in {out}",
    )
    if series.termination is Termination.FAILURE:
        print(f"solver failure: {series.message}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


# -- verify ---------------------------------------------------------------------


def verify(cfg: RunConfig) -> tuple[bool, list[dict]]:
    """Identity-residual suite at two refinement levels.

    Each residual must either sit below ``verify.floor`` at both levels or
    shrink with observed order at least ``verify.min_order``; the coarse
    maximum must also stay below ``verify.ceiling``.
    """
    params, grid = cfg.model, cfg.grid
    scheme = replace(cfg.scheme, adapt=False)
    if scheme.scheme == "OracleRK":
        raise ConfigError("verify needs a time-stepping scheme, not the oracle")
    stride = cfg["verify.sample_stride"]
    tables = []
    for level in (0, 1):
        g, s = refined(grid, scheme, level) if level else (grid, scheme)
        series = run_simulation(cfg.initial.build(g), cfg["run.t_end"], params, s, sample_every=stride * s.dt0)
        if series.termination is Termination.FAILURE:
            raise _Fail(EXIT_SOLVER, f"solver failure during verification: {series.message}")
        tables.append(identity_residuals(series, params).max_abs())
    floor, ceiling, min_order = cfg["verify.floor"], cfg["verify.ceiling"], cfg["verify.min_order"]
    rows = []
    for name in RESIDUAL_COLUMNS:
        coarse, fine = tables[0][name], tables[1][name]
        at_floor = coarse <= floor and fine <= floor
        order = math.log2(coarse / fine) if coarse > 0 and fine > 0 else math.nan
        ok = coarse <= ceiling and (at_floor or (math.isfinite(order) and order >= min_order))
        rows.append({"residual": name, "coarse": coarse, "fine": fine, "order": order,
                     "at_floor": at_floor, "passed": ok})
    return all(r["passed"] for r in rows), rows


def cmd_verify(args) -> int:
    cfg = _load_config(args)
    ok, rows = verify(cfg)
    lines = [f"{'residual':<16} {'coarse':>11} {'fine':>11} {'order':>7}  result"]
    for r in rows:
        order = "floor" if r["at_floor"] else (f"{r['order']:.3f}" if math.isfinite(r["order"]) else "n/a")
        lines.append(f"{r['residual']:<16} {r['coarse']:>11.3e} {r['fine']:>11.3e} {order:>7}  "
                     f"{'PASS' if r['passed'] else 'FAIL'}")
    lines.append("verification " + ("passed" if ok else "FAILED"))
    _say(args, *lines)
    if args.out:
        out = _mkdir(Path(args.out))
        _write(out / "verify.json", _dump_json({"passed": ok, "residuals": rows}))
    return EXIT_OK if ok else EXIT_VERIFY_FAILED


# -- sweep and report -----------------------------------------------------------


def cmd_sweep(args) -> int:
    if not args.config:
        raise _Fail(EXIT_CONFIG, "--config is required")
    plan = load_sweep_plan(args.config)
    if args.refine:
        grid, scheme = refined(plan.grid, plan.scheme, args.refine)
        plan = replace(plan, N=grid.N, scheme=scheme)
    out = _mkdir(Path(args.out or "sweep_out"))
    results = run_sweep(plan)
    table = aggregate_phase_table(results)
    _write(out / PHASE_TABLE_NAME, table.to_csv())
    _write(out / "cells.json", _dump_json([r.to_dict() for r in results]))
    _write(out / "plan.cfg", sweep_plan_to_text(plan))
    failed = [r for r in results if r.error]
    _say(args, f"{len(results)} cells, {len(failed)} failed; phase table in {out / PHASE_TABLE_NAME}")
    for r in failed:
        print(f"cell {r.index}: {r.error}", file=sys.stderr)
    if failed and len(failed) == len(results):
        return EXIT_SOLVER
    return EXIT_OK


_TABLE_CLAIMS = {
    Row.R1: ("No", "Yes", "2a - eps"),
    Row.R2: ("No", "Yes", "a mu - eps"),
    Row.R3: ("Open", "small data", "2a"),
    Row.R4: ("Open", "small data", "2a"),
    Row.R5: ("Yes (certified data)", "small data", "2a"),
}


def render_report(table: PhaseTable) -> str:
    counts = table.counts()
    names = [a.value for a in Agreement]
    head = f"{'row':<4} {'condition':<24} {'blow-up':<21} {'global':<11} {'rate':<10} " + " ".join(
        f"{n:>12}" for n in names
    )
    lines = [head, "-" * len(head)]
    for row in Row:
        blow, glob, rate = _TABLE_CLAIMS[row]
        c = counts[row.value]
        lines.append(
            f"{row.value:<4} {ROW_CONDITIONS[row]:<24} {blow:<21} {glob:<11} {rate:<10} "
            + " ".join(f"{c[n]:>12}" for n in names)
        )
    lines.append("")
    lines.append("conjectured critical power r* = max{2, p - 2}:")
    for p in sorted({r["p"] for r in table.rows}):
        cells = [r for r in table.rows if r["p"] == p]
        marks = ", ".join(f"r={r['r']:g}:{r['conjecture_marker']}" for r in cells)
        lines.append(f"  p={p:g} (r*={max(2.0, p - 2.0):g}): {marks}")
    open_cells = sum(counts[r][Agreement.OPEN.value] for r in counts)
    if open_cells:
        lines.append("")
        lines.append(f"{open_cells} open cell(s): outcomes there are evidence only, not checks of a claim.")
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    source = args.results or args.out
    if not source:
        raise _Fail(EXIT_CONFIG, "report needs a results directory")
    path = Path(source) / PHASE_TABLE_NAME
    if not path.is_file():
        raise _Fail(EXIT_IO, f"no {PHASE_TABLE_NAME} in {source}")
    try:
        table = PhaseTable.read_csv(path)
    except (OSError, ValueError, KeyError) as exc:
        raise _Fail(EXIT_IO, f"cannot read {path}: {exc}") from None
    if not table.rows:
        raise _Fail(EXIT_IO, f"{path} has no cells")
    text = render_report(table)
    if not args.quiet:
        print(text, end="")
    if args.out and args.results:
        out = _mkdir(Path(args.out))
        _write(out / "report.txt", text)
    return EXIT_OK


# -- entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="configuration file")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--refine", metavar="K", type=int, default=0,
                        help="extra halving levels of dt and h")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")
    parser = argparse.ArgumentParser(
        prog="robin-nls",
        description="Damped NLS on the half-line with a nonlinear Robin boundary condition.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="run one configuration")
    sub.add_parser("verify", parents=[common], help="identity-residual convergence suite")
    sub.add_parser("sweep", parents=[common], help="parameter sweep to a phase table")
    rep = sub.add_parser("report", parents=[common], help="summarize a sweep against the phase table")
    rep.add_argument("results", nargs="?", help="sweep output directory")
    return parser


COMMANDS = {"simulate": cmd_simulate, "verify": cmd_verify, "sweep": cmd_sweep, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if args.refine < 0:
        print("error: --refine must be nonnegative", file=sys.stderr)
        return EXIT_CONFIG
    if args.quiet:
        warnings.simplefilter("ignore", TruncationWarning)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _Fail as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
