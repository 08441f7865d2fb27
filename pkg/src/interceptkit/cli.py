"""Command-line front end: single runs, batches, sweeps, schema dump.

Exit codes: 0 = ran and met its success condition, 2 = ran but the mission
failed (or a batch missed --min-success), 1 = tool/usage/schema error.
All data outputs go to files under --out; stdout carries a one-line summary
and stderr carries diagnostics (level set by INTERCEPT_LOG_LEVEL).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import harness, scenario

log = logging.getLogger("interceptkit")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are tool errors (exit 1)
        self.print_usage(sys.stderr)
        raise SystemExit(1)


def _setup_logging():
    level = os.environ.get("INTERCEPT_LOG_LEVEL", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        level = "error"
    logging.basicConfig(stream=sys.stderr, level=levels[level],
                        format="%(levelname)s %(name)s: %(message)s")


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def _load_scenario(path: str, seed: int | None) -> scenario.Scenario:
    s = scenario.load(path)
    if seed is not None:
        s = s.with_overrides(seed=seed)
    return s


def _cmd_run(args) -> int:
    s = _load_scenario(args.scenario, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result, rows = harness.run_trial(s, collect_rows=args.log_ticks)
    _dump_json(result.to_dict(), out / "result.json")
    if args.log_ticks:
        (out / "ticks.csv").write_text(harness.format_ticks_csv(rows),
                                       encoding="utf-8")
    print(f"run seed={s.seed}: success={result.success} "
          f"final_pos={result.final_pos_m:.3f}m "
          f"final_ang={abs(result.final_ang_rad):.3f}rad -> {out / 'result.json'}")
    return 0 if result.success else 2


def _cmd_batch(args) -> int:
    if args.trials < 1:
        log.error("--trials must be >= 1")
        return 1
    s = _load_scenario(args.scenario, None)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = harness.run_batch(s, args.trials, base_seed=args.base_seed,
                               parallel=args.parallel)
    _dump_json(report.to_dict(), out / "batch.json")
    for trial in report.trials:
        _dump_json(trial.to_dict(), out / f"trial_{trial.seed}.json")
    rate = report.n_success / report.n_trials
    print(f"batch: {report.n_success}/{report.n_trials} successful "
          f"-> {out / 'batch.json'}")
    return 0 if rate >= args.min_success else 2


def _parse_grid(mode: str, spec: str) -> dict:
    fields = {}
    for part in spec.split(";"):
        if not part:
            continue
        if "=" not in part:
            raise ValueError(f"bad grid component {part!r}")
        key, vals = part.split("=", 1)
        fields[key.strip()] = [float(v) for v in vals.split(",") if v != ""]
    if mode == "dropout":
        if set(fields) != {"durations"} or not fields["durations"]:
            raise ValueError("dropout grid needs durations=<comma list>")
    else:
        if set(fields) != {"rates", "pcorrupt"} or not fields["rates"] \
                or not fields["pcorrupt"]:
            raise ValueError("corruption grid needs rates=<list>;pcorrupt=<list>")
    return fields


def _cmd_sweep(args) -> int:
    if args.trials < 1:
        log.error("--trials must be >= 1")
        return 1
    try:
        grid = _parse_grid(args.mode, args.grid)
    except ValueError as e:
        log.error("grid spec: %s", e)
        return 1
    s = _load_scenario(args.scenario, None)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.mode == "dropout":
        rows = harness.dropout_sweep(s, grid["durations"], args.trials,
                                     parallel=args.parallel)
        cols = ["dropout_s", "prediction", "success_rate",
                "sk_pos_mean", "sk_pos_std", "sk_ang_mean", "sk_ang_std"]
    else:
        rows = harness.corruption_sweep(s, grid["rates"], grid["pcorrupt"],
                                        args.trials, parallel=args.parallel)
        cols = ["rate_hz", "p_corrupt", "prediction", "success_rate",
                "sk_pos_mean", "sk_pos_std", "sk_ang_mean", "sk_ang_std"]
    lines = [",".join(cols)]
    for r in rows:
        lines.append(",".join("%.9g" % r[c] for c in cols))
    (out / "sweep.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"sweep ({args.mode}): {len(rows)} rows -> {out / 'sweep.csv'}")
    return 0


def _cmd_schema(_args) -> int:
    print(scenario.schema_json())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="intercept-sim",
                description="Closed-loop target interception experiments")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one trial")
    r.add_argument("--scenario", required=True)
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--out", required=True)
    r.add_argument("--log-ticks", action="store_true")
    r.set_defaults(fn=_cmd_run)

    b = sub.add_parser("batch", help="run a seeded batch of trials")
    b.add_argument("--scenario", required=True)
    b.add_argument("--trials", type=int, required=True)
    b.add_argument("--base-seed", type=int, default=0)
    b.add_argument("--out", required=True)
    b.add_argument("--parallel", type=int, default=None)
    b.add_argument("--min-success", type=float, default=0.0)
    b.set_defaults(fn=_cmd_batch)

    w = sub.add_parser("sweep", help="dropout or corruption sweep")
    w.add_argument("--scenario", required=True)
    w.add_argument("--mode", choices=["dropout", "corruption"], required=True)
    w.add_argument("--grid", required=True)
    w.add_argument("--trials", type=int, required=True)
    w.add_argument("--out", required=True)
    w.add_argument("--parallel", type=int, default=None)
    w.set_defaults(fn=_cmd_sweep)

    c = sub.add_parser("schema", help="print the scenario schema with defaults")
    c.set_defaults(fn=_cmd_schema)
    return p


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.fn(args)
    except scenario.ScenarioError as e:
        log.error("scenario: %s", e)
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
