"""Command line: ``mra gen``, ``mra run`` and ``mra report``."""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
import warnings
from pathlib import Path

from . import benchmarks, report
from .conic import SolverError
from .core import dump_json
from .harness import ConfigError, ExperimentConfig, feasibility_threshold, load_instance_spec, run_experiment

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3

FAMILIES = ("ra", "assign", "mcf", "ship")

log = logging.getLogger("mra")


def _rule_slug(rule: str) -> str:
    return re.sub(r"[^0-9a-z]+", "_", rule.lower()).strip("_")


def cmd_gen(args) -> int:
    try:
        inst = benchmarks.generate(args.family, args.seed)
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    if not args.no_reference:
        try:
            inst.ensure_reference()
        except SolverError as err:
            print(f"error: {err}", file=sys.stderr)
            return EXIT_SOLVER
    inst.save(args.out)
    print(f"wrote {args.out}: primal dim {inst.primal_dim}, dual dim {inst.dual_dim}, {len(inst.agents)} agents")
    return EXIT_OK


def _load_config(path: Path) -> ExperimentConfig:
    try:
        raw = json.loads(path.read_text())
    except OSError as err:
        raise ConfigError(f"cannot read config: {err}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from None
    return ExperimentConfig.from_dict(raw)


def cmd_run(args) -> int:
    cfg_path = Path(args.config)
    try:
        cfg = _load_config(cfg_path)
        if args.sweep_steps:
            cfg = cfg.replace(sweep_steps=True, method="subgradient")
        inst = load_instance_spec(cfg.instance, base=cfg_path.parent)
    except (ConfigError, ValueError, OSError, KeyError, TypeError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(cfg.output.get("dir", "."))
    if not out_dir.is_absolute():
        out_dir = cfg_path.parent / out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / cfg.output.get("csv", "run.csv")
    try:
        threshold = feasibility_threshold(cfg, inst.coupling)
        meta = {"method": cfg.method, "instance": json.dumps(cfg.instance, sort_keys=True),
                "threshold": repr(threshold)}
        if cfg.sweep_steps:
            return _run_sweep(cfg, inst, csv_path, meta)
        meta["step_rule"] = cfg.step_rule if cfg.method == "subgradient" else "-"
        writer = report.CsvLogWriter(csv_path, meta)
        res = run_experiment(cfg, inst, on_record=writer)
    except SolverError as err:
        print(f"solver failure: {err} (partial log in {csv_path})", file=sys.stderr)
        return EXIT_SOLVER
    print(f"{len(res.records)} iterations, stop: {res.stop_reason}; log {csv_path}")
    print(report.summary_text(res.records, threshold), end="")
    return EXIT_OK


def _run_sweep(cfg, inst, csv_path: Path, meta: dict) -> int:
    res = run_experiment(cfg, inst)
    rows = {}
    for rule, info in res.sweep.items():
        path = csv_path.with_name(f"{csv_path.stem}_{_rule_slug(rule)}{csv_path.suffix}")
        report.write_csv(info["result"].records, path, {**meta, "step_rule": rule})
        rows[rule] = {"final_rp": info["final_rp"], "log": path.name}
    report.write_csv(res.records, csv_path, {**meta, "step_rule": res.rule})
    dump_json({"chosen_rule": res.rule, "rules": rows}, csv_path.with_name(csv_path.stem + "_sweep.json"))
    print(f"step-rule sweep: chose {res.rule}; log {csv_path}")
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        records, meta = report.read_csv(args.log)
    except (OSError, report.LogFormatError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    if not records:
        print("error: log has no iterations", file=sys.stderr)
        return EXIT_CONFIG
    threshold = float(meta.get("threshold", 1e-6))
    out = report.report(records, args.out, threshold, title=meta.get("instance", ""))
    print(out["summary"], end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mra", description="Dual decomposition with multiple-response recovery.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen", help="generate a benchmark instance")
    g.add_argument("--family", choices=FAMILIES, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--no-reference", action="store_true", help="skip the centralized reference solve")
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="run an experiment from a JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--sweep-steps", action="store_true", help="run all subgradient step rules")
    r.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="plot and summarize a run log")
    rep.add_argument("--log", required=True)
    rep.add_argument("--out", required=True)
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
