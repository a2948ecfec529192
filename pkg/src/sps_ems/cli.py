import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from sps_ems.config.loader import AppConfig, build_run_spec, config_document, load_config, resolved_parameter_table
from sps_ems.errors import ConfigError, SimulationAbortedError, SpsEmsError
from sps_ems.pipeline.compare import compare, format_table, run_metrics, run_scenarios
from sps_ems.pipeline.orchestrator import run
from sps_ems.reporting.export import export_figures, read_csv_log, write_comparison, write_log_csv
from sps_ems.utils.reporting import save_markdown_report
from sps_ems.validation.constraints import certify_log

DEFAULT_SCENARIOS = ["scenario-1", "scenario-2", "scenario-3"]


def _common(ap: argparse.ArgumentParser) -> None:
    ap.add_argument("--config", default=None, help="JSON config (default: $SPS_EMS_CONFIG, then the packaged default)")
    ap.add_argument("--out", default="results", help="output directory")
    ap.add_argument("--quiet", action="store_true", help="warnings and errors only")
    ap.add_argument("--verbose", action="store_true", help="debug logging")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sps-ems", description="MPC energy management for a shipboard DC power system")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one scenario")
    _common(p)
    p.add_argument("--scenario", default=None)
    p.add_argument("--mode", choices=["device", "dispatch"], default=None)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("compare", help="simulate and compare scenarios, export figures")
    _common(p)
    p.add_argument("--scenario", action="append", default=None, help="repeatable; default: all three")
    p.add_argument("--mode", choices=["device", "dispatch"], default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default: run.jobs)")

    p = sub.add_parser("validate-config", help="check a config and print the resolved parameters")
    _common(p)
    p.add_argument("--dump", action="store_true", help="print the resolved JSON document instead")

    p = sub.add_parser("export-figures", help="write figure data files from CSV logs in --out")
    _common(p)
    p.add_argument("--scenario", action="append", default=None, help="repeatable; default: all three")
    return ap


def _setup_logging(args: argparse.Namespace) -> None:
    level = logging.WARNING if args.quiet else (logging.DEBUG if args.verbose else logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", force=True)


def _print_run(log, cfg: AppConfig) -> None:
    m = run_metrics(log)
    cert = certify_log(log, cfg.system, cfg.mpc.ts)
    print(f"\n==== {log.scenario.upper()} ({log.mode}) ====")
    print("Final Q_L [Ah]:", f"{m.final_q_loss:.6e}")
    print("Final loss %:", f"{m.final_loss_pct:.6e}", " delta_Q %:", f"{m.final_delta_q_pct:.8f}")
    print("Ah-throughput [A*s]:", f"{m.ah_throughput:.6g}")
    print("Max |soc - q0|:", f"{m.max_soc_deviation:.6f}")
    print("Max PGM step [W]:", f"{m.max_pgm_step:.6g}", " ramp-saturated steps:", m.ramp_saturated_steps)
    print("Relaxed steps:", m.relaxed_steps)
    print("Certified solves:", f"{cert['n_ok']}/{cert['n_certified']}", " plant SoC ok:", cert["plant_soc_ok"])
    for ex in cert["failure_examples"]:
        print("  violation:", ex)


def cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    spec = build_run_spec(cfg, scenario=args.scenario, mode=args.mode, seed=args.seed)
    try:
        log = run(spec)
    except SimulationAbortedError as e:
        if e.log is not None:
            paths = write_log_csv(e.log, args.out)
            print("Partial log:", paths[0])
        raise
    paths = write_log_csv(log, args.out)
    _print_run(log, cfg)
    print("\nWrote:", ", ".join(paths))
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    spec = build_run_spec(cfg, mode=args.mode, seed=args.seed)
    names = args.scenario or DEFAULT_SCENARIOS
    jobs = args.jobs or cfg.run.jobs

    logs = run_scenarios(spec, names, jobs=jobs)
    report = compare(logs)

    written: List[str] = []
    for log in logs:
        written += write_log_csv(log, args.out)
    written.append(write_comparison(report, args.out))
    written.append(save_markdown_report(report, args.out))
    written += export_figures(logs, args.out)

    for log in logs:
        _print_run(log, cfg)
    print("\n==== COMPARISON ====\n")
    print(format_table(report))
    if report.verdicts:
        print("\n==== VERDICTS ====")
        for v in report.verdicts:
            print(f"[{v.status}] {v.claim}: {v.detail}")
    print(f"\nWrote {len(written)} files to {os.path.abspath(args.out)}")
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    if args.dump:
        print(json.dumps(config_document(cfg), indent=2, sort_keys=True))
        return 0
    rows = resolved_parameter_table(cfg)
    width = max(len(name) for name, _, _ in rows)
    print("==== RESOLVED PARAMETERS (SI) ====")
    for name, value, unit in rows:
        print(f"{name:<{width}}  {value!s:<24} {unit}")
    print("\nConfig OK")
    return 0


def cmd_export(args: argparse.Namespace) -> int:
    names = args.scenario or DEFAULT_SCENARIOS
    logs = [read_csv_log(args.out, name) for name in names]
    paths = export_figures(logs, args.out)
    print("Wrote:", ", ".join(paths))
    return 0


COMMANDS = {
    "run": cmd_run,
    "compare": cmd_compare,
    "validate-config": cmd_validate,
    "export-figures": cmd_export,
}


def main(argv: Optional[List[str]] = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    _setup_logging(args)

    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print("CONFIG ERROR:", e, file=sys.stderr)
        return 2
    except SpsEmsError as e:
        print("ERROR:", e, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
