"""Command-line entry point.

Subcommands
    run        simulate + register + fuse one scenario, export report
    compare    run several methods over a seed list, export summary table
    build-map  build and save the binary map feature database
    dump       write the raw simulation state (world, odometry) as JSON

Scenario selection is identical everywhere: start from --preset (or the
built-in default), overlay --config YAML, then apply --seed / --method
flags. Failures print one JSON error record to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import yaml

from .harness import (
    METHODS,
    ScenarioConfig,
    build_map_for_config,
    compare_methods,
    dump_scenario,
    export_comparison,
    export_report,
    preset,
    preset_names,
    run_scenario,
)
from .mapdb import save_db

__all__ = ["main", "build_parser"]


def _add_scenario_args(p: argparse.ArgumentParser, with_method: bool = True) -> None:
    p.add_argument("--preset", choices=preset_names(), help="named base scenario")
    p.add_argument("--config", help="YAML file overlaying the base scenario")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    if with_method:
        p.add_argument("--method", choices=METHODS, help="override the estimation method")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geofuse", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario and export its report")
    _add_scenario_args(p_run)
    p_run.add_argument("--out", default="report.json", help="report path (default report.json)")
    p_run.add_argument("--format", choices=("json", "csv"), default=None,
                       help="report format (default inferred from --out extension)")
    p_run.add_argument("--no-plots", action="store_true", help="skip figure rendering")
    p_run.add_argument("--timings", action="store_true",
                       help="include wall-clock timings (breaks byte determinism)")

    p_cmp = sub.add_parser("compare", help="compare methods over a seed list")
    _add_scenario_args(p_cmp, with_method=False)
    p_cmp.add_argument("--methods", default=",".join(METHODS),
                       help="comma-separated method list (default all)")
    p_cmp.add_argument("--seeds", default="0", help="comma-separated seed list")
    p_cmp.add_argument("--out", default="compare", help="output stem for .json/.csv/.png")
    p_cmp.add_argument("--no-plots", action="store_true", help="skip figure rendering")

    p_map = sub.add_parser("build-map", help="build and save the map feature database")
    _add_scenario_args(p_map, with_method=False)
    p_map.add_argument("--out", default="map.gfdb", help="database path (default map.gfdb)")

    p_dump = sub.add_parser("dump", help="dump raw simulation state as JSON")
    _add_scenario_args(p_dump, with_method=False)
    p_dump.add_argument("--out", default="scenario.json", help="dump path (default scenario.json)")

    return parser


def _load_scenario(args) -> ScenarioConfig:
    cfg = preset(args.preset) if args.preset else ScenarioConfig()
    if args.config:
        with open(args.config) as fh:
            overlay = yaml.safe_load(fh) or {}
        if not isinstance(overlay, dict):
            raise ValueError(f"config file {args.config!r} must hold a mapping")
        if "preset" in overlay:
            if args.preset:
                raise ValueError("preset given both on the command line and in the config file")
            cfg = ScenarioConfig.from_dict(overlay)
        else:
            cfg = ScenarioConfig.from_dict(_overlay(cfg, overlay))
    if args.seed is not None:
        cfg = ScenarioConfig.from_dict(_overlay(cfg, {"seed": args.seed}))
    if getattr(args, "method", None):
        cfg = ScenarioConfig.from_dict(_overlay(cfg, {"method": args.method}))
    return cfg


def _overlay(cfg: ScenarioConfig, overlay: dict) -> dict:
    base = cfg.to_dict()

    def merge(a: dict, b: dict) -> dict:
        out = dict(a)
        for k, v in b.items():
            out[k] = merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
        return out

    return merge(base, overlay)


def _cmd_run(args) -> int:
    cfg = _load_scenario(args)
    fmt = args.format
    if fmt is None:
        fmt = "csv" if str(args.out).endswith(".csv") else "json"
    report = run_scenario(cfg)
    export_report(report, args.out, fmt=fmt, include_timings=args.timings)
    written = [str(args.out)]
    if not args.no_plots:
        from .figures import render_report_figures

        stem = os.path.splitext(str(args.out))[0]
        written += render_report_figures(report, stem)
    summary = {
        "out": written,
        "method": report.method,
        "seed": report.seed,
        "keyframes": report.total_keyframes,
        "match_rate": report.match_rate,
        "registration_rmse": report.registration_rmse,
        "fused_rmse": report.fused_rmse,
        "vio_rmse": report.vio_rmse,
    }
    print(json.dumps(summary, sort_keys=True))
    return 0


def _cmd_compare(args) -> int:
    cfg = _load_scenario(args)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    result = compare_methods(cfg, methods, seeds)
    written = export_comparison(result, args.out)
    if not args.no_plots:
        from .figures import render_comparison_figure

        fig_path = str(args.out) + ".png"
        render_comparison_figure(result, fig_path)
        written.append(fig_path)
    print(json.dumps({"out": written, "rows": result.rows}, sort_keys=True))
    return 0


def _cmd_build_map(args) -> int:
    cfg = _load_scenario(args)
    db = build_map_for_config(cfg)
    save_db(db, args.out)
    print(json.dumps({"out": str(args.out), "entries": len(db), "stride_px": db.stride_px},
                     sort_keys=True))
    return 0


def _cmd_dump(args) -> int:
    cfg = _load_scenario(args)
    data = dump_scenario(cfg)
    with open(args.out, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps({"out": str(args.out), "keyframes": len(data["keyframes"])}, sort_keys=True))
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "compare": _cmd_compare,
    "build-map": _cmd_build_map,
    "dump": _cmd_dump,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:  # one machine-readable record per failure
        record = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
