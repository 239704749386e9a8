"""Command line entry point: ``coach run | summarize | lap``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

log = logging.getLogger("racecoach")


def _cmd_run(args) -> int:
    from racecoach.harness.config import load_config
    from racecoach.harness.protocol import run_protocol

    cfg = load_config(args.config)
    if args.output:
        from dataclasses import replace
        cfg = replace(cfg, output=Path(args.output))
    started = time.perf_counter()

    def progress(run):
        done = sum(r.termination.value == "finished" for r in run.records)
        log.info("%s subject %d: %d/%d laps finished", run.group, run.subject, done, len(run.records))
        for msg in run.faults:
            log.warning("fault: %s", msg)

    summary, _ = run_protocol(cfg, progress=progress)
    log.info("session finished in %.1f s, %d rows -> %s", time.perf_counter() - started,
             cfg.expected_rows, Path(cfg.output) / "results.csv")
    print(json.dumps(summary.to_dict(), indent=2))
    return 0


def _cmd_summarize(args) -> int:
    from racecoach.harness.summary import summarize

    summary = summarize(args.results, args.out, args.paths)
    print(json.dumps(summary.to_dict(), indent=2))
    return 0


def _cmd_lap(args) -> int:
    from racecoach.autonomy import OcpConfig
    from racecoach.harness.config import read_toml
    from racecoach.harness.protocol import calibrate
    from racecoach.harness.trial import Stack
    from racecoach.track import default_track, load_track
    from racecoach.vehicle import VehicleParams, load_params

    if not args.autonomy_only:
        log.error("only --autonomy-only laps are supported from the command line")
        return 2
    track = load_track(args.track) if args.track else default_track()
    vehicle = load_params(args.vehicle) if args.vehicle else VehicleParams()
    mpc = OcpConfig.from_mapping(read_toml(args.mpc).get("mpc", {})) if args.mpc else OcpConfig()
    stack = Stack(track, vehicle, mpc)
    started = time.perf_counter()
    cal, result = calibrate(stack)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(cal.to_json(), encoding="utf-8")
    print(json.dumps({
        "termination": result.termination.value, "T_mpc": cal.T_mpc, "A_mpc": cal.A_mpc,
        "tracking_rms": result.tracking_rms, "max_speed": result.max_speed,
        "replans": result.replans, "wall_time": time.perf_counter() - started,
        "calibration": str(out),
    }, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coach", description="Synthetic racing-coach protocol runner")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a training protocol session")
    p.add_argument("--config", required=True, help="experiment TOML")
    p.add_argument("--output", help="override the output directory")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("summarize", help="metrics and plot tables from results.csv")
    p.add_argument("results")
    p.add_argument("--out", default="plots")
    p.add_argument("--paths", help="paths.csv (default: next to results)")
    p.set_defaults(func=_cmd_summarize)

    p = sub.add_parser("lap", help="autonomy-only reference lap")
    p.add_argument("--autonomy-only", action="store_true")
    p.add_argument("--track")
    p.add_argument("--vehicle")
    p.add_argument("--mpc", help="TOML with an [mpc] section")
    p.add_argument("--out", default="calibration.json")
    p.set_defaults(func=_cmd_lap)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
