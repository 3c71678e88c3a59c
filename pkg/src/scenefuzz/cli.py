"""Command-line entry points: ``fuzz``, ``replay``, ``report`` and ``seeds``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .campaign import (
    FITNESS_ALIASES,
    CampaignError,
    ConfigError,
    TraceParseError,
    default_out_root,
    load_config,
    load_trace,
    run_campaign,
    trace_reports,
    write_report,
)
from .frames import Sensor
from .matching import DangerLevel, danger_label, fmt_metric, precision, recall
from .mutation import initial_seeds
from .outcome import classify
from .scenario import NOMINAL_FOOTPRINT, rect_gap, save_scenario

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_CAMPAIGN = 4

log = logging.getLogger("scenefuzz")


def cmd_fuzz(args: argparse.Namespace) -> int:
    try:
        cfg = load_config(Path(args.config))
        overrides = {}
        if args.rounds is not None:
            overrides["maxRounds"] = args.rounds
        if args.seed is not None:
            overrides["masterSeed"] = args.seed
        if args.fitness is not None:
            overrides["fitness"] = args.fitness
        if args.duration is not None:
            overrides["duration"] = args.duration
        cfg = replace(cfg, **overrides)
        if args.out:
            out = Path(args.out)
        elif cfg.out:
            out = cfg.resolve(cfg.out)
        else:
            out = default_out_root() / Path(args.config).stem
        manifest = run_campaign(cfg, out, force=args.force)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # noqa: BLE001 - any other failure is a campaign failure
        log.exception("campaign failed")
        print(f"campaign error: {exc}", file=sys.stderr)
        return EXIT_CAMPAIGN
    c = manifest["counts"]
    print(f"{out}: {c['roundsRun']} rounds, {c['accepted']} accepted, "
          f"{c['rejected']} rejected, {c['error']} errors")
    return EXIT_OK


def _parse_range(text: Optional[str]) -> tuple[int, Optional[int]]:
    if not text:
        return 0, None
    start, _, stop = text.partition(":")
    return int(start or 0), (int(stop) if stop else None)


def cmd_replay(args: argparse.Namespace) -> int:
    try:
        trace = load_trace(Path(args.trace).read_bytes())
        start, stop = _parse_range(args.frames)
    except (TraceParseError, ValueError) as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO

    sensor = Sensor(args.sensor)
    reports = trace_reports(trace, sensor)
    print("frame\ttime\tgt\tdet\tprecision\trecall\tdanger\tcaution")
    for report, gt, ego in zip(reports, trace.gtFrames, trace.egoStates):
        if gt.index < start or (stop is not None and gt.index >= stop):
            continue
        det = trace.detFrames[sensor][gt.index]
        boxes = [(o.position, o.footprint) for o in gt.obstacles if o.id in report.unmatchedGt]
        boxes += [(d.position, NOMINAL_FOOTPRINT[d.category]) for d in det.detections if d.id in report.unmatchedDet]
        labels = [danger_label(rect_gap(ego.position, ego.footprint, p, e)) for p, e in boxes]
        print(f"{gt.index}\t{gt.timestamp:.2f}\t{len(gt.obstacles)}\t{len(det.detections)}\t"
              f"{fmt_metric(precision(report))}\t{fmt_metric(recall(report))}\t"
              f"{labels.count(DangerLevel.DANGER)}\t{labels.count(DangerLevel.CAUTION)}")
    fusion = reports if sensor is Sensor.FUSION else trace_reports(trace, Sensor.FUSION)
    print(f"verdict: {classify(trace, fusion).verdict.value}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    try:
        target = write_report(Path(args.campaign))
    except CampaignError as exc:
        print(f"campaign error: {exc}", file=sys.stderr)
        return EXIT_CAMPAIGN
    except TraceParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_CAMPAIGN
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(target)
    return EXIT_OK


def cmd_seeds(args: argparse.Namespace) -> int:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for i, scenario in enumerate(initial_seeds(args.count, args.seed)):
            (out / f"seed-{i:03d}.json").write_bytes(save_scenario(scenario))
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"wrote {args.count} seeds to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scenefuzz", description="Scenario fuzzing of a perception stack.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fuzz", help="run a fuzzing campaign")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="campaign directory (default: $SCENEFUZZ_OUT/<config name>)")
    p.add_argument("--rounds", type=int)
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--fitness", choices=sorted(FITNESS_ALIASES))
    p.add_argument("--duration", type=float, help="round duration in seconds")
    p.add_argument("--force", action="store_true", help="replace an existing campaign directory")
    p.set_defaults(func=cmd_fuzz)

    p = sub.add_parser("replay", help="print a per-frame table for a stored trace")
    p.add_argument("trace")
    p.add_argument("--frames", help="frame range START:STOP (stop exclusive)")
    p.add_argument("--sensor", choices=[s.value for s in Sensor], default=Sensor.FUSION.value)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("report", help="emit plot-ready CSVs for a finished campaign")
    p.add_argument("campaign")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("seeds", help="write one-obstacle initial seed scenarios")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_seeds)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
