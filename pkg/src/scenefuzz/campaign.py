"""Campaign configuration, on-disk layout, trace logs and report emission."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import shutil
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from statistics import fmean
from typing import Any, Optional, Sequence

from .frames import (
    DetectionFrame,
    Sensor,
    detection_frame_from_dict,
    detection_frame_to_dict,
    frame_from_dict,
    frame_to_dict,
)
from .fuzzing import (
    FitnessKind,
    FuzzConfig,
    RoundRecord,
    RoundResult,
    RoundStatus,
    fuzz,
    rank_generated,
    run_round,
)
from .matching import (
    DEFAULT_GATE,
    MatchReport,
    fmt_metric,
    match_frames,
    match_round,
    perception_rates,
    summarize,
)
from .outcome import OutcomeReport, classify
from .perception import DetectorProfile, DetectorStack, TrackerConfig, load_profile, save_profile
from .scenario import Category, ScenarioParseError, load_scenario, save_scenario, scenario_to_dict, validate
from .simulator import EgoState, Event, EventKind, RoundTrace, SimConfig

TRACE_FORMAT = "scenefuzz-trace/1"


class ConfigError(Exception):
    pass


class CampaignError(Exception):
    pass


class TraceParseError(ValueError):
    pass


# --- trace logs ---------------------------------------------------------------------

def _ego_to_dict(ego: EgoState) -> dict[str, Any]:
    return {
        "position": list(ego.position),
        "heading": ego.heading,
        "speed": ego.speed,
        "plannedTrajectory": [list(p) for p in ego.plannedTrajectory],
        "brakeFlag": ego.brakeFlag,
        "brakeCause": ego.brakeCause,
        "footprint": list(ego.footprint),
    }


def _ego_from_dict(d: dict[str, Any]) -> EgoState:
    return EgoState(
        position=tuple(d["position"]),
        heading=float(d["heading"]),
        speed=float(d["speed"]),
        plannedTrajectory=tuple(tuple(p) for p in d["plannedTrajectory"]),
        brakeFlag=bool(d["brakeFlag"]),
        brakeCause=d["brakeCause"],
        footprint=tuple(d["footprint"]),
    )


def _event_to_dict(e: Event) -> dict[str, Any]:
    return {"timestamp": e.timestamp, "kind": e.kind.value, "frame": e.frame, "obstacle": e.obstacle}


def dump_trace(trace: RoundTrace) -> bytes:
    """One JSON record per line: a header, then one record per tick."""
    lines = [json.dumps({
        "record": "header",
        "format": TRACE_FORMAT,
        "scenario": scenario_to_dict(trace.scenario),
        "frameRate": trace.frameRate,
        "duration": trace.duration,
        "ticks": len(trace.gtFrames),
    })]
    for k, gt in enumerate(trace.gtFrames):
        lines.append(json.dumps({
            "record": "tick",
            "index": gt.index,
            "gt": frame_to_dict(gt),
            "det": {s.value: detection_frame_to_dict(trace.detFrames[s][k]) for s in Sensor},
            "ego": _ego_to_dict(trace.egoStates[k]),
            "events": [_event_to_dict(e) for e in trace.events if e.frame == k],
            "activated": sorted(trace.activations[k]) if trace.activations else None,
        }))
    return ("\n".join(lines) + "\n").encode("utf-8")


def load_trace(data: bytes) -> RoundTrace:
    try:
        records = [json.loads(line) for line in data.decode("utf-8").splitlines() if line.strip()]
        header = records[0]
        if header.get("record") != "header" or header.get("format") != TRACE_FORMAT:
            raise TraceParseError("missing trace header")
        scenario = load_scenario(json.dumps(header["scenario"]))
        ticks = records[1:]
        if len(ticks) != header["ticks"]:
            raise TraceParseError(f"expected {header['ticks']} ticks, found {len(ticks)}")
        det: dict[Sensor, list[DetectionFrame]] = {s: [] for s in Sensor}
        gt, ego, events, activations = [], [], [], []
        for i, tick in enumerate(ticks):
            if tick.get("record") != "tick" or tick.get("index") != i:
                raise TraceParseError(f"tick {i} out of sequence")
            gt.append(frame_from_dict(tick["gt"]))
            for s in Sensor:
                det[s].append(detection_frame_from_dict(tick["det"][s.value]))
            ego.append(_ego_from_dict(tick["ego"]))
            events += [Event(float(e["timestamp"]), EventKind(e["kind"]), int(e["frame"]), e["obstacle"])
                       for e in tick["events"]]
            if tick["activated"] is not None:
                activations.append(frozenset(tick["activated"]))
        return RoundTrace(scenario, gt, det, ego, events, float(header["duration"]),
                          float(header["frameRate"]), activations)
    except TraceParseError:
        raise
    except (ValueError, KeyError, IndexError, TypeError, ScenarioParseError) as exc:
        raise TraceParseError(f"corrupt trace: {exc}") from exc


def trace_reports(trace: RoundTrace, sensor: Sensor = Sensor.FUSION, gate: float = DEFAULT_GATE) -> list[MatchReport]:
    return match_round(match_frames(trace.gtFrames, trace.detFrames[sensor]), gate)


# --- configuration -----------------------------------------------------------------------

FITNESS_ALIASES = {
    "neuron": FitnessKind.NEURON_NOVELTY,
    "neuronNovelty": FitnessKind.NEURON_NOVELTY,
    "undetected": FitnessKind.UNDETECTED_OBSTACLES,
    "undetectedObstacles": FitnessKind.UNDETECTED_OBSTACLES,
}


@dataclass(frozen=True)
class CampaignConfig:
    seeds: str
    fitness: str = "neuron"
    maxRounds: int = 300
    masterSeed: int = 0
    detectorProfile: Optional[str] = None
    duration: float = 5.0
    frameRate: float = 10.0
    longRunDuration: float = 45.0
    rerunTop: int = 3
    gate: float = DEFAULT_GATE
    out: Optional[str] = None
    base_dir: str = field(default=".", compare=False)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def snapshot(self) -> dict[str, Any]:
        d = asdict(self)
        d.pop("base_dir")
        d.pop("out")
        return d


def load_config(path: Path) -> CampaignConfig:
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected an object")
    unknown = set(raw) - (set(CampaignConfig.__dataclass_fields__) - {"base_dir"})
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    if "seeds" not in raw:
        raise ConfigError(f"{path}: missing 'seeds'")
    try:
        return CampaignConfig(**raw, base_dir=str(path.parent))
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def check_config(cfg: CampaignConfig) -> None:
    if cfg.fitness not in FITNESS_ALIASES:
        raise ConfigError(f"unknown fitness {cfg.fitness!r}")
    if not isinstance(cfg.maxRounds, int) or cfg.maxRounds < 1:
        raise ConfigError("maxRounds must be a positive integer")
    if not (cfg.duration > 0 and cfg.frameRate > 0 and cfg.longRunDuration > 0):
        raise ConfigError("durations and frame rate must be positive")
    if cfg.rerunTop < 0:
        raise ConfigError("rerunTop must be >= 0")


def read_seeds(path: Path) -> list[Any]:
    """Seed scenarios from a scenario file or a directory of ``*.json`` scenario files."""
    if path.is_dir():
        files = sorted(path.glob("*.json"))
    elif path.is_file():
        files = [path]
    else:
        raise ConfigError(f"seeds not found: {path}")
    if not files:
        raise ConfigError(f"no seed scenarios in {path}")
    seeds = []
    for f in files:
        try:
            scenario = load_scenario(f.read_bytes())
        except ScenarioParseError as exc:
            raise ConfigError(f"{f}: {exc}") from None
        problems = validate(scenario)
        if problems:
            raise ConfigError(f"{f}: invalid seed: " + "; ".join(map(str, problems)))
        seeds.append(scenario)
    return seeds


def read_profile(cfg: CampaignConfig) -> DetectorProfile:
    if cfg.detectorProfile is None:
        return DetectorProfile()
    path = cfg.resolve(cfg.detectorProfile)
    try:
        return load_profile(path.read_bytes())
    except FileNotFoundError:
        raise ConfigError(f"detector profile not found: {path}") from None
    except ScenarioParseError as exc:
        raise ConfigError(f"{path}: {exc}") from None


# --- running a campaign ----------------------------------------------------------------------

def _csv(rows: Sequence[Sequence[Any]]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerows(rows)
    return out.getvalue()


def _write(path: Path, data: bytes | str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    path.write_bytes(data)


def _json(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def outcome_to_dict(report: OutcomeReport) -> dict[str, Any]:
    c = report.contributingPerception
    return {
        "verdict": report.verdict.value,
        "endTime": report.endTime,
        "evidence": [{"timestamp": e.timestamp, "description": e.description, "frames": list(e.frames)}
                     for e in report.evidence],
        "contributingPerception": {
            "obstacleId": c.obstacleId,
            "perceptionRate": None if c.perceptionRate is None else float(c.perceptionRate),
            "windowStart": c.windowStart,
            "windowPrecision": c.windowPrecision,
        },
    }


def _event_time(report: OutcomeReport) -> str:
    return repr(report.evidence[0].timestamp) if report.evidence else "NA"


def run_campaign(cfg: CampaignConfig, out: Path, force: bool = False) -> dict[str, Any]:
    """Run a campaign into ``out``. All inputs are checked before ``out`` is touched."""
    check_config(cfg)
    seeds = read_seeds(cfg.resolve(cfg.seeds))
    profile = read_profile(cfg)
    fitness = FITNESS_ALIASES[cfg.fitness]
    if fitness is FitnessKind.NEURON_NOVELTY and not profile.tracker.enabled:
        raise ConfigError("neuron fitness needs the tracker enabled in the detector profile")
    if out.exists() and any(out.iterdir()):
        if not force:
            raise ConfigError(f"output directory {out} is not empty (use --force)")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)

    started = time.time()
    sim = SimConfig(duration=cfg.duration, frame_rate=cfg.frameRate)
    fuzz_cfg = FuzzConfig(master_seed=cfg.masterSeed, sim=sim, profile=profile, gate=cfg.gate)

    _write(out / "config.json", _json(cfg.snapshot()))
    _write(out / "profile.json", save_profile(profile))
    for i, s in enumerate(seeds):
        _write(out / "seeds" / f"seed-{i:03d}.json", save_scenario(s))

    def persist(record: RoundRecord, parent: Optional[RoundResult], child: Optional[RoundResult]) -> None:
        if parent is not None and record.parent.startswith("seed-"):
            seed_trace = out / "traces" / f"{record.parent}.jsonl"
            if not seed_trace.exists():
                _write(seed_trace, dump_trace(parent.trace))
        if child is not None:
            _write(out / "traces" / f"round-{record.round:04d}.jsonl", dump_trace(child.trace))
        if record.status is RoundStatus.ACCEPTED and child is not None:
            _write(out / "scenarios" / f"{record.child}.json", save_scenario(child.trace.scenario))

    result = fuzz(seeds, fitness, cfg.maxRounds, fuzz_cfg, observer=persist)

    _write(out / "rounds.csv", _csv(
        [["round", "parent", "child", "op", "fitness", "status", "error"]]
        + [[r.round, r.parent, r.child or "", r.op or "", "NA" if r.fitness is None else repr(float(r.fitness)),
            r.status.value, r.error] for r in result.history]))
    _write(out / "ledger.json", _json({
        "rounds": [sorted(s) for s in result.ledger.rounds],
        "cumulativeSizes": result.ledger.cumulative_sizes,
        "cumulative": sorted(result.ledger.cumulative),
    }))

    ranking = rank_generated(result.generated, result.results)
    _write(out / "ranking.csv", _csv(
        [["rank", "scenario", "danger", "caution", "min_corridor_distance"]]
        + [[i + 1, r.id, r.danger, r.caution, fmt_metric(None if math.isinf(r.min_corridor_distance)
                                                        else r.min_corridor_distance)]
           for i, r in enumerate(ranking)]))

    outcome_rows = [["scenario", "verdict", "event_time", "end_time"]]
    long_sim = replace(sim, duration=cfg.longRunDuration)
    long_stack = DetectorStack.from_profile(replace(profile, tracker=TrackerConfig(enabled=False)))
    for r in ranking[:cfg.rerunTop]:
        scenario = result.results[r.id].trace.scenario
        long_run = run_round(scenario, long_stack, long_sim, cfg.gate)
        verdict = classify(long_run.trace, long_run.reports)
        _write(out / "outcomes" / f"{r.id}.jsonl", dump_trace(long_run.trace))
        _write(out / "outcomes" / f"{r.id}.json", _json(outcome_to_dict(verdict)))
        outcome_rows.append([r.id, verdict.verdict.value, _event_time(verdict), repr(verdict.endTime)])
    _write(out / "outcomes.csv", _csv(outcome_rows))

    counts = {s.value: sum(1 for r in result.history if r.status is s) for s in RoundStatus}
    manifest = {
        "config": cfg.snapshot(),
        "started": started,
        "finished": time.time(),
        "counts": {"roundsRun": len(result.history), **counts},
        "generated": [g.id for g in result.generated],
        "paths": {"scenarios": "scenarios", "traces": "traces", "ledger": "ledger.json",
                  "ranking": "ranking.csv", "rounds": "rounds.csv", "outcomes": "outcomes.csv"},
    }
    _write(out / "manifest.json", _json(manifest))
    return manifest


# --- reports ----------------------------------------------------------------------------------

def _read_rounds(campaign: Path) -> list[dict[str, str]]:
    with open(campaign / "rounds.csv", newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def build_report(campaign: Path) -> dict[str, str]:
    """Per-round aggregates recomputed from stored traces. Returns file name -> CSV/JSON text."""
    manifest_path = campaign / "manifest.json"
    if not manifest_path.exists() or not (campaign / "rounds.csv").exists():
        raise CampaignError(f"{campaign} is not a completed campaign (manifest or rounds.csv missing)")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    rounds = _read_rounds(campaign)
    expected = manifest["counts"]["roundsRun"]
    listed = {int(r["round"]) for r in rounds}
    missing = sorted(set(range(1, expected + 1)) - listed)
    missing += sorted(int(r["round"]) for r in rounds if r["status"] != RoundStatus.ERROR.value
                      and not (campaign / "traces" / f"round-{int(r['round']):04d}.jsonl").exists())
    if missing:
        raise CampaignError("missing rounds: " + ", ".join(str(m) for m in sorted(set(missing))))

    gate = float(manifest["config"].get("gate", DEFAULT_GATE))
    header = ["round", "status", "frames"]
    for s in Sensor:
        header += [f"avg_precision_{s.value}", f"avg_recall_{s.value}"]
    header += [f"avg_perception_rate_{c.value}" for c in Category]
    rows = [header]
    polar = [["round", "frame", "obstacle", "category", "distance", "bearing_deg"]]
    for r in rounds:
        k = int(r["round"])
        if r["status"] == RoundStatus.ERROR.value:
            rows.append([k, r["status"], 0] + ["NA"] * (2 * len(Sensor) + len(Category)))
            continue
        trace = load_trace((campaign / "traces" / f"round-{k:04d}.jsonl").read_bytes())
        row: list[Any] = [k, r["status"], len(trace.gtFrames)]
        fusion_reports: list[MatchReport] = []
        for s in Sensor:
            reports = trace_reports(trace, s, gate)
            if s is Sensor.FUSION:
                fusion_reports = reports
            summary = summarize(reports)
            row += [fmt_metric(summary.avgPrecision), fmt_metric(summary.avgRecall)]
        rates = perception_rates(fusion_reports)
        categories = {o.id: o.category for f in trace.gtFrames for o in f.obstacles}
        for c in Category:
            values = [float(pr.rate) for i, pr in rates.items() if categories[i] is c]
            row.append(fmt_metric(fmean(values) if values else None))
        rows.append(row)
        for gt, ego in zip(trace.gtFrames, trace.egoStates):
            for o in gt.obstacles:
                dx, dy = o.position[0] - ego.position[0], o.position[1] - ego.position[1]
                bearing = math.degrees(math.atan2(dy, dx) - ego.heading)
                bearing = (bearing + 180.0) % 360.0 - 180.0
                polar.append([k, gt.index, o.id, o.category.value, repr(math.hypot(dx, dy)), repr(bearing)])

    return {"rounds.csv": _csv(rows), "polar.csv": _csv(polar)}


def write_report(campaign: Path) -> Path:
    files = build_report(campaign)
    target = campaign / "report"
    for name, text in files.items():
        _write(target / name, text)
    return target


def default_out_root() -> Path:
    return Path(os.environ.get("SCENEFUZZ_OUT", "runs"))
