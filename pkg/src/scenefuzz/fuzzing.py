"""Queue-based mutation fuzzing of scenarios with pluggable fitness."""

from __future__ import annotations

import enum
import hashlib
import logging
import math
import struct
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

from .frames import Sensor
from .matching import DEFAULT_GATE, MatchReport, RoundSummary, match_frames, match_round, summarize
from .mutation import MutationError, MutationOp, make_rng, mutate
from .perception import DetectorProfile, DetectorStack
from .scenario import NOMINAL_FOOTPRINT, Scenario, rect_gap, validate
from .simulator import RoundTrace, SimConfig, SimulationError, point_to_polyline, simulate_round

log = logging.getLogger(__name__)


class FitnessKind(str, enum.Enum):
    NEURON_NOVELTY = "neuronNovelty"
    UNDETECTED_OBSTACLES = "undetectedObstacles"


class FitnessConfigError(ValueError):
    pass


@dataclass
class RoundResult:
    """A simulated round plus everything fitness and ranking need from it."""

    trace: RoundTrace
    reports: list[MatchReport]
    summary: RoundSummary
    activated: Optional[frozenset[int]]


def run_round(scenario: Scenario, stack: DetectorStack, sim: SimConfig,
              gate: float = DEFAULT_GATE, sensor: Sensor = Sensor.FUSION) -> RoundResult:
    trace = simulate_round(scenario, stack, sim)
    reports = match_round(match_frames(trace.gtFrames, trace.detFrames[sensor]), gate)
    activated = trace.activated() if stack.tracker is not None else None
    return RoundResult(trace, reports, summarize(reports), activated)


def fitness_neuron_novelty(child: RoundResult, parent: RoundResult) -> int:
    """Number of neurons the child round activates that the parent round did not."""
    if child.activated is None or parent.activated is None:
        raise FitnessConfigError("neuron novelty needs an activation tracker")
    return len(child.activated - parent.activated)


def fitness_undetected(child: RoundResult, parent: RoundResult) -> float:
    """Change in the per-frame average of undetected in-range obstacles."""
    return child.summary.avgUndetected - parent.summary.avgUndetected


FitnessFn = Callable[[RoundResult, RoundResult], float]

FITNESS: dict[FitnessKind, FitnessFn] = {
    FitnessKind.NEURON_NOVELTY: fitness_neuron_novelty,
    FitnessKind.UNDETECTED_OBSTACLES: fitness_undetected,
}


@dataclass(frozen=True)
class QueueEntry:
    id: str
    scenario: Scenario
    parent: Optional[str] = None
    op: Optional[str] = None
    fitness: Optional[float] = None
    round: Optional[int] = None


class SeedQueue:
    """FIFO of candidate scenarios; rejects invalid scenarios at the door."""

    def __init__(self, entries: Iterable[QueueEntry] = ()):
        self._q: deque[QueueEntry] = deque()
        for e in entries:
            self.enqueue(e)

    def enqueue(self, entry: QueueEntry) -> None:
        problems = validate(entry.scenario)
        if problems:
            raise ValueError(f"refusing invalid scenario {entry.id}: {problems}")
        self._q.append(entry)

    def dequeue(self) -> QueueEntry:
        return self._q.popleft()

    def __len__(self) -> int:
        return len(self._q)

    def ids(self) -> list[str]:
        return [e.id for e in self._q]


@dataclass
class CoverageLedger:
    rounds: list[frozenset[int]] = field(default_factory=list)
    cumulative: set[int] = field(default_factory=set)
    cumulative_sizes: list[int] = field(default_factory=list)

    def record(self, activated: Iterable[int]) -> None:
        current = frozenset(activated)
        self.rounds.append(current)
        self.cumulative |= current
        self.cumulative_sizes.append(len(self.cumulative))


class RoundStatus(str, enum.Enum):
    ACCEPTED = "accepted"
    REJECTED = "rejected"
    ERROR = "error"


@dataclass(frozen=True)
class RoundRecord:
    round: int
    parent: str
    child: Optional[str]
    op: Optional[str]
    fitness: Optional[float]
    status: RoundStatus
    error: str = ""


@dataclass(frozen=True)
class FuzzConfig:
    master_seed: int = 0
    sim: SimConfig = SimConfig()
    profile: DetectorProfile = DetectorProfile()
    gate: float = DEFAULT_GATE


@dataclass
class FuzzResult:
    generated: list[QueueEntry]
    ledger: CoverageLedger
    results: dict[str, RoundResult]
    history: list[RoundRecord]
    queue: SeedQueue
    seeds: list[QueueEntry]


def derive_seed(master: int, round_index: int) -> int:
    digest = hashlib.blake2b(struct.pack("<Qq", master & ((1 << 64) - 1), round_index), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def seed_entries(seeds: Sequence[Scenario]) -> list[QueueEntry]:
    return [QueueEntry(f"seed-{i:03d}", s) for i, s in enumerate(seeds)]


Observer = Callable[[RoundRecord, Optional[RoundResult], Optional[RoundResult]], None]


def fuzz(initial_seeds: Sequence[Scenario], fitness: FitnessFn | FitnessKind, max_rounds: int,
         config: FuzzConfig = FuzzConfig(), observer: Optional[Observer] = None,
         stack: Optional[DetectorStack] = None) -> FuzzResult:
    """Mutation-based scene generation.

    Each round dequeues a scenario, mutates it and compares child to parent with
    ``fitness``; a positive score keeps the child (generated and enqueued),
    otherwise the parent goes back to the tail of the queue. Exactly one enqueue
    happens per round, including rounds aborted by a mutation or simulation error.

    ``observer`` sees every round as (record, parent result, child result).
    """
    if not initial_seeds:
        raise ValueError("at least one initial seed is required")
    if max_rounds < 1:
        raise ValueError("max_rounds must be >= 1")
    fitness_fn = FITNESS[FitnessKind(fitness)] if isinstance(fitness, (str, FitnessKind)) else fitness
    if stack is None:
        stack = DetectorStack.from_profile(config.profile)
    if fitness_fn is fitness_neuron_novelty and stack.tracker is None:
        raise FitnessConfigError("neuron novelty needs the activation tracker enabled")

    seeds = seed_entries(initial_seeds)
    queue = SeedQueue(seeds)
    generated: list[QueueEntry] = []
    results: dict[str, RoundResult] = {}
    ledger = CoverageLedger()
    history: list[RoundRecord] = []

    for k in range(1, max_rounds + 1):
        if not len(queue):
            break
        entry = queue.dequeue()
        simulated: set[int] = set()
        parent_result = results.get(entry.id)
        child_result = None
        op: Optional[MutationOp] = None
        try:
            if parent_result is None:
                parent_result = run_round(entry.scenario, stack, config.sim, config.gate)
                results[entry.id] = parent_result
                simulated |= parent_result.activated or frozenset()
            child, op = mutate(entry.scenario, make_rng(derive_seed(config.master_seed, k)))
            child_result = run_round(child, stack, config.sim, config.gate)
            simulated |= child_result.activated or frozenset()
            score = fitness_fn(child_result, parent_result)
        except (MutationError, SimulationError) as exc:
            log.warning("round %d aborted on %s: %s", k, entry.id, exc)
            queue.enqueue(entry)
            ledger.record(simulated)
            record = RoundRecord(k, entry.id, None, op.describe() if op else None, None,
                                 RoundStatus.ERROR, str(exc))
            history.append(record)
            if observer:
                observer(record, parent_result, child_result)
            continue

        ledger.record(simulated)
        if score > 0:
            child_entry = QueueEntry(f"gen-{k:04d}", child, entry.id, op.describe(), score, k)
            generated.append(child_entry)
            results[child_entry.id] = child_result
            queue.enqueue(child_entry)
            record = RoundRecord(k, entry.id, child_entry.id, op.describe(), score, RoundStatus.ACCEPTED)
        else:
            queue.enqueue(entry)
            record = RoundRecord(k, entry.id, None, op.describe(), score, RoundStatus.REJECTED)
        history.append(record)
        if observer:
            observer(record, parent_result, child_result)

    return FuzzResult(generated, ledger, results, history, queue, seeds)


# --- ranking -------------------------------------------------------------------------

@dataclass(frozen=True)
class RankEntry:
    id: str
    danger: int
    caution: int
    min_corridor_distance: float

    def key(self) -> tuple:
        return (-self.danger, -self.caution, self.min_corridor_distance, self.id)


def mismatch_severity(result: RoundResult) -> tuple[int, int, float]:
    """(danger count, caution count, closest mismatch to the planned path) over a round."""
    danger = caution = 0
    closest = math.inf
    trace = result.trace
    for report, gt, ego in zip(result.reports, trace.gtFrames, trace.egoStates):
        det_frame = trace.detFrames[Sensor.FUSION][gt.index]
        boxes = [(o.position, o.footprint) for o in gt.obstacles if o.id in report.unmatchedGt]
        boxes += [(d.position, NOMINAL_FOOTPRINT[d.category]) for d in det_frame.detections
                  if d.id in report.unmatchedDet]
        for position, extent in boxes:
            gap = rect_gap(ego.position, ego.footprint, position, extent)
            if gap <= 1.0:
                danger += 1
            elif gap <= 2.0:
                caution += 1
            closest = min(closest, point_to_polyline(position, ego.plannedTrajectory))
    return danger, caution, closest


def rank_generated(generated: Sequence[QueueEntry], results: dict[str, RoundResult]) -> list[RankEntry]:
    """Most severe first: danger-zone mismatches, then caution-zone, then proximity to the path."""
    entries = [RankEntry(g.id, *mismatch_severity(results[g.id])) for g in generated]
    return sorted(entries, key=RankEntry.key)
