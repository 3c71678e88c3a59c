"""Adverse-outcome classification of long-run traces."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from .matching import MatchReport, mean_defined, perception_rate_entry, precision
from .scenario import get_map
from .simulator import EventKind, RoundTrace

ATTRIBUTION_WINDOW = 4.0
ARRIVAL_TOLERANCE = 2.0


class Verdict(str, enum.Enum):
    COLLISION = "collision"
    UNNECESSARY_STOP = "unnecessaryStop"
    WRONG_DESTINATION = "wrongDestination"
    NOMINAL = "nominal"


@dataclass(frozen=True)
class Evidence:
    timestamp: float
    description: str
    frames: tuple[int, ...] = ()


@dataclass(frozen=True)
class PerceptionContribution:
    obstacleId: Optional[int] = None
    perceptionRate: Optional[Fraction] = None
    windowStart: Optional[float] = None
    windowPrecision: Optional[float] = None


@dataclass(frozen=True)
class OutcomeReport:
    verdict: Verdict
    evidence: tuple[Evidence, ...]
    contributingPerception: PerceptionContribution = field(default_factory=PerceptionContribution)
    endTime: float = 0.0


class OutcomeError(ValueError):
    pass


def _collision(trace: RoundTrace, reports: Sequence[MatchReport]) -> Optional[OutcomeReport]:
    event = next((e for e in trace.events if e.kind is EventKind.COLLISION), None)
    if event is None:
        return None
    start = max(0.0, event.timestamp - ATTRIBUTION_WINDOW)
    window = [r for r, f in zip(reports, trace.gtFrames) if f.timestamp >= start - 1e-9]
    rate = None
    try:
        rate = perception_rate_entry(window, event.obstacle).rate
    except KeyError:
        # struck obstacle was out of sensor range for the whole window
        pass
    missed = tuple(r.frameIndex for r in window if event.obstacle in r.unmatchedGt)
    evidence = [Evidence(event.timestamp, f"ego collided with obstacle {event.obstacle}", (event.frame,))]
    if missed:
        evidence.append(Evidence(event.timestamp, f"obstacle {event.obstacle} undetected in "
                                 f"{len(missed)} of {len(window)} frames before impact", missed))
    contribution = PerceptionContribution(event.obstacle, rate, start,
                                          mean_defined(precision(r) for r in window))
    return OutcomeReport(Verdict.COLLISION, tuple(evidence), contribution, trace.duration)


def _unnecessary_stop(trace: RoundTrace, reports: Sequence[MatchReport]) -> Optional[OutcomeReport]:
    witnesses = []
    for state, report in zip(trace.egoStates, reports):
        if state.brakeFlag and state.brakeCause in report.unmatchedDet:
            witnesses.append(report.frameIndex)
    if not witnesses:
        return None
    first = witnesses[0]
    cause = trace.egoStates[first].brakeCause
    evidence = (Evidence(trace.gtFrames[first].timestamp,
                         f"braked for detection {cause} that matches no ground-truth obstacle",
                         tuple(witnesses)),)
    around = [r for r in reports if abs(r.frameIndex - first) <= 5]
    contribution = PerceptionContribution(windowStart=trace.gtFrames[max(0, first - 5)].timestamp,
                                          windowPrecision=mean_defined(precision(r) for r in around))
    return OutcomeReport(Verdict.UNNECESSARY_STOP, evidence, contribution, trace.duration)


def classify(trace: RoundTrace, reports: Optional[Sequence[MatchReport]],
             arrival_tolerance: float = ARRIVAL_TOLERANCE) -> OutcomeReport:
    """Verdict with precedence collision > unnecessary stop > wrong destination > nominal.

    ``reports`` are the per-frame match reports of the stream the planner consumed.
    """
    if reports is None or len(reports) != len(trace.gtFrames):
        raise OutcomeError("one match report per ground-truth frame is required")

    for rule in (_collision, _unnecessary_stop):
        found = rule(trace, reports)
        if found is not None:
            return found

    dest = trace.scenario.ego.destination
    final = trace.egoStates[-1].position if trace.egoStates else trace.scenario.ego.position
    arrived = trace.arrived or math.dist(final, dest) <= arrival_tolerance
    if arrived:
        when = next((e.timestamp for e in trace.events if e.kind is EventKind.ARRIVED), trace.duration)
        return OutcomeReport(Verdict.NOMINAL, (Evidence(when, "arrived at destination"),), endTime=trace.duration)

    last = len(trace.gtFrames) - 1
    evidence = [Evidence(trace.duration, f"ended {math.dist(final, dest):.2f} m from destination", (last,))]
    if not get_map(trace.scenario.mapId).in_lane(final):
        evidence.append(Evidence(trace.duration, "ego finished outside every lane (wrong lane)", (last,)))
    brakes = tuple(e.frame for e in trace.events if e.kind is EventKind.BRAKE_START)
    if brakes:
        evidence.append(Evidence(trace.duration, f"{len(brakes)} brake episodes", brakes))
    return OutcomeReport(Verdict.WRONG_DESTINATION, tuple(evidence), endTime=trace.duration)
