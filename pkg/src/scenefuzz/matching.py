"""Frame pairing, category-partitioned Hungarian matching and perception metrics."""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass
from fractions import Fraction
from statistics import fmean
from typing import Iterable, Optional, Sequence

from .frames import Detection, DetectionFrame, Frame, GroundTruthObstacle
from .scenario import Category

DEFAULT_GATE = 3.0


class FrameMatchError(ValueError):
    def __init__(self, message: str, frame_index: int):
        super().__init__(f"{message} (frame {frame_index})")
        self.frame_index = frame_index


@dataclass(frozen=True)
class FramePair:
    gt: Frame
    det: DetectionFrame


def match_frames(gt_frames: Sequence[Frame], det_frames: Sequence[DetectionFrame]) -> list[FramePair]:
    """Pair each ground-truth frame with its single detection counterpart of one sensor."""
    by_index: dict[int, DetectionFrame] = {}
    sensor = None
    for det in det_frames:
        if sensor is None:
            sensor = det.sensor
        elif det.sensor != sensor:
            raise FrameMatchError(f"mixed sensors {sensor.value}/{det.sensor.value}", det.sourceFrameIndex)
        if det.sourceFrameIndex in by_index:
            raise FrameMatchError("duplicate detection frame", det.sourceFrameIndex)
        by_index[det.sourceFrameIndex] = det

    pairs = []
    seen: set[int] = set()
    for gt in gt_frames:
        if gt.index in seen:
            raise FrameMatchError("duplicate ground-truth frame", gt.index)
        seen.add(gt.index)
        det = by_index.pop(gt.index, None)
        if det is None:
            raise FrameMatchError("missing detection frame", gt.index)
        if not det.timestamp > gt.timestamp:
            raise FrameMatchError("detection frame is not later than its ground truth", gt.index)
        pairs.append(FramePair(gt, det))
    if by_index:
        raise FrameMatchError("detection frame without ground truth", min(by_index))
    return pairs


# --- assignment -----------------------------------------------------------------

def solve_assignment(cost: Sequence[Sequence[float]]) -> list[tuple[int, int]]:
    """Minimum-cost assignment of a rectangular matrix (Kuhn-Munkres with potentials).

    Every row is assigned when rows <= columns, otherwise every column is.
    Returns (row, column) pairs sorted by row.
    """
    n = len(cost)
    m = len(cost[0]) if n else 0
    if n == 0 or m == 0:
        return []
    if n > m:
        transposed = [[cost[i][j] for i in range(n)] for j in range(m)]
        return sorted((i, j) for j, i in solve_assignment(transposed))

    inf = math.inf
    # 1-based arrays; column 0 is the virtual root of each augmenting search
    u = [0.0] * (n + 1)
    v = [0.0] * (m + 1)
    owner = [0] * (m + 1)
    way = [0] * (m + 1)
    for row in range(1, n + 1):
        owner[0] = row
        j0 = 0
        minv = [inf] * (m + 1)
        used = [False] * (m + 1)
        while True:
            used[j0] = True
            i0 = owner[j0]
            delta = inf
            j1 = 0
            for j in range(1, m + 1):
                if used[j]:
                    continue
                reduced = cost[i0 - 1][j - 1] - u[i0] - v[j]
                if reduced < minv[j]:
                    minv[j] = reduced
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[owner[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    return sorted((owner[j] - 1, j - 1) for j in range(1, m + 1) if owner[j])


def manhattan(a: tuple[float, float], b: tuple[float, float]) -> float:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


@dataclass(frozen=True)
class MatchedPair:
    gtId: int
    detId: int
    distance: float


@dataclass(frozen=True)
class MatchReport:
    pairs: tuple[MatchedPair, ...]
    unmatchedGt: tuple[int, ...]
    unmatchedDet: tuple[int, ...]
    frameIndex: int = -1

    @property
    def precision(self) -> Optional[Fraction]:
        return precision(self)

    @property
    def recall(self) -> Optional[Fraction]:
        return recall(self)

    def matched_gt(self) -> frozenset[int]:
        return frozenset(p.gtId for p in self.pairs)

    def present_gt(self) -> frozenset[int]:
        return self.matched_gt() | frozenset(self.unmatchedGt)


def hungarian_match(detected: Sequence[Detection], ground_truth: Sequence[GroundTruthObstacle],
                    gate: float = DEFAULT_GATE) -> MatchReport:
    """Match one category partition by minimum total Manhattan distance.

    Pairs farther apart than ``gate`` are dropped to unmatched on both sides.
    Inputs are ordered by id first so equal-cost optima resolve the same way every run.
    """
    dets = sorted(detected, key=lambda d: d.id)
    gts = sorted(ground_truth, key=lambda g: g.id)
    cost = [[manhattan(d.position, g.position) for g in gts] for d in dets]
    pairs = []
    matched_d: set[int] = set()
    matched_g: set[int] = set()
    for i, j in solve_assignment(cost):
        if cost[i][j] <= gate:
            pairs.append(MatchedPair(gts[j].id, dets[i].id, cost[i][j]))
            matched_d.add(i)
            matched_g.add(j)
    return MatchReport(
        pairs=tuple(sorted(pairs, key=lambda p: (p.gtId, p.detId))),
        unmatchedGt=tuple(g.id for j, g in enumerate(gts) if j not in matched_g),
        unmatchedDet=tuple(d.id for i, d in enumerate(dets) if i not in matched_d),
    )


def match_frame(gt: Frame, det: DetectionFrame, gate: float = DEFAULT_GATE) -> MatchReport:
    """Match one frame pair, partitioning by category so no pair crosses categories."""
    pairs: list[MatchedPair] = []
    unmatched_gt: list[int] = []
    unmatched_det: list[int] = []
    for category in Category:
        part = hungarian_match([d for d in det.detections if d.category == category],
                               [g for g in gt.obstacles if g.category == category], gate)
        pairs += part.pairs
        unmatched_gt += part.unmatchedGt
        unmatched_det += part.unmatchedDet
    return MatchReport(tuple(sorted(pairs, key=lambda p: (p.gtId, p.detId))),
                       tuple(sorted(unmatched_gt)), tuple(sorted(unmatched_det)), gt.index)


def match_round(pairs: Iterable[FramePair], gate: float = DEFAULT_GATE) -> list[MatchReport]:
    return [match_frame(p.gt, p.det, gate) for p in pairs]


# --- metrics ----------------------------------------------------------------------

def precision(report: MatchReport) -> Optional[Fraction]:
    total = len(report.pairs) + len(report.unmatchedDet)
    return Fraction(len(report.pairs), total) if total else None


def recall(report: MatchReport) -> Optional[Fraction]:
    total = len(report.pairs) + len(report.unmatchedGt)
    return Fraction(len(report.pairs), total) if total else None


@dataclass(frozen=True)
class PerceptionRate:
    obstacleId: int
    framesPresent: int
    framesDetected: int

    @property
    def rate(self) -> Fraction:
        return Fraction(self.framesDetected, self.framesPresent)


def perception_rate(reports: Sequence[MatchReport], obstacle_id: int) -> Fraction:
    return perception_rate_entry(reports, obstacle_id).rate


def perception_rate_entry(reports: Sequence[MatchReport], obstacle_id: int) -> PerceptionRate:
    present = sum(1 for r in reports if obstacle_id in r.present_gt())
    if present == 0:
        raise KeyError(f"obstacle {obstacle_id} never appears in the ground truth")
    detected = sum(1 for r in reports if obstacle_id in r.matched_gt())
    return PerceptionRate(obstacle_id, present, detected)


def perception_rates(reports: Sequence[MatchReport]) -> dict[int, PerceptionRate]:
    ids: set[int] = set()
    for r in reports:
        ids |= r.present_gt()
    return {i: perception_rate_entry(reports, i) for i in sorted(ids)}


class DangerLevel(str, enum.Enum):
    DANGER = "danger"
    CAUTION = "caution"
    NONE = "none"


def danger_label(distance: float) -> DangerLevel:
    if distance <= 1.0:
        return DangerLevel.DANGER
    if distance <= 2.0:
        return DangerLevel.CAUTION
    return DangerLevel.NONE


def mean_defined(values: Iterable[Optional[Fraction]]) -> Optional[float]:
    """Unweighted mean over the values that are defined; None if there are none."""
    defined = [float(v) for v in values if v is not None]
    return fmean(defined) if defined else None


@dataclass(frozen=True)
class RoundSummary:
    frames: int
    avgPrecision: Optional[float]
    avgRecall: Optional[float]
    avgUndetected: float
    avgUnmatchedDet: float


def summarize(reports: Sequence[MatchReport]) -> RoundSummary:
    return RoundSummary(
        frames=len(reports),
        avgPrecision=mean_defined(precision(r) for r in reports),
        avgRecall=mean_defined(recall(r) for r in reports),
        avgUndetected=fmean(len(r.unmatchedGt) for r in reports) if reports else 0.0,
        avgUnmatchedDet=fmean(len(r.unmatchedDet) for r in reports) if reports else 0.0,
    )


def fmt_metric(value: Optional[float | Fraction]) -> str:
    return "NA" if value is None else repr(float(value))


def reports_to_csv(reports: Sequence[MatchReport]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["frame", "precision", "recall", "matched", "unmatched_gt", "unmatched_det"])
    for r in reports:
        writer.writerow([r.frameIndex, fmt_metric(precision(r)), fmt_metric(recall(r)),
                         len(r.pairs), len(r.unmatchedGt), len(r.unmatchedDet)])
    return out.getvalue()
