"""Fixed-step 2D simulation of a scenario with a detection-driven ego planner."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .frames import Detection, DetectionFrame, Frame, GroundTruthObstacle, Sensor
from .perception import DetectorStack
from .scenario import (
    DETECTION_RANGE,
    NOMINAL_FOOTPRINT,
    ObstacleSpec,
    Scenario,
    Vec2,
    normalize_angle,
    rects_overlap,
    validate,
)


@dataclass(frozen=True)
class PlannerConfig:
    brake_range: float = 15.0
    corridor_margin: float = 0.5
    deceleration: float = 6.0
    acceleration: float = 2.0
    cruise_speed: float = 10.0
    sample_step: float = 0.5
    lookahead: float = DETECTION_RANGE


@dataclass(frozen=True)
class SimConfig:
    duration: float = 5.0
    frame_rate: float = 10.0
    sensor_range: float = DETECTION_RANGE
    arrival_tolerance: float = 2.0
    planner: PlannerConfig = PlannerConfig()

    @property
    def dt(self) -> float:
        return 1.0 / self.frame_rate

    def frame_count(self) -> int:
        # tolerance keeps 5 s x 10 Hz at exactly 50
        return max(1, math.ceil(self.duration * self.frame_rate - 1e-9))


class EventKind(str, enum.Enum):
    COLLISION = "collision"
    BRAKE_START = "brakeStart"
    BRAKE_END = "brakeEnd"
    ARRIVED = "arrived"


@dataclass(frozen=True)
class Event:
    timestamp: float
    kind: EventKind
    frame: int
    obstacle: Optional[int] = None


@dataclass(frozen=True)
class EgoState:
    position: Vec2
    heading: float
    speed: float
    plannedTrajectory: tuple[Vec2, ...]
    brakeFlag: bool = False
    brakeCause: Optional[int] = None
    footprint: Vec2 = (2.4, 1.0)


@dataclass
class RoundTrace:
    scenario: Scenario
    gtFrames: list[Frame]
    detFrames: dict[Sensor, list[DetectionFrame]]
    egoStates: list[EgoState]
    events: list[Event]
    duration: float
    frameRate: float
    activations: list[frozenset[int]] = field(default_factory=list)

    @property
    def collided(self) -> bool:
        return any(e.kind is EventKind.COLLISION for e in self.events)

    @property
    def arrived(self) -> bool:
        return any(e.kind is EventKind.ARRIVED for e in self.events)

    def activated(self) -> frozenset[int]:
        out: set[int] = set()
        for a in self.activations:
            out |= a
        return frozenset(out)


# --- geometry helpers ---------------------------------------------------------

def _sample_polyline(points: Sequence[Vec2], step: float, limit: float) -> np.ndarray:
    samples = [points[0]]
    travelled = 0.0
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        seg = math.hypot(x1 - x0, y1 - y0)
        if seg == 0.0:
            continue
        n = max(1, math.ceil(seg / step))
        for i in range(1, n + 1):
            t = i / n
            samples.append((x0 + t * (x1 - x0), y0 + t * (y1 - y0)))
            if travelled + t * seg >= limit:
                return np.asarray(samples)
        travelled += seg
    return np.asarray(samples)


def corridor_hits(samples: np.ndarray, half: Vec2, center: Vec2, extent: Vec2) -> bool:
    """Whether a rectangle intersects the ego footprint (``half``) swept over ``samples``."""
    dx = np.abs(samples[:, 0] - center[0]) < half[0] + extent[0]
    dy = np.abs(samples[:, 1] - center[1]) < half[1] + extent[1]
    return bool(np.any(dx & dy))


def point_to_polyline(point: Vec2, points: Sequence[Vec2]) -> float:
    if len(points) == 1:
        return math.hypot(point[0] - points[0][0], point[1] - points[0][1])
    best = math.inf
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        dx, dy = x1 - x0, y1 - y0
        length_sq = dx * dx + dy * dy
        t = 0.0 if length_sq == 0.0 else max(0.0, min(1.0, ((point[0] - x0) * dx + (point[1] - y0) * dy) / length_sq))
        best = min(best, math.hypot(point[0] - x0 - t * dx, point[1] - y0 - t * dy))
    return best


def _move_along(points: Sequence[Vec2], distance: float) -> tuple[Vec2, float]:
    """Position after travelling ``distance`` along a polyline, and the heading there."""
    pos = points[0]
    heading = None
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        seg = math.hypot(x1 - x0, y1 - y0)
        if seg == 0.0:
            continue
        heading = math.atan2(y1 - y0, x1 - x0)
        if distance <= seg:
            t = distance / seg
            return (x0 + t * (x1 - x0), y0 + t * (y1 - y0)), heading
        distance -= seg
        pos = (x1, y1)
    return pos, heading if heading is not None else 0.0


# --- planner --------------------------------------------------------------------

def _ahead(waypoint: Vec2, position: Vec2, destination: Vec2) -> bool:
    ux, uy = destination[0] - position[0], destination[1] - position[1]
    return (waypoint[0] - position[0]) * ux + (waypoint[1] - position[1]) * uy > 0.0


def _detour(position: Vec2, destination: Vec2, det: Detection, ego_half: Vec2,
            cfg: PlannerConfig) -> tuple[Vec2, Vec2]:
    """Two waypoints that pass the detection laterally with the corridor margin to spare."""
    ux, uy = destination[0] - position[0], destination[1] - position[1]
    length = math.hypot(ux, uy) or 1.0
    ux, uy = ux / length, uy / length
    nx, ny = -uy, ux
    rel = (det.position[0] - position[0], det.position[1] - position[1])
    along = rel[0] * ux + rel[1] * uy
    lateral = rel[0] * nx + rel[1] * ny
    extent = NOMINAL_FOOTPRINT[det.category]
    # axis-aligned footprints: project both half-extent vectors on the path normal
    clearance = (abs(nx) * (ego_half[0] + extent[0]) + abs(ny) * (ego_half[1] + extent[1])
                 + cfg.corridor_margin + 0.25)
    side = -1.0 if lateral >= 0.0 else 1.0
    offset = lateral + side * clearance
    reach = abs(ux) * (ego_half[0] + extent[0]) + abs(uy) * (ego_half[1] + extent[1]) + cfg.corridor_margin + 1.0
    p0 = (position[0] + (along - reach) * ux + offset * nx, position[1] + (along - reach) * uy + offset * ny)
    p1 = (position[0] + (along + reach) * ux + offset * nx, position[1] + (along + reach) * uy + offset * ny)
    return p0, p1


def plan_step(ego: EgoState, detections: DetectionFrame, destination: Vec2,
              cfg: PlannerConfig = PlannerConfig(), dt: float = 0.1) -> EgoState:
    """One planning cycle driven only by detections.

    Obstacles on the corridor farther than ``brake_range`` are planned around;
    those within it trigger braking. Remaining detour waypoints from the previous
    plan are kept until the ego passes them.
    """
    position = ego.position
    half = (ego.footprint[0] + cfg.corridor_margin, ego.footprint[1] + cfg.corridor_margin)
    kept = [p for p in ego.plannedTrajectory[1:-1] if _ahead(p, position, destination)]
    trajectory = [position, *kept, destination]

    def distance(det: Detection) -> float:
        return math.hypot(det.position[0] - position[0], det.position[1] - position[1])

    ordered = sorted(detections.detections, key=lambda d: (distance(d), d.id))
    far = [d for d in ordered if distance(d) > cfg.brake_range]
    samples = _sample_polyline(trajectory, cfg.sample_step, cfg.lookahead) if far and not kept else None
    for det in far:
        if kept:
            break
        if corridor_hits(samples, half, det.position, NOMINAL_FOOTPRINT[det.category]):
            trajectory = [position, *_detour(position, destination, det, ego.footprint, cfg), destination]
            kept = trajectory[1:-1]

    samples = _sample_polyline(trajectory, cfg.sample_step, cfg.brake_range + ego.footprint[0])
    cause = None
    for det in ordered:
        if distance(det) > cfg.brake_range:
            break
        if corridor_hits(samples, half, det.position, NOMINAL_FOOTPRINT[det.category]):
            cause = det.id
            break

    if cause is not None:
        speed = max(0.0, ego.speed - cfg.deceleration * dt)
    else:
        speed = min(cfg.cruise_speed, ego.speed + cfg.acceleration * dt) if ego.speed < cfg.cruise_speed \
            else max(cfg.cruise_speed, ego.speed - cfg.deceleration * dt)
    heading = math.atan2(trajectory[1][1] - position[1], trajectory[1][0] - position[0]) \
        if trajectory[1] != position else ego.heading
    return EgoState(position, normalize_angle(heading), speed, tuple(trajectory),
                    cause is not None, cause, ego.footprint)


def check_collision(ego_position: Vec2, ego_footprint: Vec2,
                    obstacles: Sequence[GroundTruthObstacle]) -> Optional[int]:
    for obs in obstacles:
        if rects_overlap(ego_position, ego_footprint, obs.position, obs.footprint):
            return obs.id
    return None


# --- obstacle kinematics ----------------------------------------------------------

@dataclass
class _Body:
    spec: ObstacleSpec
    position: Vec2
    heading: float
    speed: float

    def state(self) -> GroundTruthObstacle:
        s = self.spec
        return GroundTruthObstacle(s.id, s.category, self.position, self.speed, self.heading, s.footprint)

    def advance(self, dt: float) -> None:
        if self.speed <= 0.0:
            return
        target = self.spec.target
        step = self.speed * dt
        if target is None:
            self.position = (self.position[0] + step * math.cos(self.heading),
                             self.position[1] + step * math.sin(self.heading))
            return
        dx, dy = target[0] - self.position[0], target[1] - self.position[1]
        remaining = math.hypot(dx, dy)
        if remaining <= step:
            self.position = target
            self.speed = 0.0
            return
        self.heading = normalize_angle(math.atan2(dy, dx))
        self.position = (self.position[0] + step * dx / remaining, self.position[1] + step * dy / remaining)


class SimulationError(RuntimeError):
    pass


def simulate_round(scenario: Scenario, detector: DetectorStack, config: SimConfig = SimConfig()) -> RoundTrace:
    problems = validate(scenario)
    if problems:
        raise SimulationError("invalid scenario: " + "; ".join(str(p) for p in problems))
    if config.frame_rate <= 0 or config.duration <= 0:
        raise SimulationError("frame rate and duration must be positive")

    dt = config.dt
    spec = scenario.ego
    bodies = []
    for o in scenario.obstacles:
        heading = o.heading
        if o.target is not None and o.target != o.position:
            heading = normalize_angle(math.atan2(o.target[1] - o.position[1], o.target[0] - o.position[0]))
        bodies.append(_Body(o, o.position, heading, o.speed))
    ego = EgoState(spec.position, spec.heading, spec.speed, (spec.position, spec.destination),
                   footprint=spec.footprint)
    tracker = detector.tracker
    if tracker is not None:
        tracker.begin_round()

    gt_frames: list[Frame] = []
    det_frames: dict[Sensor, list[DetectionFrame]] = {s: [] for s in Sensor}
    ego_states: list[EgoState] = []
    events: list[Event] = []
    activations: list[frozenset[int]] = []
    braking = False

    for k in range(config.frame_count()):
        t = k / config.frame_rate
        in_range = tuple(
            b.state() for b in bodies
            if math.hypot(b.position[0] - ego.position[0], b.position[1] - ego.position[1]) <= config.sensor_range
        )
        frame = Frame(k, t, in_range)
        gt_frames.append(frame)
        detected = detector.detect_all(frame, ego.position, ego.heading, scenario.rngSeed)
        for sensor, det in detected.items():
            det_frames[sensor].append(det)
        if tracker is not None:
            activations.append(tracker.forward_and_track(frame, ego.position)[1])

        ego = plan_step(ego, detected[Sensor.FUSION], spec.destination, config.planner, dt)
        ego_states.append(ego)
        if ego.brakeFlag and not braking:
            events.append(Event(t, EventKind.BRAKE_START, k, ego.brakeCause))
        elif braking and not ego.brakeFlag:
            events.append(Event(t, EventKind.BRAKE_END, k))
        braking = ego.brakeFlag

        position, heading = _move_along(ego.plannedTrajectory, ego.speed * dt)
        ego = EgoState(position, normalize_angle(heading) if ego.speed > 0 else ego.heading, ego.speed,
                       (position,) + ego.plannedTrajectory[1:], ego.brakeFlag, ego.brakeCause, ego.footprint)
        for body in bodies:
            body.advance(dt)

        t_next = (k + 1) / config.frame_rate
        hit = check_collision(ego.position, ego.footprint, [b.state() for b in bodies])
        if hit is not None:
            events.append(Event(t_next, EventKind.COLLISION, k, hit))
            break
        if math.hypot(ego.position[0] - spec.destination[0],
                      ego.position[1] - spec.destination[1]) <= config.arrival_tolerance:
            events.append(Event(t_next, EventKind.ARRIVED, k))
            break

    if tracker is not None:
        tracker.commit_round()
    return RoundTrace(scenario, gt_frames, det_frames, ego_states, events,
                      len(gt_frames) / config.frame_rate, config.frame_rate, activations)
