"""Perception under test: per-sensor detectors, fusion, and a coverage-tracked network."""

from __future__ import annotations

import enum
import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Optional

import numpy as np

from .frames import Detection, DetectionFrame, Frame, Sensor
from .scenario import DETECTION_RANGE, PHANTOM_ID_BASE, Category, ScenarioParseError, Vec2

_SENSOR_CODE = {Sensor.LIDAR: 1, Sensor.CAMERA: 2, Sensor.FUSION: 3}
_MASK64 = (1 << 64) - 1

# purposes for the per-frame hash stream
_DETECT, _NOISE_X, _NOISE_Y, _PHANTOM, _PH_AHEAD, _PH_LATERAL, _PH_CATEGORY = range(7)


def unit_hash(seed: int, frame: int, key: int, sensor: Sensor, purpose: int) -> float:
    """Deterministic uniform draw in [0, 1) keyed by (seed, frame, key, sensor, purpose)."""
    payload = struct.pack("<QqqBB", seed & _MASK64, frame, key, _SENSOR_CODE[sensor], purpose)
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    return int.from_bytes(digest, "little") / 2.0 ** 64


class FusionPolicy(str, enum.Enum):
    UNION_DEDUP = "unionDedup"
    LIDAR_PRIORITY = "lidarPriority"


@dataclass(frozen=True)
class SensorProfile:
    base: float
    distance_slope: float
    size_penalty: dict[str, float] = field(default_factory=dict)
    noise: float = 0.2
    phantom_rate: float = 0.005
    max_range: float = DETECTION_RANGE
    phantom_ahead: Vec2 = (5.0, 30.0)
    phantom_lateral: float = 2.0

    def probability(self, distance: float, category: Category) -> float:
        if distance > self.max_range:
            return 0.0
        p = (self.base - self.distance_slope * distance / DETECTION_RANGE
             - self.size_penalty.get(category.value, 0.0))
        return min(1.0, max(0.0, p))

    @classmethod
    def perfect(cls) -> "SensorProfile":
        return cls(base=1.0, distance_slope=0.0, noise=0.0, phantom_rate=0.0)

    @classmethod
    def blind(cls) -> "SensorProfile":
        return cls(base=0.0, distance_slope=0.0, noise=0.0, phantom_rate=0.0)


DEFAULT_SIZE_PENALTY = {"animal": 0.3, "pedestrian": 0.15, "vehicle": 0.0}
DEFAULT_LIDAR = SensorProfile(base=0.95, distance_slope=0.3, size_penalty=dict(DEFAULT_SIZE_PENALTY))
DEFAULT_CAMERA = SensorProfile(base=0.75, distance_slope=0.4, size_penalty=dict(DEFAULT_SIZE_PENALTY))


@dataclass(frozen=True)
class TrackerConfig:
    enabled: bool = True
    network_seed: int = 0
    threshold: float = 0.1
    grid: int = 16
    hidden: int = 32


@dataclass(frozen=True)
class DetectorProfile:
    """Everything that parameterizes perception; loaded from a profile file."""

    lidar: SensorProfile = DEFAULT_LIDAR
    camera: SensorProfile = DEFAULT_CAMERA
    fusion_policy: FusionPolicy = FusionPolicy.UNION_DEDUP
    dedup_radius: float = 1.0
    latency: float = 0.02
    tracker: TrackerConfig = TrackerConfig()

    @classmethod
    def perfect(cls, **changes: Any) -> "DetectorProfile":
        return replace(cls(lidar=SensorProfile.perfect(), camera=SensorProfile.perfect()), **changes)


# --- detection ---------------------------------------------------------------

def detect(profile: SensorProfile, sensor: Sensor, gt_frame: Frame, ego_position: Vec2,
           ego_heading: float, seed: int, latency: float) -> DetectionFrame:
    """One sensor's view of a range-filtered ground-truth frame."""
    detections = []
    k = gt_frame.index
    for obs in gt_frame.obstacles:
        distance = math.hypot(obs.position[0] - ego_position[0], obs.position[1] - ego_position[1])
        if unit_hash(seed, k, obs.id, sensor, _DETECT) >= profile.probability(distance, obs.category):
            continue
        nx = (2.0 * unit_hash(seed, k, obs.id, sensor, _NOISE_X) - 1.0) * profile.noise
        ny = (2.0 * unit_hash(seed, k, obs.id, sensor, _NOISE_Y) - 1.0) * profile.noise
        detections.append(Detection(obs.id, obs.category,
                                    (obs.position[0] + nx, obs.position[1] + ny), obs.speed))

    if profile.phantom_rate > 0.0 and unit_hash(seed, k, -1, sensor, _PHANTOM) < profile.phantom_rate:
        lo, hi = profile.phantom_ahead
        ahead = lo + (hi - lo) * unit_hash(seed, k, -1, sensor, _PH_AHEAD)
        lateral = (2.0 * unit_hash(seed, k, -1, sensor, _PH_LATERAL) - 1.0) * profile.phantom_lateral
        c, s = math.cos(ego_heading), math.sin(ego_heading)
        position = (ego_position[0] + ahead * c - lateral * s, ego_position[1] + ahead * s + lateral * c)
        categories = list(Category)
        category = categories[int(unit_hash(seed, k, -1, sensor, _PH_CATEGORY) * len(categories))]
        phantom_id = PHANTOM_ID_BASE * _SENSOR_CODE[sensor] + k
        detections.append(Detection(phantom_id, category, position, 0.0))

    return DetectionFrame(sensor, gt_frame.timestamp + latency, tuple(detections), gt_frame.index)


class FusionError(ValueError):
    pass


def fuse(lidar: DetectionFrame, camera: DetectionFrame, policy: FusionPolicy,
         dedup_radius: float = 1.0) -> DetectionFrame:
    if lidar.sourceFrameIndex != camera.sourceFrameIndex:
        raise FusionError(f"cannot fuse frame {lidar.sourceFrameIndex} with frame {camera.sourceFrameIndex}")
    timestamp = max(lidar.timestamp, camera.timestamp)
    fused = list(lidar.detections)
    if policy is FusionPolicy.LIDAR_PRIORITY:
        if not fused:
            fused = list(camera.detections)
    else:
        taken = {d.id for d in fused}
        for cam in camera.detections:
            duplicate = any(
                d.category == cam.category
                and math.hypot(d.position[0] - cam.position[0], d.position[1] - cam.position[1]) <= dedup_radius
                for d in lidar.detections
            )
            if duplicate:
                continue
            det = cam
            while det.id in taken:
                det = replace(det, id=det.id + PHANTOM_ID_BASE * 4)
            taken.add(det.id)
            fused.append(det)
    fused.sort(key=lambda d: d.id)
    return DetectionFrame(Sensor.FUSION, timestamp, tuple(fused), lidar.sourceFrameIndex)


# --- coverage-tracked network -------------------------------------------------

CATEGORY_INTENSITY = {Category.PEDESTRIAN: 0.4, Category.ANIMAL: 0.7, Category.VEHICLE: 1.0}


def rasterize(frame: Frame, origin: Vec2, size: int = 16, extent: float = DETECTION_RANGE) -> np.ndarray:
    """Ego-centric occupancy grid (map-aligned) covering ``origin`` ± ``extent``."""
    grid = np.zeros((size, size), dtype=np.float64)
    cell = 2.0 * extent / size
    for obs in frame.obstacles:
        value = CATEGORY_INTENSITY[obs.category]
        x0 = obs.position[0] - obs.footprint[0] - origin[0] + extent
        x1 = obs.position[0] + obs.footprint[0] - origin[0] + extent
        y0 = obs.position[1] - obs.footprint[1] - origin[1] + extent
        y1 = obs.position[1] + obs.footprint[1] - origin[1] + extent
        i0, i1 = max(0, int(y0 // cell)), min(size - 1, int(y1 // cell))
        j0, j1 = max(0, int(x0 // cell)), min(size - 1, int(x1 // cell))
        if i0 > i1 or j0 > j1:
            continue
        region = grid[i0:i1 + 1, j0:j1 + 1]
        np.maximum(region, value, out=region)
    return grid


def _conv3x3(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    # x: (H, W, Cin), w: (3, 3, Cin, Cout); zero "same" padding
    h, wd, _ = x.shape
    padded = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    out = np.broadcast_to(b, (h, wd, b.shape[0])).copy()
    for dy in range(3):
        for dx in range(3):
            out += padded[dy:dy + h, dx:dx + wd, :] @ w[dy, dx]
    return out


class ConvNet:
    """Two 3x3 convolution layers with ReLU and a 1x1 per-cell score head. Weights are fixed by seed."""

    def __init__(self, seed: int = 0, hidden: int = 32):
        rng = np.random.default_rng(seed)
        self.hidden = hidden
        self.w1 = rng.normal(0.0, 1.5, size=(3, 3, 1, hidden))
        self.b1 = rng.uniform(-0.1, 0.12, size=hidden)
        self.w2 = rng.normal(0.0, 1.0 / math.sqrt(9 * hidden), size=(3, 3, hidden, hidden))
        self.b2 = rng.uniform(-0.1, 0.12, size=hidden)
        self.w3 = rng.normal(0.0, 1.0 / math.sqrt(hidden), size=(hidden, 1))
        self.b3 = rng.uniform(-0.5, 0.5, size=1)

    @property
    def neuron_count(self) -> int:
        return 2 * self.hidden

    def zero_biases(self) -> None:
        self.b1[:] = 0.0
        self.b2[:] = 0.0
        self.b3[:] = 0.0

    def forward(self, grid: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        x = grid[:, :, None]
        h1 = np.maximum(_conv3x3(x, self.w1, self.b1), 0.0)
        h2 = np.maximum(_conv3x3(h1, self.w2, self.b2), 0.0)
        scores = 1.0 / (1.0 + np.exp(-(h2 @ self.w3 + self.b3)[:, :, 0]))
        return [h1, h2], scores


class NeuralTracker:
    """Runs the network per frame and records which neurons activate.

    A neuron is one channel of an intermediate layer; it is activated on a frame
    when its output averaged over spatial positions exceeds ``threshold``.
    """

    def __init__(self, config: TrackerConfig = TrackerConfig()):
        self.config = config
        self.network = ConvNet(config.network_seed, config.hidden)
        self.threshold = config.threshold
        self.activated_ever: set[int] = set()
        self.activated_this_round: set[int] = set()

    def activations(self, grid: np.ndarray) -> tuple[np.ndarray, frozenset[int]]:
        layers, scores = self.network.forward(grid)
        active: set[int] = set()
        for layer_index, layer in enumerate(layers):
            means = layer.mean(axis=(0, 1))
            offset = layer_index * self.network.hidden
            active.update(offset + int(c) for c in np.flatnonzero(means > self.threshold))
        return scores, frozenset(active)

    def forward_and_track(self, frame: Frame, origin: Vec2 = (0.0, 0.0)) -> tuple[np.ndarray, frozenset[int]]:
        grid = rasterize(frame, origin, self.config.grid)
        scores, active = self.activations(grid)
        self.activated_this_round |= active
        return scores, active

    def begin_round(self) -> None:
        self.activated_this_round = set()

    def commit_round(self) -> frozenset[int]:
        """Merge this round's activations into the cumulative set and return them."""
        self.activated_ever |= self.activated_this_round
        return frozenset(self.activated_this_round)


@dataclass
class DetectorStack:
    profile: DetectorProfile = field(default_factory=DetectorProfile)
    tracker: Optional[NeuralTracker] = None

    @classmethod
    def from_profile(cls, profile: DetectorProfile) -> "DetectorStack":
        tracker = NeuralTracker(profile.tracker) if profile.tracker.enabled else None
        return cls(profile, tracker)

    def detect_all(self, gt_frame: Frame, ego_position: Vec2, ego_heading: float,
                   seed: int) -> dict[Sensor, DetectionFrame]:
        p = self.profile
        lidar = detect(p.lidar, Sensor.LIDAR, gt_frame, ego_position, ego_heading, seed, p.latency)
        camera = detect(p.camera, Sensor.CAMERA, gt_frame, ego_position, ego_heading, seed, p.latency)
        fusion = fuse(lidar, camera, p.fusion_policy, p.dedup_radius)
        return {Sensor.LIDAR: lidar, Sensor.CAMERA: camera, Sensor.FUSION: fusion}


# --- profile files --------------------------------------------------------------

def profile_to_dict(profile: DetectorProfile) -> dict[str, Any]:
    d = asdict(profile)
    d["fusion_policy"] = profile.fusion_policy.value
    for sensor in ("lidar", "camera"):
        d[sensor]["phantom_ahead"] = list(d[sensor]["phantom_ahead"])
    return d


def save_profile(profile: DetectorProfile) -> bytes:
    return (json.dumps(profile_to_dict(profile), indent=2, sort_keys=True) + "\n").encode("utf-8")


def _sensor_from(d: dict[str, Any], default: SensorProfile, where: str) -> SensorProfile:
    known = set(SensorProfile.__dataclass_fields__)
    unknown = set(d) - known
    if unknown:
        raise ScenarioParseError(f"unknown keys {sorted(unknown)}", field=where)
    merged = {**asdict(default), **d}
    merged["phantom_ahead"] = tuple(float(v) for v in merged["phantom_ahead"])
    merged["size_penalty"] = {str(k): float(v) for k, v in merged["size_penalty"].items()}
    return SensorProfile(**merged)


def profile_from_dict(d: dict[str, Any]) -> DetectorProfile:
    """Missing keys fall back to the defaults."""
    default = DetectorProfile()
    unknown = set(d) - set(DetectorProfile.__dataclass_fields__)
    if unknown:
        raise ScenarioParseError(f"unknown keys {sorted(unknown)}", field="<root>")
    try:
        tracker = TrackerConfig(**{**asdict(default.tracker), **d.get("tracker", {})})
        return DetectorProfile(
            lidar=_sensor_from(d.get("lidar", {}), default.lidar, "lidar"),
            camera=_sensor_from(d.get("camera", {}), default.camera, "camera"),
            fusion_policy=FusionPolicy(d.get("fusion_policy", default.fusion_policy.value)),
            dedup_radius=float(d.get("dedup_radius", default.dedup_radius)),
            latency=float(d.get("latency", default.latency)),
            tracker=tracker,
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ScenarioParseError):
            raise
        raise ScenarioParseError(str(exc)) from exc


def load_profile(data: bytes | str) -> DetectorProfile:
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    try:
        decoded = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(exc.msg, line=exc.lineno) from exc
    if not isinstance(decoded, dict):
        raise ScenarioParseError("expected an object", field="<root>")
    return profile_from_dict(decoded)
