"""Timestamped frame records shared by the simulator, the detectors and the evaluator."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Any

from .scenario import PHANTOM_ID_BASE, Category, Vec2


class Sensor(str, enum.Enum):
    LIDAR = "lidar"
    CAMERA = "camera"
    FUSION = "fusion"


@dataclass(frozen=True)
class GroundTruthObstacle:
    id: int
    category: Category
    position: Vec2
    speed: float
    heading: float
    footprint: Vec2


@dataclass(frozen=True)
class Frame:
    index: int
    timestamp: float
    obstacles: tuple[GroundTruthObstacle, ...]


@dataclass(frozen=True)
class Detection:
    id: int
    category: Category
    position: Vec2
    speed: float

    @property
    def is_phantom(self) -> bool:
        return self.id >= PHANTOM_ID_BASE


@dataclass(frozen=True)
class DetectionFrame:
    sensor: Sensor
    timestamp: float
    detections: tuple[Detection, ...]
    sourceFrameIndex: int


def frame_to_dict(frame: Frame) -> dict[str, Any]:
    return {
        "index": frame.index,
        "timestamp": frame.timestamp,
        "obstacles": [
            {"id": o.id, "category": o.category.value, "position": list(o.position),
             "speed": o.speed, "heading": o.heading, "footprint": list(o.footprint)}
            for o in frame.obstacles
        ],
    }


def frame_from_dict(d: dict[str, Any]) -> Frame:
    return Frame(
        index=int(d["index"]),
        timestamp=float(d["timestamp"]),
        obstacles=tuple(
            GroundTruthObstacle(int(o["id"]), Category(o["category"]), tuple(o["position"]),
                                float(o["speed"]), float(o["heading"]), tuple(o["footprint"]))
            for o in d["obstacles"]
        ),
    )


def detection_frame_to_dict(frame: DetectionFrame) -> dict[str, Any]:
    return {
        "sensor": frame.sensor.value,
        "timestamp": frame.timestamp,
        "sourceFrameIndex": frame.sourceFrameIndex,
        "detections": [
            {"id": d.id, "category": d.category.value, "position": list(d.position), "speed": d.speed}
            for d in frame.detections
        ],
    }


def detection_frame_from_dict(d: dict[str, Any]) -> DetectionFrame:
    return DetectionFrame(
        sensor=Sensor(d["sensor"]),
        timestamp=float(d["timestamp"]),
        sourceFrameIndex=int(d["sourceFrameIndex"]),
        detections=tuple(
            Detection(int(x["id"]), Category(x["category"]), tuple(x["position"]), float(x["speed"]))
            for x in d["detections"]
        ),
    )
