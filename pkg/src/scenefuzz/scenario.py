"""Scenario model: obstacles, ego, maps, validity rules and the scenario file format."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Optional

Vec2 = tuple[float, float]

TWO_PI = 2.0 * math.pi
MAX_OBSTACLES = 15
DETECTION_RANGE = 60.0
# Obstacle ids at or above this value are reserved for phantom detections.
PHANTOM_ID_BASE = 1_000_000


class Category(str, enum.Enum):
    PEDESTRIAN = "pedestrian"
    VEHICLE = "vehicle"
    ANIMAL = "animal"


@dataclass(frozen=True)
class Prototype:
    name: str
    category: Category
    footprint: Vec2


# Footprints are conventions; the simulator assets they stand in for are not dimensioned anywhere.
PROTOTYPES: dict[str, Prototype] = {}


def _register(category: Category, footprint: Vec2, *names: str) -> None:
    for name in names:
        PROTOTYPES[name] = Prototype(name, category, footprint)


_register(Category.PEDESTRIAN, (0.3, 0.3),
          "adult_male", "adult_female", "elderly_male", "elderly_female", "jogger",
          "office_worker", "tourist", "construction_worker", "student", "shopper")
_register(Category.PEDESTRIAN, (0.2, 0.2), "child")
_register(Category.ANIMAL, (0.8, 0.25), "deer")
_register(Category.ANIMAL, (0.25, 0.2), "turkey")
_register(Category.VEHICLE, (2.3, 0.95), "sedan")
_register(Category.VEHICLE, (2.4, 1.0), "suv")
_register(Category.VEHICLE, (2.0, 0.9), "hatchback")
_register(Category.VEHICLE, (2.2, 1.0), "jeep")
_register(Category.VEHICLE, (3.5, 1.25), "box_truck")

# Size used when only a category is known (e.g. for a detection).
NOMINAL_FOOTPRINT: dict[Category, Vec2] = {
    Category.PEDESTRIAN: (0.3, 0.3),
    Category.VEHICLE: (2.3, 0.95),
    Category.ANIMAL: (0.5, 0.25),
}


def prototypes_for(category: Category) -> list[str]:
    return sorted(name for name, proto in PROTOTYPES.items() if proto.category == category)


def normalize_angle(angle: float) -> float:
    wrapped = math.fmod(angle, TWO_PI)
    if wrapped < 0.0:
        wrapped += TWO_PI
    # fmod of a tiny negative value can round up to exactly 2π
    return 0.0 if wrapped >= TWO_PI else wrapped


def rects_overlap(c1: Vec2, h1: Vec2, c2: Vec2, h2: Vec2) -> bool:
    """Axis-aligned rectangles given by center and half-extents; touching edges do not overlap."""
    return (abs(c1[0] - c2[0]) < h1[0] + h2[0]) and (abs(c1[1] - c2[1]) < h1[1] + h2[1])


def rect_gap(c1: Vec2, h1: Vec2, c2: Vec2, h2: Vec2) -> float:
    """Euclidean distance between two axis-aligned rectangles (0 when they touch or overlap)."""
    dx = max(0.0, abs(c1[0] - c2[0]) - h1[0] - h2[0])
    dy = max(0.0, abs(c1[1] - c2[1]) - h1[1] - h2[1])
    return math.hypot(dx, dy)


@dataclass(frozen=True)
class ObstacleSpec:
    id: int
    category: Category
    prototype: str
    position: Vec2
    heading: float = 0.0
    speed: float = 0.0
    footprint: Vec2 = (0.3, 0.3)
    target: Optional[Vec2] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "category", Category(self.category))
        object.__setattr__(self, "position", (float(self.position[0]), float(self.position[1])))
        object.__setattr__(self, "footprint", (float(self.footprint[0]), float(self.footprint[1])))
        object.__setattr__(self, "heading", normalize_angle(float(self.heading)))
        object.__setattr__(self, "speed", float(self.speed))
        if self.target is not None:
            object.__setattr__(self, "target", (float(self.target[0]), float(self.target[1])))

    @classmethod
    def from_prototype(cls, id: int, prototype: str, position: Vec2, **kwargs: Any) -> "ObstacleSpec":
        proto = PROTOTYPES[prototype]
        return cls(id=id, category=proto.category, prototype=prototype, position=position,
                   footprint=proto.footprint, **kwargs)


@dataclass(frozen=True)
class EgoSpec:
    position: Vec2 = (0.0, -1.75)
    heading: float = 0.0
    speed: float = 5.0
    destination: Vec2 = (100.0, -1.75)
    footprint: Vec2 = (2.4, 1.0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", (float(self.position[0]), float(self.position[1])))
        object.__setattr__(self, "destination", (float(self.destination[0]), float(self.destination[1])))
        object.__setattr__(self, "footprint", (float(self.footprint[0]), float(self.footprint[1])))
        object.__setattr__(self, "heading", normalize_angle(float(self.heading)))
        object.__setattr__(self, "speed", float(self.speed))


@dataclass(frozen=True)
class Lane:
    start: Vec2
    end: Vec2
    width: float

    def contains(self, point: Vec2) -> bool:
        (x0, y0), (x1, y1) = self.start, self.end
        dx, dy = x1 - x0, y1 - y0
        length_sq = dx * dx + dy * dy
        t = ((point[0] - x0) * dx + (point[1] - y0) * dy) / length_sq
        if t < 0.0 or t > 1.0:
            return False
        px, py = x0 + t * dx, y0 + t * dy
        return math.hypot(point[0] - px, point[1] - py) <= self.width / 2.0


@dataclass(frozen=True)
class MapSpec:
    id: str
    region_min: Vec2
    region_max: Vec2
    lanes: tuple[Lane, ...]
    sidewalk_margin: float

    def contains(self, point: Vec2) -> bool:
        return (self.region_min[0] <= point[0] <= self.region_max[0]
                and self.region_min[1] <= point[1] <= self.region_max[1])

    def in_lane(self, point: Vec2) -> bool:
        return any(lane.contains(point) for lane in self.lanes)


TWO_LANE = MapSpec(
    id="two-lane-straight",
    region_min=(-100.0, -15.0),
    region_max=(300.0, 15.0),
    lanes=(
        Lane(start=(-100.0, -1.75), end=(300.0, -1.75), width=3.5),
        Lane(start=(300.0, 1.75), end=(-100.0, 1.75), width=3.5),
    ),
    sidewalk_margin=3.0,
)

MAPS: dict[str, MapSpec] = {TWO_LANE.id: TWO_LANE}


def get_map(map_id: str) -> MapSpec:
    try:
        return MAPS[map_id]
    except KeyError:
        raise KeyError(f"unknown map {map_id!r}") from None


@dataclass(frozen=True)
class Scenario:
    """Initial configuration of a round. Obstacles are kept sorted by id."""

    mapId: str = TWO_LANE.id
    ego: EgoSpec = field(default_factory=EgoSpec)
    obstacles: tuple[ObstacleSpec, ...] = ()
    rngSeed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "obstacles", tuple(sorted(self.obstacles, key=lambda o: o.id)))
        object.__setattr__(self, "rngSeed", int(self.rngSeed))

    def obstacle(self, obstacle_id: int) -> ObstacleSpec:
        for obs in self.obstacles:
            if obs.id == obstacle_id:
                return obs
        raise KeyError(obstacle_id)

    def next_obstacle_id(self) -> int:
        return max((o.id for o in self.obstacles), default=0) + 1

    def with_obstacles(self, obstacles: Iterable[ObstacleSpec], **changes: Any) -> "Scenario":
        return replace(self, obstacles=tuple(obstacles), **changes)


@dataclass(frozen=True)
class Violation:
    rule: str
    ids: tuple[int, ...] = ()
    detail: str = ""

    def __str__(self) -> str:
        ids = ",".join(str(i) for i in self.ids)
        return f"{self.rule}({ids})" + (f": {self.detail}" if self.detail else "")


def validate(scenario: Scenario) -> list[Violation]:
    violations: list[Violation] = []
    obstacles = scenario.obstacles
    if len(obstacles) > MAX_OBSTACLES:
        violations.append(Violation("count-exceeded", (), f"{len(obstacles)} > {MAX_OBSTACLES}"))

    seen: set[int] = set()
    for obs in obstacles:
        if obs.id in seen:
            violations.append(Violation("duplicate-id", (obs.id,)))
        seen.add(obs.id)
        if obs.id < 0 or obs.id >= PHANTOM_ID_BASE:
            violations.append(Violation("id-range", (obs.id,)))
        if not obs.speed >= 0.0:
            violations.append(Violation("negative-speed", (obs.id,)))
        if not (obs.footprint[0] > 0.0 and obs.footprint[1] > 0.0):
            violations.append(Violation("bad-footprint", (obs.id,)))

    ego = scenario.ego
    if not ego.speed >= 0.0:
        violations.append(Violation("negative-speed", (), "ego"))
    if not (ego.footprint[0] > 0.0 and ego.footprint[1] > 0.0):
        violations.append(Violation("bad-footprint", (), "ego"))

    world = MAPS.get(scenario.mapId)
    if world is None:
        violations.append(Violation("unknown-map", (), scenario.mapId))
    else:
        for obs in obstacles:
            if not world.contains(obs.position):
                violations.append(Violation("out-of-region", (obs.id,)))
        if not world.contains(ego.position):
            violations.append(Violation("out-of-region", (), "ego"))

    for i, a in enumerate(obstacles):
        if rects_overlap(a.position, a.footprint, ego.position, ego.footprint):
            violations.append(Violation("overlap-ego", (a.id,)))
        for b in obstacles[i + 1:]:
            if rects_overlap(a.position, a.footprint, b.position, b.footprint):
                violations.append(Violation("overlap", (a.id, b.id)))
    return violations


# --- file format -----------------------------------------------------------

class ScenarioParseError(ValueError):
    """Malformed scenario document. ``line`` is set for syntax errors, ``field`` for schema errors."""

    def __init__(self, message: str, *, line: Optional[int] = None, field: Optional[str] = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


def _vec_out(v: Vec2) -> list[float]:
    return [float(v[0]), float(v[1])]


def obstacle_to_dict(obs: ObstacleSpec) -> dict[str, Any]:
    return {
        "id": obs.id,
        "category": obs.category.value,
        "prototype": obs.prototype,
        "position": _vec_out(obs.position),
        "heading": obs.heading,
        "speed": obs.speed,
        "footprint": _vec_out(obs.footprint),
        "target": None if obs.target is None else _vec_out(obs.target),
    }


def scenario_to_dict(scenario: Scenario) -> dict[str, Any]:
    ego = scenario.ego
    return {
        "mapId": scenario.mapId,
        "rngSeed": scenario.rngSeed,
        "ego": {
            "position": _vec_out(ego.position),
            "heading": ego.heading,
            "speed": ego.speed,
            "destination": _vec_out(ego.destination),
            "footprint": _vec_out(ego.footprint),
        },
        "obstacles": [obstacle_to_dict(o) for o in sorted(scenario.obstacles, key=lambda o: o.id)],
    }


def save_scenario(scenario: Scenario) -> bytes:
    return (json.dumps(scenario_to_dict(scenario), indent=2) + "\n").encode("utf-8")


class _Reader:
    """Typed access into a decoded document with field-path diagnostics."""

    def __init__(self, data: Any, path: str = ""):
        self.data = data
        self.path = path

    def _child_path(self, key: Any) -> str:
        if isinstance(key, int):
            return f"{self.path}[{key}]"
        return f"{self.path}.{key}" if self.path else str(key)

    def get(self, key: str, optional: bool = False) -> "_Reader":
        if not isinstance(self.data, dict):
            raise ScenarioParseError("expected an object", field=self.path or "<root>")
        if key not in self.data:
            if optional:
                return _Reader(None, self._child_path(key))
            raise ScenarioParseError("missing field", field=self._child_path(key))
        return _Reader(self.data[key], self._child_path(key))

    def items(self) -> list["_Reader"]:
        if not isinstance(self.data, list):
            raise ScenarioParseError("expected a list", field=self.path)
        return [_Reader(v, self._child_path(i)) for i, v in enumerate(self.data)]

    def number(self) -> float:
        if isinstance(self.data, bool) or not isinstance(self.data, (int, float)):
            raise ScenarioParseError("expected a number", field=self.path)
        return float(self.data)

    def integer(self) -> int:
        if isinstance(self.data, bool) or not isinstance(self.data, int):
            raise ScenarioParseError("expected an integer", field=self.path)
        return self.data

    def string(self) -> str:
        if not isinstance(self.data, str):
            raise ScenarioParseError("expected a string", field=self.path)
        return self.data

    def vec(self) -> Vec2:
        items = self.items()
        if len(items) != 2:
            raise ScenarioParseError("expected [x, y]", field=self.path)
        return (items[0].number(), items[1].number())


def _decode(data: bytes | str) -> Any:
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(exc.msg, line=exc.lineno) from exc


def obstacle_from_reader(r: _Reader) -> ObstacleSpec:
    category_r = r.get("category")
    try:
        category = Category(category_r.string())
    except ValueError:
        raise ScenarioParseError("unknown category", field=category_r.path) from None
    target_r = r.get("target", optional=True)
    return ObstacleSpec(
        id=r.get("id").integer(),
        category=category,
        prototype=r.get("prototype").string(),
        position=r.get("position").vec(),
        heading=r.get("heading").number(),
        speed=r.get("speed").number(),
        footprint=r.get("footprint").vec(),
        target=None if target_r.data is None else target_r.vec(),
    )


def load_scenario(data: bytes | str) -> Scenario:
    """Parse a scenario document. Does not validate; call :func:`validate` for that."""
    root = _Reader(_decode(data))
    ego_r = root.get("ego")
    ego = EgoSpec(
        position=ego_r.get("position").vec(),
        heading=ego_r.get("heading").number(),
        speed=ego_r.get("speed").number(),
        destination=ego_r.get("destination").vec(),
        footprint=ego_r.get("footprint").vec(),
    )
    obstacles = [obstacle_from_reader(o) for o in root.get("obstacles").items()]
    return Scenario(
        mapId=root.get("mapId").string(),
        ego=ego,
        obstacles=tuple(obstacles),
        rngSeed=root.get("rngSeed").integer(),
    )

