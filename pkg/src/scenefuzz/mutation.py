"""The six scene mutation operators and their parameter sampling."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .scenario import (
    DETECTION_RANGE,
    MAX_OBSTACLES,
    TWO_PI,
    Category,
    ObstacleSpec,
    Scenario,
    Vec2,
    get_map,
    normalize_angle,
    prototypes_for,
    validate,
)

MIN_ADD_RADIUS = 2.0
MAX_PLACEMENT_TRIES = 100
MAX_SPEED = {Category.VEHICLE: 15.0, Category.PEDESTRIAN: 3.0, Category.ANIMAL: 3.0}

DIRECTIONS: dict[str, Vec2] = {
    "north": (0.0, 1.0),
    "south": (0.0, -1.0),
    "east": (1.0, 0.0),
    "west": (-1.0, 0.0),
}


class OpKind(str, enum.Enum):
    ADD = "Add"
    REMOVE = "Remove"
    SWAP = "Swap"
    MOVE = "Move"
    MODIFY_VELOCITY = "ModifyVelocity"
    ROTATE = "Rotate"


class MutationError(Exception):
    pass


class PlacementExhausted(MutationError):
    pass


class InapplicableMutation(MutationError):
    pass


@dataclass(frozen=True)
class MutationOp:
    """One operator with its parameters.

    Which fields are used depends on ``kind``: Add uses ``obstacle``; Swap uses
    ``target`` and ``other``; Move uses ``target`` and ``direction``;
    ModifyVelocity uses ``target`` and ``speed``; Remove and Rotate use ``target``.
    ``child_seed`` becomes the child's ``rngSeed``.
    """

    kind: OpKind
    child_seed: int
    target: Optional[int] = None
    other: Optional[int] = None
    direction: Optional[str] = None
    speed: Optional[float] = None
    obstacle: Optional[ObstacleSpec] = None

    def describe(self) -> str:
        if self.kind is OpKind.ADD:
            o = self.obstacle
            assert o is not None
            return f"Add({o.id}:{o.prototype}@{o.position[0]:.2f},{o.position[1]:.2f})"
        if self.kind is OpKind.SWAP:
            return f"Swap({self.target},{self.other})"
        if self.kind is OpKind.MOVE:
            return f"Move({self.target},{self.direction})"
        if self.kind is OpKind.MODIFY_VELOCITY:
            return f"ModifyVelocity({self.target},{self.speed:.3f})"
        return f"{self.kind.value}({self.target})"


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed & 0xFFFF_FFFF_FFFF_FFFF)


def applicable_kinds(parent: Scenario) -> list[OpKind]:
    n = len(parent.obstacles)
    kinds = []
    if n < MAX_OBSTACLES:
        kinds.append(OpKind.ADD)
    if n >= 1:
        kinds += [OpKind.REMOVE, OpKind.MOVE, OpKind.MODIFY_VELOCITY, OpKind.ROTATE]
    if n >= 2:
        kinds.append(OpKind.SWAP)
    # canonical order so a seeded draw is stable
    return [k for k in OpKind if k in kinds]


def sample_obstacle(rng: np.random.Generator, scenario: Scenario, obstacle_id: int,
                    radius: float = DETECTION_RANGE) -> ObstacleSpec:
    """A random obstacle at a random position in the detection annulus of the ego."""
    world = get_map(scenario.mapId)
    ego = scenario.ego
    for _ in range(MAX_PLACEMENT_TRIES):
        category = list(Category)[int(rng.integers(len(Category)))]
        names = prototypes_for(category)
        prototype = names[int(rng.integers(len(names)))]
        # uniform over the annulus area
        r = math.sqrt(rng.uniform(MIN_ADD_RADIUS ** 2, radius ** 2))
        theta = rng.uniform(0.0, TWO_PI)
        position = (ego.position[0] + r * math.cos(theta), ego.position[1] + r * math.sin(theta))
        heading = rng.uniform(0.0, TWO_PI)
        speed = rng.uniform(0.0, MAX_SPEED[category])
        obstacle = ObstacleSpec.from_prototype(obstacle_id, prototype, position,
                                               heading=heading, speed=speed)
        if not world.contains(position):
            continue
        if not validate(scenario.with_obstacles(scenario.obstacles + (obstacle,))):
            return obstacle
    raise PlacementExhausted(f"no valid placement for a new obstacle after {MAX_PLACEMENT_TRIES} tries")


def _pick(rng: np.random.Generator, scenario: Scenario) -> ObstacleSpec:
    return scenario.obstacles[int(rng.integers(len(scenario.obstacles)))]


def sample_operator(rng: np.random.Generator, parent: Scenario) -> MutationOp:
    """Pick an applicable operator uniformly, then its parameters.

    Placements that would leave the child invalid are resampled up to
    ``MAX_PLACEMENT_TRIES`` times before raising :class:`PlacementExhausted`.
    """
    kinds = applicable_kinds(parent)
    if not kinds:
        raise InapplicableMutation("no operator applies to this scenario")
    kind = kinds[int(rng.integers(len(kinds)))]
    child_seed = int(rng.integers(0, 2 ** 63))

    if kind is OpKind.ADD:
        obstacle = sample_obstacle(rng, parent, parent.next_obstacle_id())
        return MutationOp(kind, child_seed, obstacle=obstacle)
    if kind is OpKind.REMOVE:
        return MutationOp(kind, child_seed, target=_pick(rng, parent).id)
    if kind is OpKind.ROTATE:
        return MutationOp(kind, child_seed, target=_pick(rng, parent).id)
    if kind is OpKind.MODIFY_VELOCITY:
        obs = _pick(rng, parent)
        speed = float(rng.uniform(0.0, MAX_SPEED[obs.category]))
        return MutationOp(kind, child_seed, target=obs.id, speed=speed)

    moved = _pick(rng, parent).id if kind is OpKind.MOVE else None
    for _ in range(MAX_PLACEMENT_TRIES):
        if kind is OpKind.MOVE:
            names = list(DIRECTIONS)
            op = MutationOp(kind, child_seed, target=moved,
                            direction=names[int(rng.integers(len(names)))])
        else:
            i, j = rng.choice(len(parent.obstacles), size=2, replace=False)
            op = MutationOp(kind, child_seed, target=parent.obstacles[int(i)].id,
                            other=parent.obstacles[int(j)].id)
        if not validate(_mutate(parent, op)):
            return op
    raise PlacementExhausted(f"{kind.value}: no valid placement after {MAX_PLACEMENT_TRIES} tries")


def _mutate(parent: Scenario, op: MutationOp) -> Scenario:
    obstacles = list(parent.obstacles)
    index = {o.id: i for i, o in enumerate(obstacles)}

    def at(obstacle_id: Optional[int]) -> int:
        if obstacle_id not in index:
            raise InapplicableMutation(f"{op.kind.value}: no obstacle {obstacle_id}")
        return index[obstacle_id]

    if op.kind is OpKind.ADD:
        if op.obstacle is None:
            raise InapplicableMutation("Add without an obstacle")
        if op.obstacle.id in index:
            raise InapplicableMutation(f"Add: id {op.obstacle.id} already present")
        obstacles.append(op.obstacle)
    elif op.kind is OpKind.REMOVE:
        del obstacles[at(op.target)]
    elif op.kind is OpKind.SWAP:
        i, j = at(op.target), at(op.other)
        if i == j:
            raise InapplicableMutation("Swap needs two distinct obstacles")
        a, b = obstacles[i], obstacles[j]
        obstacles[i] = replace(a, position=b.position)
        obstacles[j] = replace(b, position=a.position)
    elif op.kind is OpKind.MOVE:
        i = at(op.target)
        dx, dy = DIRECTIONS[op.direction or ""]
        x, y = obstacles[i].position
        obstacles[i] = replace(obstacles[i], position=(x + dx, y + dy))
    elif op.kind is OpKind.MODIFY_VELOCITY:
        i = at(op.target)
        if op.speed is None or op.speed < 0.0:
            raise InapplicableMutation("ModifyVelocity needs a speed >= 0")
        obstacles[i] = replace(obstacles[i], speed=float(op.speed))
    elif op.kind is OpKind.ROTATE:
        i = at(op.target)
        obstacles[i] = replace(obstacles[i], heading=normalize_angle(obstacles[i].heading - math.pi / 2.0))
    else:  # pragma: no cover
        raise InapplicableMutation(f"unknown operator {op.kind}")
    return parent.with_obstacles(obstacles, rngSeed=op.child_seed)


def apply_mutation(parent: Scenario, op: MutationOp) -> Scenario:
    child = _mutate(parent, op)
    problems = validate(child)
    if problems:
        raise PlacementExhausted(f"{op.describe()} yields an invalid scene: "
                                 + "; ".join(str(p) for p in problems))
    return child


def mutate(parent: Scenario, rng: np.random.Generator) -> tuple[Scenario, MutationOp]:
    op = sample_operator(rng, parent)
    return apply_mutation(parent, op), op


def initial_seeds(count: int, seed: int, base: Optional[Scenario] = None) -> list[Scenario]:
    """``count`` distinct one-obstacle scenes, each obstacle inside the detection range."""
    base = base or Scenario()
    rng = make_rng(seed)
    seeds = []
    for _ in range(count):
        obstacle = sample_obstacle(rng, base.with_obstacles(()), 1)
        seeds.append(base.with_obstacles((obstacle,), rngSeed=int(rng.integers(0, 2 ** 63))))
    return seeds
