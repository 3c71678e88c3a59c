import math
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenefuzz.mutation import (
    DETECTION_RANGE,
    MAX_SPEED,
    MIN_ADD_RADIUS,
    MutationOp,
    OpKind,
    PlacementExhausted,
    apply_mutation,
    initial_seeds,
    make_rng,
    mutate,
    sample_operator,
)
from scenefuzz.scenario import Scenario, validate

from conftest import obstacle, scene


def test_empty_parent_only_admits_add():
    for seed in range(20):
        assert sample_operator(make_rng(seed), Scenario()).kind is OpKind.ADD


def test_single_obstacle_never_swaps():
    parent = scene(obstacle(1, (20.0, 5.0)))
    kinds = Counter(sample_operator(make_rng(seed), parent).kind for seed in range(300))
    assert OpKind.SWAP not in kinds
    assert set(kinds) == {OpKind.ADD, OpKind.REMOVE, OpKind.MOVE, OpKind.MODIFY_VELOCITY, OpKind.ROTATE}


def test_full_scene_never_adds():
    parent = scene(*[obstacle(i, (10.0 + 3.0 * i, 8.0)) for i in range(1, 16)])
    kinds = {sample_operator(make_rng(seed), parent).kind for seed in range(200)}
    assert OpKind.ADD not in kinds
    assert OpKind.REMOVE in kinds


def test_sampling_is_deterministic():
    parent = scene(obstacle(1, (20.0, 5.0)), obstacle(2, (-20.0, 8.0), "sedan"))
    assert sample_operator(make_rng(42), parent) == sample_operator(make_rng(42), parent)


def test_rotate_is_clockwise_quarter_turn():
    parent = scene(obstacle(1, (20.0, 5.0), heading=0.0))
    child = apply_mutation(parent, MutationOp(OpKind.ROTATE, 7, target=1))
    assert math.isclose(child.obstacle(1).heading, 3 * math.pi / 2)
    assert child.rngSeed == 7


def test_swap_twice_restores_positions():
    parent = scene(obstacle(1, (20.0, 5.0)), obstacle(2, (-20.0, 8.0)))
    op = MutationOp(OpKind.SWAP, 0, target=1, other=2)
    once = apply_mutation(parent, op)
    assert once.obstacle(1).position == (-20.0, 8.0)
    assert once.obstacle(2).position == (20.0, 5.0)
    twice = apply_mutation(once, op)
    assert [o.position for o in twice.obstacles] == [o.position for o in parent.obstacles]


def test_move_east_by_one_meter():
    parent = scene(obstacle(1, (10.0, 5.0)))
    child = apply_mutation(parent, MutationOp(OpKind.MOVE, 0, target=1, direction="east"))
    assert child.obstacle(1).position == (11.0, 5.0)


def test_modify_velocity_accepts_zero():
    parent = scene(obstacle(1, (10.0, 5.0), speed=2.0))
    child = apply_mutation(parent, MutationOp(OpKind.MODIFY_VELOCITY, 0, target=1, speed=0.0))
    assert child.obstacle(1).speed == 0.0


def test_move_into_a_neighbour_is_rejected():
    parent = scene(obstacle(1, (10.0, 5.0)), obstacle(2, (11.0, 5.0)))
    with pytest.raises(PlacementExhausted):
        apply_mutation(parent, MutationOp(OpKind.MOVE, 0, target=1, direction="east"))


def test_move_out_of_region_retries_another_direction():
    # at the northern edge: north is never chosen
    parent = scene(obstacle(1, (10.0, 14.5)))
    for seed in range(200):
        op = sample_operator(make_rng(seed), parent)
        if op.kind is OpKind.MOVE:
            assert op.direction != "north"


def test_boxed_in_move_exhausts():
    # the only obstacle sits in a pocket where every direction overlaps a neighbour
    core = obstacle(1, (30.0, 8.0))
    ring = [obstacle(2, (31.0, 8.0)), obstacle(3, (29.0, 8.0)), obstacle(4, (30.0, 9.0)), obstacle(5, (30.0, 7.0))]
    parent = scene(core, *ring)
    exhausted = 0
    for seed in range(100):
        try:
            sample_operator(make_rng(seed), parent)
        except PlacementExhausted:
            exhausted += 1
    assert exhausted > 0


def test_added_obstacle_lies_in_the_detection_annulus():
    parent = scene(obstacle(1, (20.0, 5.0)))
    for seed in range(100):
        op = sample_operator(make_rng(seed), parent)
        if op.kind is OpKind.ADD:
            o = op.obstacle
            d = math.dist(o.position, parent.ego.position)
            assert MIN_ADD_RADIUS <= d <= DETECTION_RANGE
            assert 0.0 <= o.speed <= MAX_SPEED[o.category]
            assert o.id == 2


def test_initial_seeds_are_distinct_single_obstacle_scenes():
    seeds = initial_seeds(10, 0)
    assert len(seeds) == 10
    assert all(len(s.obstacles) == 1 and validate(s) == [] for s in seeds)
    assert len({s.obstacles[0].position for s in seeds}) == 10


@st.composite
def parents(draw):
    return initial_seeds(1, draw(st.integers(0, 10_000)))[0]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32), st.integers(0, 2 ** 32), st.integers(1, 12))
def test_mutation_chain_invariants(seed_a, seed_b, steps):
    parent = initial_seeds(1, seed_a)[0]
    rng = make_rng(seed_b)
    for _ in range(steps):
        try:
            child, op = mutate(parent, rng)
        except PlacementExhausted:
            continue
        assert validate(child) == []
        delta = len(child.obstacles) - len(parent.obstacles)
        assert delta == {OpKind.ADD: 1, OpKind.REMOVE: -1}.get(op.kind, 0)

        touched = {op.target, op.other} - {None}
        if op.kind is OpKind.ADD:
            touched = {op.obstacle.id}
        before = {o.id: o for o in parent.obstacles}
        after = {o.id: o for o in child.obstacles}
        for oid in set(before) & set(after) - touched:
            assert before[oid] == after[oid]
        for oid in touched & set(before) & set(after):
            changed = {f for f in ("position", "heading", "speed") if getattr(before[oid], f) != getattr(after[oid], f)}
            allowed = {OpKind.SWAP: {"position"}, OpKind.MOVE: {"position"},
                       OpKind.MODIFY_VELOCITY: {"speed"}, OpKind.ROTATE: {"heading"}}[op.kind]
            assert changed <= allowed
        parent = child


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32), st.integers(0, 2 ** 32))
def test_parent_and_seed_determine_child(seed_a, seed_b):
    parent = initial_seeds(1, seed_a)[0]
    try:
        a = mutate(parent, make_rng(seed_b))
    except PlacementExhausted:
        return
    assert mutate(parent, make_rng(seed_b)) == a
