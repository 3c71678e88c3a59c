import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenefuzz.frames import Detection, DetectionFrame, Frame, GroundTruthObstacle, Sensor
from scenefuzz.perception import (
    DEFAULT_LIDAR,
    DetectorProfile,
    FusionError,
    FusionPolicy,
    NeuralTracker,
    SensorProfile,
    TrackerConfig,
    detect,
    fuse,
    load_profile,
    rasterize,
    save_profile,
    unit_hash,
)
from scenefuzz.scenario import PHANTOM_ID_BASE, Category, ScenarioParseError

EGO = (0.0, 0.0)


def gt(id, position, category=Category.PEDESTRIAN, footprint=(0.3, 0.3)):
    return GroundTruthObstacle(id, category, position, 0.0, 0.0, footprint)


def frame(*obstacles, index=0):
    return Frame(index, index / 10.0, tuple(obstacles))


def det(id, position, category=Category.PEDESTRIAN):
    return Detection(id, category, position, 0.0)


def dframe(sensor, *dets, index=0):
    return DetectionFrame(sensor, index / 10.0 + 0.02, tuple(dets), index)


def test_unit_hash_is_deterministic_and_in_range():
    a = unit_hash(3, 7, 11, Sensor.LIDAR, 0)
    assert a == unit_hash(3, 7, 11, Sensor.LIDAR, 0)
    assert 0.0 <= a < 1.0
    assert a != unit_hash(3, 7, 11, Sensor.CAMERA, 0)


def test_perfect_detector_mirrors_ground_truth():
    f = frame(gt(1, (10.0, 2.0)), gt(2, (40.0, -5.0), Category.VEHICLE, (2.4, 1.0)), index=4)
    out = detect(SensorProfile.perfect(), Sensor.LIDAR, f, EGO, 0.0, seed=9, latency=0.02)
    assert [(d.id, d.category, d.position) for d in out.detections] == [
        (o.id, o.category, o.position) for o in f.obstacles]
    assert out.sourceFrameIndex == 4
    assert out.timestamp > f.timestamp


def test_blind_detector_sees_nothing():
    f = frame(gt(1, (10.0, 2.0)), gt(2, (3.0, 0.0), Category.VEHICLE))
    for k in range(20):
        out = detect(SensorProfile.blind(), Sensor.CAMERA, Frame(k, k / 10, f.obstacles), EGO, 0.0, 1, 0.02)
        assert out.detections == ()


def test_probability_follows_the_configured_profile():
    assert math.isclose(DEFAULT_LIDAR.probability(40.0, Category.VEHICLE), 0.95 - 0.3 * 40 / 60)
    assert math.isclose(DEFAULT_LIDAR.probability(40.0, Category.ANIMAL), 0.95 - 0.2 - 0.3)
    assert DEFAULT_LIDAR.probability(61.0, Category.VEHICLE) == 0.0
    assert SensorProfile(base=0.2, distance_slope=1.0).probability(60.0, Category.VEHICLE) == 0.0


def test_animal_detected_less_often_than_vehicle_at_40m():
    animal = gt(1, (40.0, 0.0), Category.ANIMAL)
    vehicle = gt(2, (0.0, 40.0), Category.VEHICLE, (2.4, 1.0))
    profile = SensorProfile(**{**DEFAULT_LIDAR.__dict__, "phantom_rate": 0.0})
    counts = {1: 0, 2: 0}
    for seed in range(5):
        for k in range(50):
            out = detect(profile, Sensor.LIDAR, Frame(k, k / 10, (animal, vehicle)), EGO, 0.0, seed, 0.02)
            for d in out.detections:
                counts[d.id] += 1
    assert counts[1] < counts[2]
    # expected rates 0.45 vs 0.75 over 250 draws each
    assert abs(counts[1] / 250 - 0.45) < 0.1
    assert abs(counts[2] / 250 - 0.75) < 0.1


def test_noise_is_bounded():
    profile = SensorProfile(base=1.0, distance_slope=0.0, noise=0.2, phantom_rate=0.0)
    for k in range(50):
        out = detect(profile, Sensor.LIDAR, frame(gt(1, (10.0, 2.0)), index=k), EGO, 0.0, 5, 0.02)
        (d,) = out.detections
        assert abs(d.position[0] - 10.0) <= 0.2 and abs(d.position[1] - 2.0) <= 0.2


def test_phantoms_use_reserved_ids_ahead_of_the_ego():
    profile = SensorProfile(base=0.0, distance_slope=0.0, noise=0.0, phantom_rate=1.0)
    out = detect(profile, Sensor.CAMERA, frame(index=12), (5.0, 0.0), 0.0, 1, 0.02)
    (p,) = out.detections
    assert p.is_phantom and p.id == 2 * PHANTOM_ID_BASE + 12
    assert 10.0 <= p.position[0] <= 35.0 and abs(p.position[1]) <= 2.0


def test_fuse_with_empty_camera():
    a = det(1, (10.0, 0.0))
    out = fuse(dframe(Sensor.LIDAR, a), dframe(Sensor.CAMERA), FusionPolicy.UNION_DEDUP)
    assert out.detections == (a,) and out.sensor is Sensor.FUSION


def test_fuse_dedups_within_radius_and_keeps_lidar_position():
    lidar_a = det(1, (10.0, 0.0))
    camera_a = det(1, (10.4, 0.3))
    out = fuse(dframe(Sensor.LIDAR, lidar_a), dframe(Sensor.CAMERA, camera_a), FusionPolicy.UNION_DEDUP, 1.0)
    assert out.detections == (lidar_a,)


def test_fuse_keeps_distant_phantom():
    a = det(1, (10.0, 0.0))
    b = det(2 * PHANTOM_ID_BASE, (30.0, 1.0))
    out = fuse(dframe(Sensor.LIDAR, a), dframe(Sensor.CAMERA, b), FusionPolicy.UNION_DEDUP, 1.0)
    assert {d.id for d in out.detections} == {a.id, b.id}


def test_fuse_does_not_merge_across_categories():
    a = det(1, (10.0, 0.0), Category.PEDESTRIAN)
    b = det(2, (10.2, 0.0), Category.ANIMAL)
    out = fuse(dframe(Sensor.LIDAR, a), dframe(Sensor.CAMERA, b), FusionPolicy.UNION_DEDUP, 1.0)
    assert len(out.detections) == 2


def test_lidar_priority_falls_back_to_camera():
    a, b = det(1, (10.0, 0.0)), det(2, (20.0, 0.0))
    assert fuse(dframe(Sensor.LIDAR, a), dframe(Sensor.CAMERA, b), FusionPolicy.LIDAR_PRIORITY).detections == (a,)
    assert fuse(dframe(Sensor.LIDAR), dframe(Sensor.CAMERA, b), FusionPolicy.LIDAR_PRIORITY).detections == (b,)


def test_fuse_rejects_mismatched_frames():
    with pytest.raises(FusionError):
        fuse(dframe(Sensor.LIDAR, index=3), dframe(Sensor.CAMERA, index=4), FusionPolicy.UNION_DEDUP)


def test_zero_grid_with_zero_biases_activates_nothing():
    tracker = NeuralTracker(TrackerConfig(network_seed=3))
    tracker.network.zero_biases()
    _, active = tracker.forward_and_track(frame())
    assert active == frozenset()
    _, active = tracker.activations(np.zeros((16, 16)))
    assert active == frozenset()


def test_same_frame_twice_gives_same_activations():
    tracker = NeuralTracker()
    f = frame(gt(1, (10.0, 2.0)), gt(2, (-20.0, 5.0), Category.VEHICLE, (2.4, 1.0)))
    s1, a1 = tracker.forward_and_track(f)
    s2, a2 = tracker.forward_and_track(f)
    assert a1 == a2
    np.testing.assert_array_equal(s1, s2)
    assert s1.shape == (16, 16) and ((s1 > 0) & (s1 < 1)).all()


def test_round_activation_is_union_over_frames_and_monotone():
    tracker = NeuralTracker()
    tracker.begin_round()
    frames = [frame(gt(1, (x, 0.0), Category.VEHICLE, (2.4, 1.0)), index=i) for i, x in enumerate(range(-50, 55, 15))]
    union: set[int] = set()
    sizes = []
    for f in frames:
        _, active = tracker.forward_and_track(f)
        union |= active
        sizes.append(len(tracker.activated_this_round))
    assert tracker.activated_this_round == union
    assert sizes == sorted(sizes)
    ever_before = set(tracker.activated_ever)
    committed = tracker.commit_round()
    assert committed == frozenset(union)
    assert tracker.activated_ever >= ever_before | union


def test_activation_matches_a_direct_channel_mean():
    tracker = NeuralTracker()
    grid = rasterize(frame(gt(1, (10.0, 2.0), Category.VEHICLE, (2.4, 1.0))), EGO)
    layers, _ = tracker.network.forward(grid)
    expected = {i for i, m in enumerate(np.concatenate([layer.mean(axis=(0, 1)) for layer in layers])) if m > 0.1}
    assert tracker.activations(grid)[1] == frozenset(expected)


def test_rasterize_marks_category_intensity():
    grid = rasterize(frame(gt(1, (0.0, 0.0), Category.ANIMAL)), EGO)
    assert grid.max() == pytest.approx(0.7)
    assert rasterize(frame(gt(1, (500.0, 0.0))), EGO).sum() == 0.0


def test_profile_round_trip():
    profile = DetectorProfile(fusion_policy=FusionPolicy.LIDAR_PRIORITY,
                              lidar=SensorProfile(base=0.5, distance_slope=0.1, size_penalty={"animal": 0.4}),
                              tracker=TrackerConfig(network_seed=9, threshold=0.2))
    assert load_profile(save_profile(profile)) == profile
    assert load_profile(b"{}") == DetectorProfile()


def test_profile_rejects_unknown_keys():
    with pytest.raises(ScenarioParseError):
        load_profile(b'{"lidar": {"bse": 1.0}}')
    with pytest.raises(ScenarioParseError):
        load_profile(b'{"lidar": ')


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 40), st.integers(0, 500),
       st.lists(st.tuples(st.floats(-59, 59), st.floats(-15, 15)), max_size=6))
def test_detection_is_deterministic_and_sourced(seed, k, positions):
    f = Frame(k, k / 10, tuple(gt(i + 1, p) for i, p in enumerate(positions)))
    a = detect(DEFAULT_LIDAR, Sensor.LIDAR, f, EGO, 0.0, seed, 0.02)
    assert a == detect(DEFAULT_LIDAR, Sensor.LIDAR, f, EGO, 0.0, seed, 0.02)
    ids = {o.id for o in f.obstacles}
    assert all(d.is_phantom or d.id in ids for d in a.detections)
