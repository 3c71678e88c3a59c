from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenefuzz.fuzzing import run_round
from scenefuzz.outcome import OutcomeError, Verdict, classify
from scenefuzz.perception import SensorProfile
from scenefuzz.scenario import PROTOTYPES, Category, validate
from scenefuzz.simulator import EventKind, SimConfig

from conftest import blind_to, obstacle, scene, stack

LONG = SimConfig(duration=45.0)


def phantom_ahead(distance=9.0):
    return SensorProfile(base=0.0, distance_slope=0.0, noise=0.0, phantom_rate=1.0,
                         phantom_ahead=(distance, distance), phantom_lateral=0.0)


def collision_fixture():
    animal_blind = blind_to(Category.ANIMAL)
    return run_round(scene(obstacle(1, (30.0, -1.75), "deer")), stack(animal_blind, animal_blind), LONG)


def stop_fixture():
    return run_round(scene(), stack(phantom_ahead(), SensorProfile.perfect()), LONG)


def late_detection_fixture():
    short_sighted = replace(SensorProfile.perfect(), max_range=14.0)
    walker = obstacle(1, (25.0, -1.75), speed=1.0, target=(250.0, -1.75))
    return run_round(scene(walker), stack(short_sighted, short_sighted), LONG)


def test_animal_blind_stack_hits_the_deer():
    r = collision_fixture()
    out = classify(r.trace, r.reports)
    assert out.verdict is Verdict.COLLISION
    (event,) = [e for e in r.trace.events if e.kind is EventKind.COLLISION]
    assert "obstacle 1" in out.evidence[0].description
    assert out.evidence[0].frames == (event.frame,)
    c = out.contributingPerception
    assert c.obstacleId == 1 and c.perceptionRate == 0
    assert c.windowStart == pytest.approx(max(0.0, event.timestamp - 4.0))
    # every in-window frame that held the deer is cited as a miss
    assert all(1 in r.reports[k].unmatchedGt for k in out.evidence[1].frames)


def test_phantom_in_corridor_causes_unnecessary_stop():
    r = stop_fixture()
    out = classify(r.trace, r.reports)
    assert out.verdict is Verdict.UNNECESSARY_STOP
    (evidence,) = out.evidence
    assert evidence.frames
    for k in evidence.frames:
        state = r.trace.egoStates[k]
        assert state.brakeFlag and state.brakeCause in r.reports[k].unmatchedDet
    assert not r.trace.collided and not r.trace.arrived


def test_late_detection_of_a_walker_misses_the_destination():
    r = late_detection_fixture()
    out = classify(r.trace, r.reports)
    assert out.verdict is Verdict.WRONG_DESTINATION
    assert not r.trace.collided and not r.trace.arrived
    assert r.trace.duration == 45.0
    assert "from destination" in out.evidence[0].description
    assert out.evidence[0].frames == (len(r.trace.gtFrames) - 1,)
    brakes = [e for e in out.evidence if "brake episodes" in e.description]
    assert brakes and all(r.trace.egoStates[k].brakeFlag for k in brakes[0].frames)


def test_collision_outranks_unnecessary_stop():
    # the ego brakes for a phantom and a fast car behind it does not stop
    lidar = phantom_ahead()
    tailgater = obstacle(1, (-30.0, -1.75), "sedan", speed=15.0, target=(250.0, -1.75))
    r = run_round(scene(tailgater), stack(lidar, SensorProfile.blind()), LONG)
    assert r.trace.collided
    assert any(s.brakeFlag and s.brakeCause in rep.unmatchedDet for s, rep in zip(r.trace.egoStates, r.reports))
    assert classify(r.trace, r.reports).verdict is Verdict.COLLISION


def test_missing_reports_are_an_error():
    r = stop_fixture()
    with pytest.raises(OutcomeError):
        classify(r.trace, None)
    with pytest.raises(OutcomeError):
        classify(r.trace, r.reports[:-1])


def test_classification_is_deterministic():
    a, b = late_detection_fixture(), late_detection_fixture()
    assert classify(a.trace, a.reports) == classify(b.trace, b.reports)


off_path = st.tuples(
    st.floats(-50.0, 150.0),
    st.one_of(st.floats(5.0, 14.0), st.floats(-14.0, -8.0)),
    st.sampled_from(sorted(PROTOTYPES)),
)


@settings(max_examples=15, deadline=None)
@given(st.lists(off_path, max_size=4), st.integers(0, 1000))
def test_perfect_detector_off_path_is_nominal(placements, seed):
    obstacles = []
    for x, y, proto in placements:
        candidate = obstacle(len(obstacles) + 1, (round(x, 1), round(y, 1)), proto)
        trial = scene(*obstacles, candidate, seed=seed)
        if not validate(trial):
            obstacles.append(candidate)
    r = run_round(scene(*obstacles, seed=seed), stack(), LONG)
    out = classify(r.trace, r.reports)
    assert out.verdict is Verdict.NOMINAL, out
