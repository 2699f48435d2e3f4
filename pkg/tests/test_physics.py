import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bouncebench.physics import (
    BallState,
    InsufficientBounces,
    InvalidInitialCondition,
    OutOfBoundsError,
    SimParams,
    SimulationFault,
    Simulator,
    Termination,
    Trajectory,
    Vec2,
    BounceEvent,
    energy,
    flat_ground_oracle,
    reflect_restitute,
    simulate,
    step,
    third_bounce_x,
)
from bouncebench.terrain import SurfaceSpec, sample_surface


@pytest.fixture(scope="module")
def flat():
    return sample_surface(SurfaceSpec.flat(), -1000, 1000, 0.05)


@pytest.fixture(scope="module")
def sine():
    return sample_surface(SurfaceSpec.sinusoid(1.0, 1.0), -1000, 1000, 0.05)


# reflect_restitute


@pytest.mark.parametrize(
    "v, e, expected",
    [((1, -1), 1.0, (1, 1)), ((1, -1), 0.9, (0.9, 0.9)), ((0, -3), 0.9, (0, 2.7))],
)
def test_reflect_restitute_examples(v, e, expected):
    out = reflect_restitute(v, (0.0, 1.0), e)
    assert out == pytest.approx(expected, abs=1e-15)


def test_reflect_rejects_bad_inputs():
    with pytest.raises(ValueError):
        reflect_restitute((1, -1), (0.0, 2.0), 0.9)
    with pytest.raises(ValueError):
        reflect_restitute((1, 1), (0.0, 1.0), 0.9)
    with pytest.raises(ValueError):
        reflect_restitute((1, 0), (0.0, 1.0), 0.9)


@given(
    st.floats(-50, 50),
    st.floats(-50, -0.01),
    st.floats(-math.pi / 3, math.pi / 3),
    st.floats(0, 1),
)
def test_reflect_scales_speed_by_e(vx, vy, angle, e):
    n = (-math.sin(angle), math.cos(angle))
    v = (vx, vy)
    if v[0] * n[0] + v[1] * n[1] >= 0:
        return
    out = reflect_restitute(v, n, e)
    assert math.hypot(*out) == pytest.approx(e * math.hypot(*v), rel=1e-12, abs=1e-12)


# step


def test_step_free_flight_kinematics(flat):
    state = BallState(Vec2(0.0, 10.0), Vec2(3.0, 0.0), 1.0)
    new, event = step(state, flat, SimParams())
    assert event is None
    assert new.vel.y == pytest.approx(-0.00981, abs=1e-15)
    assert new.vel.x == 3.0
    assert new.t == pytest.approx(1.001)


def test_step_crossing_flat_ground(flat):
    state = BallState(Vec2(0.0, 0.001), Vec2(1.0, -2.0), 0.0)
    new, event = step(state, flat, SimParams(), next_index=2)
    assert event is not None
    assert event.index == 2
    assert event.normal == pytest.approx((0.0, 1.0))
    assert new.pos.y == 0.0
    assert 0.0 < event.t < 0.001
    assert new.vel.y > 0


def test_step_is_deterministic(sine):
    state = BallState(Vec2(1.0, 1.2), Vec2(4.0, -7.0), 0.3)
    results = [step(state, sine) for _ in range(2)]
    assert results[0] == results[1]


def test_step_guards(flat):
    with pytest.raises(OutOfBoundsError):
        step(BallState(Vec2(2000.0, 1.0), Vec2(0.0, 0.0)), flat)
    with pytest.raises(SimulationFault):
        step(BallState(Vec2(0.0, float("nan")), Vec2(0.0, 0.0)), flat)


def test_stepping_reproduces_simulate(sine):
    params = SimParams()
    state = BallState(Vec2(0.0, 4.0), Vec2(6.0, 0.0), 0.0)
    events = []
    while len(events) < 3:
        state, ev = step(state, sine, params, next_index=len(events) + 1)
        if ev:
            events.append(ev)
    traj = simulate(4.0, 6.0, sine, params)
    for a, b in zip(events, traj.bounces):
        assert a.pos.x == pytest.approx(b.pos.x, abs=1e-6)
        assert a.t == pytest.approx(b.t, abs=1e-9)


# simulate


def test_simulate_vertical_drop(flat):
    traj = simulate(5.0, 0.0, flat)
    assert traj.terminated_by is Termination.BOUNCE_LIMIT
    assert [b.pos.x for b in traj.bounces] == [0.0, 0.0, 0.0]


def test_simulate_matches_closed_form(flat):
    expected = flat_ground_oracle(5.0, 10.0, 0.9, 9.81, 3)
    assert expected == pytest.approx(39.70, abs=0.005)
    assert third_bounce_x(simulate(5.0, 10.0, flat)) == pytest.approx(expected, abs=0.05)
    xs = simulate(5.0, 10.0, flat).bounce_xs()
    for n, x in enumerate(xs, start=1):
        assert x == pytest.approx(flat_ground_oracle(5.0, 10.0, n=n), abs=1e-3)


def test_simulate_leaves_short_terrain():
    short = sample_surface(SurfaceSpec.flat(), 0.0, 20.0, 0.05)
    traj = simulate(5.0, 10.0, short)
    assert traj.terminated_by is Termination.OUT_OF_BOUNDS
    assert len(traj.bounces) < 3
    with pytest.raises(InsufficientBounces) as info:
        third_bounce_x(traj)
    assert info.value.terminated_by is Termination.OUT_OF_BOUNDS


def test_simulate_time_limit(flat):
    traj = simulate(5.0, 1.0, flat, SimParams(max_time=0.5))
    assert traj.terminated_by is Termination.TIME_LIMIT
    assert traj.bounces == []
    assert traj.final_state.t == pytest.approx(0.5)


def test_simulate_rejects_bad_start(flat):
    with pytest.raises(InvalidInitialCondition):
        simulate(0.0, 5.0, flat)
    with pytest.raises(InvalidInitialCondition):
        simulate(-1.0, 5.0, flat)


def test_simulate_deterministic(sine):
    a = simulate(3.3, 11.1, sine, record=True)
    b = simulate(3.3, 11.1, sine, record=True)
    assert a == b


def test_more_bounces_and_low_energy_stop(flat):
    traj = simulate(1.0, 1.0, flat, SimParams(max_bounces=1000, restitution=0.5))
    assert traj.terminated_by is Termination.TIME_LIMIT
    assert 3 < len(traj.bounces) < 1000
    # the next hop would be shorter than one step
    assert 2 * traj.bounces[-1].vel_after.y / 9.81 < 1e-3
    assert type(traj.bounces[-1].vel_after.y) is float


# third_bounce_x


def _event(i, x):
    return BounceEvent(i, float(i), Vec2(x, 0.0), Vec2(1.0, -1.0), Vec2(0.9, 0.9), Vec2(0.0, 1.0))


def test_third_bounce_selection():
    state = BallState(Vec2(0.0, 0.0), Vec2(0.0, 0.0))
    traj = Trajectory([_event(1, 10.1), _event(2, 26.4), _event(3, 39.7)], state, Termination.BOUNCE_LIMIT)
    assert third_bounce_x(traj) == 39.7
    short = Trajectory([_event(1, 10.1), _event(2, 26.4)], state, Termination.TIME_LIMIT)
    with pytest.raises(InsufficientBounces):
        third_bounce_x(short)
    longer = Trajectory([_event(i, 10.0 * i) for i in range(1, 6)], state, Termination.BOUNCE_LIMIT)
    assert third_bounce_x(longer) == 30.0


# flat_ground_oracle


def test_oracle_values():
    assert flat_ground_oracle(5, 10, 1.0, 9.81, 3) == pytest.approx(10 * math.sqrt(10 / 9.81) * 5)
    assert flat_ground_oracle(5, 10, 1.0, 9.81, 3) == pytest.approx(50.48, abs=0.005)
    assert flat_ground_oracle(5, 10, 0.0, 9.81, 1) == pytest.approx(10 * math.sqrt(10 / 9.81))
    assert flat_ground_oracle(5, 12.594, 0.9, 9.81, 3) == pytest.approx(50.0, abs=0.01)


def test_oracle_inverse_cross_checked_by_simulation(flat):
    assert third_bounce_x(simulate(5.0, 12.594, flat)) == pytest.approx(50.0, abs=0.05)


# energy


def test_energy_examples():
    assert energy(BallState(Vec2(0, 5), Vec2(0, 0))) == pytest.approx(49.05)
    assert energy(BallState(Vec2(0, 0), Vec2(3, 4))) == pytest.approx(12.5)


def _flights(traj):
    """Group recorded samples into free-flight segments between bounces."""
    times = [b.t for b in traj.bounces]
    out, cur = [], []
    for s in traj.samples:
        if any(abs(s.t - t) < 1e-12 for t in times):
            if cur:
                out.append(cur)
            cur = [s]
        else:
            cur.append(s)
    out.append(cur)
    return out


@pytest.mark.parametrize("h, v, surface", [(5, 10, "flat"), (1, 0.5, "flat"), (3, 7, "sine")])
def test_energy_conserved_in_flight(flat, sine, h, v, surface):
    terrain = flat if surface == "flat" else sine
    params = SimParams()
    traj = simulate(h, v, terrain, params, record=True)
    for flight in _flights(traj):
        e0 = energy(flight[0], params)
        duration = max(flight[-1].t - flight[0].t, 1e-3)
        drift = max(abs(energy(s, params) - e0) for s in flight) / abs(e0)
        assert drift / duration <= 1e-3


@pytest.mark.parametrize("surface", ["flat", "sine"])
def test_bounce_restitution_invariants(flat, sine, surface):
    terrain = flat if surface == "flat" else sine
    traj = simulate(4.0, 9.0, terrain, SimParams(max_bounces=6))
    prev = -1.0
    for b in traj.bounces:
        before, after = math.hypot(*b.vel_before), math.hypot(*b.vel_after)
        assert after == pytest.approx(0.9 * before, rel=1e-9)
        assert (after / before) ** 2 == pytest.approx(0.81, rel=1e-9)
        assert math.hypot(*b.normal) == pytest.approx(1.0, abs=1e-9)
        assert b.normal[1] > 0
        assert b.t > prev
        prev = b.t


def test_elastic_apex_heights_repeat(flat):
    traj = simulate(5.0, 3.0, flat, SimParams(restitution=1.0, max_bounces=4), record=True)
    apexes = []
    for flight in _flights(traj)[1:4]:
        apexes.append(max(s.pos.y for s in flight))
    assert len(apexes) == 3
    assert max(apexes) / min(apexes) - 1 <= 0.01
    assert apexes[0] == pytest.approx(5.0, rel=0.01)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.5, 15), st.floats(0, 25))
def test_simulate_pure_function(h, v):
    sim = Simulator.for_surface(SurfaceSpec.blend(0.7))
    assert sim(h, v) == sim(h, v)


def test_exports(tmp_path, flat):
    traj = simulate(5.0, 10.0, flat, record=True)
    path = tmp_path / "traj.csv"
    traj.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,x,y,vx,vy,event_flag"
    assert sum(1 for line in lines[1:] if line.endswith(",1")) == 3
    events = json.loads(traj.bounces_json())
    assert [e["index"] for e in events] == [1, 2, 3]
    assert events[2]["pos"][0] == pytest.approx(39.70, abs=0.01)


def test_ball_radius_lifts_contact(flat):
    traj = simulate(5.0, 10.0, flat, SimParams(ball_radius=0.1))
    assert traj.bounces[0].pos.y == pytest.approx(0.1)
    assert third_bounce_x(traj) == pytest.approx(flat_ground_oracle(4.9, 10.0), abs=1e-3)


def test_radius_requires_clearance(flat):
    with pytest.raises(InvalidInitialCondition):
        simulate(0.05, 1.0, flat, SimParams(ball_radius=0.1))


def test_params_validation():
    with pytest.raises(ValueError):
        SimParams(restitution=1.5)
    with pytest.raises(ValueError):
        SimParams(dt=0)
    with pytest.raises(ValueError):
        SimParams(max_bounces=0)
    with pytest.raises(ValueError):
        SimParams(max_time=0)
