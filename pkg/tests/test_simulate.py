import math

import numpy as np
import pandas as pd
import pytest

from qsdtools.errors import ConfigError
from qsdtools.estimate import mean_measure
from qsdtools.measures import tv_distance
from qsdtools.rng import RandomStream
from qsdtools.simulate import (ABSORPTION, REBIRTH, FlemingViotSystem, ParticleSystemState,
                               fv_run, fv_step, initial_positions, run_replicas, simulate_bd)


def test_single_path_is_consistent(linear):
    path = simulate_bd(linear, 3, 1000.0, RandomStream(11))
    assert path.absorbed
    assert path.events[-1].kind == ABSORPTION
    assert path.T0 == path.events[-1].time
    times = [e.time for e in path.events]
    assert times == sorted(times)
    for e in path.events:
        assert abs(e.target - e.origin) == 1


def test_single_path_is_deterministic(linear):
    a = simulate_bd(linear, 5, 10.0, RandomStream(2))
    b = simulate_bd(linear, 5, 10.0, RandomStream(2))
    assert a.events == b.events


def test_single_path_event_cap(logistic):
    path = simulate_bd(logistic, 2, 1e6, RandomStream(0), max_events=25)
    assert len(path.events) <= 25


def test_needs_two_particles(linear):
    with pytest.raises(ValueError, match="N >= 2"):
        FlemingViotSystem(linear, [1], RandomStream(0))


def test_rebirth_onto_other_particle(linear):
    system = FlemingViotSystem(linear, [1, 5], RandomStream(0))
    event = system.apply_move(0, up=False)
    assert event.kind == REBIRTH
    assert event.target == 5 and event.source == 1
    assert system.positions == [5, 5]
    assert system.rebirth_count == 1
    assert system.counts() == {5: 2}
    assert system.total_rate == pytest.approx(2 * 15.0)


def test_rebirth_on_same_state(linear):
    system = FlemingViotSystem(linear, [1, 1], RandomStream(0))
    event = system.apply_move(1, up=False)
    assert event.kind == REBIRTH and event.target == 1
    assert system.positions == [1, 1]


def test_total_rate_stays_in_sync(logistic):
    system = FlemingViotSystem(logistic, initial_positions(30), RandomStream(4))
    for _ in range(5000):
        system.step()
    assert min(system.positions) >= 1
    assert system.total_rate == pytest.approx(system._recompute_rate(), rel=1e-9)
    assert sum(system.counts().values()) == 30


def test_fv_step_is_pure(linear):
    state = ParticleSystemState((1, 2, 3), 0.0, 0, RandomStream(9))
    s1, e1 = fv_step(state, linear)
    s2, e2 = fv_step(state, linear)
    assert state.positions == (1, 2, 3) and state.time == 0.0
    assert s1.positions == s2.positions and e1 == e2
    assert s1.time > 0


def test_fv_run_is_deterministic(linear):
    a = fv_run(linear, initial_positions(10), 30.0, rng=RandomStream(1))
    b = fv_run(linear, initial_positions(10), 30.0, rng=RandomStream(1))
    pd.testing.assert_series_equal(a.occupation.weights, b.occupation.weights)
    assert a.event_count == b.event_count
    assert a.rebirth_count == b.rebirth_count


def test_fv_run_rejects_bad_burn_in(linear):
    with pytest.raises(ConfigError, match="t_burn"):
        fv_run(linear, initial_positions(4), 10.0, t_burn=10.0)


def test_snapshots_and_event_log(linear):
    res = fv_run(linear, initial_positions(8, 3), 5.0, observe=[4.0, 1.0, 2.5],
                 rng=RandomStream(3), record_events=True)
    assert [t for t, _ in res.snapshots] == [1.0, 2.5, 4.0]
    assert all(mu.total == pytest.approx(1.0) for _, mu in res.snapshots)
    assert len(res.events) == res.event_count
    assert all(e.target >= 1 for e in res.events)
    assert sum(e.kind == REBIRTH for e in res.events) == res.rebirth_count


def test_rebirth_rate_is_bounded(linear):
    N, t_max = 20, 50.0
    res = fv_run(linear, initial_positions(N), t_max, rng=RandomStream(8))
    bound = N * linear.d1
    assert res.rebirth_rate <= bound + 3 * math.sqrt(bound / t_max)


def test_stationarity_flag(linear):
    res = fv_run(linear, initial_positions(5), 10.0, rng=RandomStream(0), stationarity_tv=0.0)
    assert not res.stationary
    assert res.stationarity_tv > 0


def test_replicas_do_not_depend_on_jobs(linear):
    serial = run_replicas(linear, initial_positions(6), 10.0, 3, seed=5, jobs=1)
    parallel = run_replicas(linear, initial_positions(6), 10.0, 3, seed=5, jobs=2)
    for a, b in zip(serial, parallel):
        pd.testing.assert_series_equal(a.occupation.weights, b.occupation.weights)
    assert serial[0].event_count != serial[1].event_count or \
        not serial[0].occupation.weights.equals(serial[1].occupation.weights)


def test_replicas_need_a_count(linear):
    with pytest.raises(ConfigError):
        run_replicas(linear, initial_positions(2), 1.0, 0, seed=0)


def test_zero_horizon_gives_an_empty_path(linear):
    path = simulate_bd(linear, 3, 0.0, RandomStream(1))
    assert path.events == []
    assert not path.absorbed and path.T0 is None
    assert path.position == 3


def test_paths_from_one_are_absorbed_quickly(linear):
    rng = RandomStream(21)
    paths = [simulate_bd(linear, 1, 20.0, rng) for _ in range(500)]
    assert np.mean([p.absorbed for p in paths]) >= 0.99
    assert all(p.T0 <= 20.0 for p in paths if p.absorbed)


def test_holding_time_and_jump_direction(linear):
    rng = RandomStream(4)
    first = [simulate_bd(linear, 4, math.inf, rng, max_events=1).events[0] for _ in range(4000)]
    hold = np.array([e.time for e in first])
    # b_4 + d_4 = 4 + 8
    se = hold.std(ddof=1) / math.sqrt(len(hold))
    assert abs(hold.mean() - 1 / 12) < 3 * se
    up = np.mean([e.target == 5 for e in first])
    assert abs(up - 1 / 3) < 3 * math.sqrt((1 / 3) * (2 / 3) / len(first))


def test_fv_step_waiting_time_with_equal_positions(linear):
    positions = (3,) * 5
    state = ParticleSystemState(positions, 0.0, 0, RandomStream(13))
    waits = []
    for _ in range(3000):
        new, _ = fv_step(state, linear)
        waits.append(new.time - state.time)
        state = ParticleSystemState(positions, 0.0, 0, new.rng)
    waits = np.array(waits)
    # N (b_3 + d_3) = 5 * 9
    se = waits.std(ddof=1) / math.sqrt(len(waits))
    assert abs(waits.mean() - 1 / 45) < 3 * se


def test_particle_labels_are_exchangeable(linear):
    def mean_occupation(initial, seed):
        runs = run_replicas(linear, initial, 2.0, 600, seed=seed, t_burn=0.0, jobs=1)
        return mean_measure([r.occupation for r in runs])

    a = mean_occupation([1, 1, 5, 5], 31)
    b = mean_occupation([5, 1, 5, 1], 32)
    assert tv_distance(a, b) < 0.06
    # the starting configuration still shows at this horizon
    c = mean_occupation([1, 1, 1, 1], 33)
    assert tv_distance(a, c) > 0.1
