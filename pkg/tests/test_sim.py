import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fluidq.ctmc import two_state_model, uniformize
from fluidq.errors import InputFileError, ModelError, TraceFormatError
from fluidq.fluid import reliability, solve_stationary
from fluidq.sim import (battery_replay, mean_holding_time, read_trace_csv, sample_at_interval,
                        select_window, simulate_ctmc, simulate_dtmc, simulate_dtmc_replay,
                        simulate_lolp, trace_replay, write_trace_csv)

from helpers import models_with_drift


# -- background chain -----------------------------------------------------

def test_symmetric_occupancy():
    traj = simulate_ctmc([[-1, 1], [1, -1]], 1e6, seed=1)
    # each visit is Exp(1); the fraction in state 1 is a ratio of renewal sums
    visits = np.count_nonzero(traj.states == 1)
    sd = math.sqrt(2.0 / traj.states.size)  # two i.i.d. Exp(1) per cycle
    assert abs(traj.occupancy(2)[1] - 0.5) < 3 * sd
    assert visits > 0


def test_holding_times_are_exponential():
    q = np.array([[-2.0, 1.5, 0.5], [0.3, -0.6, 0.3], [1.0, 3.0, -4.0]])
    traj = simulate_ctmc(q, 2e5, seed=5)
    # the final interval is truncated, drop it
    for i in range(3):
        d = traj.durations[:-1][traj.states[:-1] == i]
        mean = 1.0 / -q[i, i]
        assert abs(d.mean() - mean) < 3 * mean / math.sqrt(d.size)


def test_trajectory_is_deterministic():
    q = [[-1, 1], [2, -2]]
    a = simulate_ctmc(q, 1e4, seed=9)
    b = simulate_ctmc(q, 1e4, seed=9)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.durations, b.durations)
    c = simulate_ctmc(q, 1e4, seed=10)
    assert not np.array_equal(a.states[:50], c.states[:50]) or \
        not np.array_equal(a.durations[:50], c.durations[:50])


def test_trajectory_covers_horizon_exactly():
    traj = simulate_ctmc([[-3, 3], [1, -1]], 123.5, seed=2, initial_state=1)
    assert traj.states[0] == 1
    assert traj.durations.sum() == pytest.approx(123.5, rel=1e-14)
    assert np.all(traj.durations > 0)


def test_ctmc_rejects_bad_input():
    with pytest.raises(ModelError):
        simulate_ctmc([[-1, 1], [1, -1]], 0.0, seed=1)
    with pytest.raises(ModelError):
        simulate_ctmc([[-1, 1], [1, -1]], 10.0, seed=1, initial_state=2)


def test_mean_holding_time():
    assert mean_holding_time([[-1, 1], [3, -3]]) == pytest.approx(1 / (0.75 * 1 + 0.25 * 3))


def test_sample_at_interval():
    traj = simulate_ctmc([[-1, 1], [1, -1]], 10.0, seed=3)
    s = sample_at_interval(traj, 0.5, 20)
    assert s[0] == traj.states[0] and s.size == 20
    with pytest.raises(ModelError):
        sample_at_interval(traj, 1.0, 20)


# -- exact battery replay ---------------------------------------------------

def test_constant_discharge_from_full():
    r, bmax, h = -2.0, 3.0, 10.0
    st_ = battery_replay([h], [r], bmax, b0=bmax, burn_in=0.0, n_batches=2)
    assert st_.empirical_lolp == pytest.approx((h - bmax / -r) / h, rel=1e-14)
    assert st_.empirical_llr == pytest.approx(2.0 * (h - 1.5) / h, rel=1e-14)
    assert st_.b_end == 0.0


def test_constant_charge_from_empty():
    r, bmax, h = 0.5, 2.0, 10.0
    st_ = battery_replay([h], [r], bmax, b0=0.0, burn_in=0.0, n_batches=2)
    assert st_.empirical_lolp == 0.0
    assert st_.empirical_overflow_prob == pytest.approx((h - bmax / r) / h, rel=1e-14)
    assert st_.empirical_overflow_rate == pytest.approx(r * (h - 4.0) / h, rel=1e-14)
    assert st_.b_end == bmax


def test_sawtooth_geometry():
    # alternate +2 and -1 for one time unit each with bmax = 0.5, start empty:
    # full after 0.25, empty after 0.5 of each discharge slot
    traj = simulate_dtmc([[0, 1], [1, 0]], 1.0, 2000.0, seed=0, initial_state=0)
    rates = np.array([2.0, -1.0])[traj.states]
    st_ = battery_replay(traj.durations, rates, 0.5, b0=0.0, burn_in=0.0)
    assert st_.empirical_lolp == pytest.approx(0.25, abs=1e-12)
    assert st_.empirical_overflow_prob == pytest.approx(0.375, abs=1e-12)
    assert st_.empirical_llr == pytest.approx(0.25, abs=1e-12)
    assert st_.empirical_overflow_rate == pytest.approx(0.75, abs=1e-12)
    assert st_.stderr_lolp == pytest.approx(0.0, abs=1e-12)


def test_replay_validation():
    with pytest.raises(ModelError):
        battery_replay([1.0], [1.0, 2.0], 1.0)
    with pytest.raises(ModelError):
        battery_replay([1.0], [1.0], 0.0)
    with pytest.raises(ModelError):
        battery_replay([1.0], [1.0], 1.0, b0=2.0)
    with pytest.raises(ModelError):
        battery_replay([1.0], [1.0], 1.0, burn_in=1.0)


@settings(max_examples=40)
@given(st.lists(st.tuples(st.floats(0.0, 5.0), st.floats(-3.0, 3.0)), min_size=25, max_size=200),
       st.floats(0.1, 10.0), st.floats(0.0, 1.0))
def test_path_conservation_is_exact(segments, bmax, frac):
    d, r = map(np.array, zip(*segments))
    if d.sum() == 0:
        return
    try:
        st_ = battery_replay(d, r, bmax, b0=frac * bmax, burn_in=0.0, n_batches=2)
    except ModelError:
        return
    scale = st_.abs_energy + bmax
    assert abs(st_.conservation_residual) <= 64 * np.finfo(float).eps * scale
    assert 0.0 <= st_.b_end <= bmax
    assert 0.0 <= st_.empirical_lolp <= 1.0


# -- against the solver -----------------------------------------------------

def test_two_state_matches_solver():
    m = two_state_model(1, 1, 3, 1)
    bmax = 2.0
    st_ = simulate_lolp(m, bmax, 2e5, seed=11)
    exact = reliability(solve_stationary(m, bmax)).lolp
    assert abs(st_.empirical_lolp - exact) < 3 * st_.stderr_lolp
    assert abs(st_.conservation_residual) < 1e-9 * st_.abs_energy


def test_simulation_stats_are_bitwise_deterministic():
    m = models_with_drift(1, 4, 1, sizes=(4,))[0]
    a = simulate_lolp(m, 1.0, 2e4, seed=3)
    b = simulate_lolp(m, 1.0, 2e4, seed=3)
    assert a.to_row() == b.to_row()
    assert np.array_equal(a.batch_lolp, b.batch_lolp)


def test_negative_drift_loss_rate_exceeds_deficit():
    m = two_state_model(1, 1, 1.5, 1)
    st_ = simulate_lolp(m, 1.0, 2e5, seed=8)
    drift = -0.25
    assert st_.empirical_llr >= -drift - 3 * st_.stderr_llr


def test_dtmc_uniformized_matches_ctmc():
    m = two_state_model(1, 1, 3, 1)
    # geometric holding in slots of 1/q approaches exponential as q grows
    u = uniformize(m.q_matrix, 50.0)
    bmax = 1.0
    st_ = simulate_dtmc_replay(u.p_matrix, 1.0 / u.q_rate, [0.0, 3.0], 1.0, bmax, 1e5, seed=4)
    exact = reliability(solve_stationary(m, bmax)).lolp
    assert st_.empirical_lolp == pytest.approx(exact, rel=0.05)


def test_dtmc_is_deterministic_and_validated():
    t = [[0.9, 0.1], [0.2, 0.8]]
    a = simulate_dtmc(t, 1.0, 500.0, seed=1)
    b = simulate_dtmc(t, 1.0, 500.0, seed=1)
    assert np.array_equal(a.states, b.states)
    with pytest.raises(ModelError):
        simulate_dtmc([[0.5, 0.6], [0.5, 0.5]], 1.0, 10.0, seed=1)


# -- traces ---------------------------------------------------------------

def test_constant_traces():
    assert trace_replay(np.full(1000, 5.0), 1.0, 3.0, 10.0).empirical_lolp == 0.0
    st_ = trace_replay(np.full(1000, 1.0), 1.0, 3.0, 10.0, b0=0.0)
    assert st_.empirical_lolp == 1.0
    with pytest.raises(ModelError):
        trace_replay(np.array([]), 1.0, 1.0, 1.0)
    with pytest.raises(ModelError):
        trace_replay(np.array([1.0, -1.0]), 1.0, 1.0, 1.0)


def test_trace_replay_equals_dtmc_replay():
    t = np.array([[0.7, 0.3, 0.0], [0.1, 0.6, 0.3], [0.2, 0.2, 0.6]])
    centers = np.array([0.0, 2.0, 5.0])
    traj = simulate_dtmc(t, 1.0, 4000.0, seed=6)
    via_trace = trace_replay(centers[traj.states], 1.0, 2.2, 3.0)
    direct = simulate_dtmc_replay(t, 1.0, centers, 2.2, 3.0, 4000.0, seed=6)
    assert via_trace.to_row() | {"seed": ""} == direct.to_row() | {"seed": ""}


def _write(tmp_path, text):
    p = tmp_path / "trace.csv"
    p.write_text(text)
    return p


def test_read_trace_round_trip(tmp_path):
    ts = np.datetime64("2024-03-01T00:00:00") + np.arange(5) * np.timedelta64(300, "s")
    p = tmp_path / "t.csv"
    write_trace_csv(p, ts, [1.0, 2.5, 0.0, 3.0, 1.0 / 3])
    tr = read_trace_csv(p)
    assert tr.interval == 300.0 and len(tr) == 5
    assert tr.values[-1] == 1.0 / 3


def test_read_trace_reports_gaps(tmp_path):
    p = _write(tmp_path, "timestamp,power\n2024-01-01T00:00:00,1\n2024-01-01T00:05:00,2\n"
                         "2024-01-01T00:15:00,3\n2024-01-01T00:20:00,4\n")
    with pytest.raises(TraceFormatError, match=r"\[4\]"):
        read_trace_csv(p)


def test_read_trace_errors(tmp_path):
    with pytest.raises(InputFileError):
        read_trace_csv(tmp_path / "nope.csv")
    with pytest.raises(TraceFormatError, match="header"):
        read_trace_csv(_write(tmp_path, "2024-01-01T00:00:00,1\n2024-01-01T00:05:00,2\n"))
    with pytest.raises(TraceFormatError, match="parse"):
        read_trace_csv(_write(tmp_path, "t,p\n2024-01-01T00:00:00,x\n"))


def test_select_window_wraps_midnight(tmp_path):
    ts = np.datetime64("2024-01-31T18:00:00") + np.arange(16) * np.timedelta64(1, "h")
    p = tmp_path / "t.csv"
    write_trace_csv(p, ts, np.arange(16, dtype=float))
    tr = read_trace_csv(p)
    runs = select_window(tr, hours=(21, 3))
    assert [r.tolist() for r in runs] == [[3.0, 4.0, 5.0, 6.0, 7.0, 8.0]]
    jan = select_window(tr, months=[1])
    assert [r.tolist() for r in jan] == [[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]]
    assert select_window(tr, months=[7]) == []
