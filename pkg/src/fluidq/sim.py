"""Monte Carlo validation of the fluid model.

Paths are piecewise constant in the net-generation rate, so the regulated
battery level can be integrated exactly: within each interval it moves
linearly and saturates at ``0`` or ``bmax`` at analytically computed
times.  Random numbers come from ``numpy.random.Generator(PCG64(seed))``,
drawn in fixed-size chunks, so results are bit-identical across runs and
across the compiled and pure-Python kernels.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ._backend import kernels
from .ctmc import NetGenModel, as_rate_matrix, invariant_distribution
from .errors import InputFileError, ModelError, TraceFormatError

DEFAULT_BATCHES = 20
DEFAULT_BURN_IN = 0.01
DEFAULT_B0_FRACTION = 0.5


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Background-chain path: ``states[k]`` holds for ``durations[k]``."""

    jump_times: np.ndarray
    states: np.ndarray
    durations: np.ndarray
    total_horizon: float

    def occupancy(self, n: int) -> np.ndarray:
        return np.bincount(self.states, weights=self.durations, minlength=n) / self.total_horizon


@dataclass(frozen=True, eq=False)
class SimulationStats:
    empirical_lolp: float
    empirical_llr: float
    empirical_overflow_rate: float
    empirical_overflow_prob: float
    stderr_lolp: float
    stderr_llr: float
    horizon: float
    seed: Optional[int]
    bmax: float
    b0: float
    b_end: float
    burn_in: float
    batch_lolp: np.ndarray = field(repr=False)
    net_energy: float = 0.0
    lost_energy: float = 0.0
    overflow_energy: float = 0.0
    abs_energy: float = 0.0

    @property
    def conservation_residual(self) -> float:
        """``net - (b_end - b0) + lost - overflow`` over the whole path."""
        return self.net_energy - (self.b_end - self.b0) + self.lost_energy - self.overflow_energy

    def to_row(self) -> dict:
        return {
            "seed": "" if self.seed is None else self.seed,
            "bmax": self.bmax,
            "horizon": self.horizon,
            "lolp": self.empirical_lolp,
            "stderr_lolp": self.stderr_lolp,
            "llr": self.empirical_llr,
            "stderr_llr": self.stderr_llr,
            "overflow_prob": self.empirical_overflow_prob,
            "overflow_rate": self.empirical_overflow_rate,
        }


def _jump_cdf(q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    exit_rates = -np.diag(q).copy()
    jumps = q.copy()
    np.fill_diagonal(jumps, 0.0)
    cdf = np.cumsum(jumps, axis=1) / exit_rates[:, None]
    cdf[:, -1] = 1.0
    return np.ascontiguousarray(cdf), exit_rates


def _row_cdf(p: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(p, axis=1)
    cdf /= cdf[:, -1:]
    cdf[:, -1] = 1.0
    return np.ascontiguousarray(cdf)


def _initial_state(rng, pi) -> int:
    return int(np.searchsorted(np.cumsum(pi), rng.random() * np.sum(pi), side="right").clip(0, len(pi) - 1))


def simulate_ctmc(q_matrix, horizon: float, seed: int,
                  initial_state: Optional[int] = None) -> Trajectory:
    """Sample a CTMC path on ``[0, horizon]``.

    The initial state is drawn from the stationary law unless given.
    """
    if isinstance(q_matrix, NetGenModel):
        q_matrix = q_matrix.q_matrix
    q = as_rate_matrix(q_matrix).entries
    horizon = float(horizon)
    if not horizon > 0:
        raise ModelError("horizon must be positive")
    pi = invariant_distribution(q)
    rng = make_rng(seed)
    state = _initial_state(rng, pi) if initial_state is None else int(initial_state)
    if not 0 <= state < q.shape[0]:
        raise ModelError(f"initial_state {state} out of range")
    cdf, exit_rates = _jump_cdf(q)
    expected = horizon * float(pi @ exit_rates)
    chunk = int(expected * 1.02 + 5.0 * math.sqrt(expected) + 16)
    states_parts, dur_parts = [], []
    elapsed = 0.0
    while True:
        e = rng.standard_exponential(chunk)
        u = rng.random(chunk)
        st = np.empty(chunk, dtype=np.intp)
        du = np.empty(chunk, dtype=float)
        state = kernels.ctmc_path(cdf, exit_rates, state, e, u, st, du)
        states_parts.append(st)
        dur_parts.append(du)
        elapsed += float(du.sum())
        if elapsed >= horizon:
            break
        chunk = max(1024, chunk // 10)
    states = np.concatenate(states_parts)
    durations = np.concatenate(dur_parts)
    ends = np.cumsum(durations)
    last = int(np.searchsorted(ends, horizon, side="left"))
    states = states[: last + 1]
    durations = durations[: last + 1].copy()
    starts = np.concatenate([[0.0], ends[:last]])
    durations[last] = horizon - starts[last]
    return Trajectory(starts, states, durations, horizon)


def _dtmc_stationary(t_matrix: np.ndarray) -> np.ndarray:
    n = t_matrix.shape[0]
    a = np.vstack([t_matrix.T - np.eye(n), np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi = np.linalg.lstsq(a, b, rcond=None)[0]
    return np.clip(pi, 0.0, None)


def simulate_dtmc(t_matrix, tau: float, horizon: float, seed: int,
                  initial_state: Optional[int] = None) -> Trajectory:
    """Sample a DTMC held constant for ``tau`` per step on ``[0, horizon]``."""
    t = np.asarray(t_matrix, dtype=float)
    if t.ndim != 2 or t.shape[0] != t.shape[1]:
        raise ModelError("transition matrix must be square")
    if np.any(t < 0) or np.any(np.abs(t.sum(axis=1) - 1.0) > 1e-9):
        raise ModelError("transition matrix must be row-stochastic")
    if not (tau > 0 and horizon > 0):
        raise ModelError("tau and horizon must be positive")
    rng = make_rng(seed)
    state = (_initial_state(rng, _dtmc_stationary(t)) if initial_state is None
             else int(initial_state))
    steps = int(math.ceil(horizon / tau))
    u = rng.random(steps)
    states = np.empty(steps, dtype=np.intp)
    kernels.dtmc_path(_row_cdf(t), state, u, states)
    durations = np.full(steps, float(tau))
    starts = np.arange(steps) * float(tau)
    durations[-1] = horizon - starts[-1]
    return Trajectory(starts, states, durations, float(horizon))


def battery_replay(durations, rates, bmax: float, b0: Optional[float] = None, *,
                   burn_in: float = DEFAULT_BURN_IN, n_batches: int = DEFAULT_BATCHES,
                   seed: Optional[int] = None) -> SimulationStats:
    """Integrate the regulated battery exactly along a piecewise-constant path.

    Parameters
    ----------
    durations, rates : array_like
        Interval lengths and the constant net-generation rate on each.
    bmax : float
        Battery capacity.
    b0 : float, optional
        Initial level, default ``bmax / 2``.
    burn_in : float
        Fraction of the horizon excluded from the statistics.
    n_batches : int
        Batches for the batch-means standard error.

    Notes
    -----
    Loss of load is time spent at ``b = 0`` while the rate is negative.
    Energy totals (``net_energy`` etc.) cover the whole path, burn-in
    included, so path-level conservation can be checked exactly.
    """
    durations = np.ascontiguousarray(durations, dtype=float)
    rates = np.ascontiguousarray(rates, dtype=float)
    if durations.shape != rates.shape or durations.ndim != 1 or durations.size == 0:
        raise ModelError("durations and rates must be equal-length non-empty vectors")
    if np.any(durations < 0):
        raise ModelError("durations must be nonnegative")
    bmax = float(bmax)
    if not bmax > 0:
        raise ModelError("bmax must be positive")
    b0 = DEFAULT_B0_FRACTION * bmax if b0 is None else float(b0)
    if not 0.0 <= b0 <= bmax:
        raise ModelError("b0 must lie in [0, bmax]")
    if not 0.0 <= burn_in < 1.0:
        raise ModelError("burn_in must be a fraction in [0, 1)")
    if n_batches < 2:
        raise ModelError("need at least two batches")
    horizon = float(durations.sum())
    start = burn_in * horizon
    # segment 0 is burn-in (possibly empty); segments 1..n_batches are batches
    cuts = start + (horizon - start) * np.arange(0, n_batches) / n_batches
    nseg = n_batches + 1
    acc = [np.zeros(nseg) for _ in range(6)]
    b_end = kernels.replay(durations, rates, bmax, b0, np.ascontiguousarray(cuts), *acc)
    seg_time, seg_empty, seg_lost, seg_full, seg_over, seg_net = acc
    bt = seg_time[1:]
    if np.any(bt <= 0):
        raise ModelError("horizon too short for the requested number of batches")
    batch_lolp = seg_empty[1:] / bt
    batch_llr = seg_lost[1:] / bt
    total = bt.sum()
    return SimulationStats(
        empirical_lolp=float(seg_empty[1:].sum() / total),
        empirical_llr=float(seg_lost[1:].sum() / total),
        empirical_overflow_rate=float(seg_over[1:].sum() / total),
        empirical_overflow_prob=float(seg_full[1:].sum() / total),
        stderr_lolp=float(np.std(batch_lolp, ddof=1) / math.sqrt(n_batches)),
        stderr_llr=float(np.std(batch_llr, ddof=1) / math.sqrt(n_batches)),
        horizon=horizon,
        seed=seed,
        bmax=bmax,
        b0=b0,
        b_end=float(b_end),
        burn_in=burn_in,
        batch_lolp=batch_lolp,
        net_energy=float(seg_net.sum()),
        lost_energy=float(seg_lost.sum()),
        overflow_energy=float(seg_over.sum()),
        abs_energy=float(np.abs(rates) @ durations),
    )


def simulate_lolp(model: NetGenModel, bmax: float, horizon: float, seed: int, *,
                  b0: Optional[float] = None, burn_in: float = DEFAULT_BURN_IN,
                  n_batches: int = DEFAULT_BATCHES) -> SimulationStats:
    """Empirical LOLP/LLR of the CTMC model over one simulated path."""
    traj = simulate_ctmc(model.q_matrix, horizon, seed)
    return battery_replay(traj.durations, model.rates[traj.states], bmax, b0,
                          burn_in=burn_in, n_batches=n_batches, seed=seed)


def simulate_dtmc_replay(t_matrix, tau: float, bin_centers, demand: float, bmax: float,
                         horizon: float, seed: int, *, b0: Optional[float] = None,
                         burn_in: float = DEFAULT_BURN_IN,
                         n_batches: int = DEFAULT_BATCHES) -> SimulationStats:
    """Empirical LOLP of the fitted DTMC with generation constant per slot."""
    centers = np.asarray(bin_centers, dtype=float)
    traj = simulate_dtmc(t_matrix, tau, horizon, seed)
    return battery_replay(traj.durations, centers[traj.states] - demand, bmax, b0,
                          burn_in=burn_in, n_batches=n_batches, seed=seed)


def mean_holding_time(q_matrix) -> float:
    """Stationary mean time between jumps, ``1 / sum_i pi_i q_i``."""
    q = as_rate_matrix(q_matrix)
    return 1.0 / float(invariant_distribution(q) @ q.exit_rates())


def sample_at_interval(traj: Trajectory, tau: float, n_samples: int) -> np.ndarray:
    """States observed at times ``0, tau, 2 tau, ...``."""
    times = np.arange(n_samples) * float(tau)
    if times[-1] > traj.total_horizon:
        raise ModelError("trajectory shorter than the requested sampling window")
    idx = np.searchsorted(traj.jump_times, times, side="right") - 1
    return traj.states[idx]


# -- power traces ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Trace:
    """Equally spaced power samples (MW) with their timestamps."""

    timestamps: np.ndarray
    values: np.ndarray
    interval: float

    def __len__(self):
        return self.values.shape[0]


def _parse_time(text: str) -> datetime:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    return datetime.fromisoformat(text)


def read_trace_csv(path) -> Trace:
    """Read a ``timestamp,power`` CSV with a header row.

    Timestamps are ISO-8601; the sampling interval must be constant.
    """
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise InputFileError(f"cannot open trace {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise TraceFormatError(f"{path}: empty file")
        if len(header) < 2 or _looks_numeric(header[1]):
            raise TraceFormatError(f"{path}: header row required (timestamp, power)")
        stamps, values = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                stamps.append(_parse_time(row[0]))
                values.append(float(row[1]))
            except (ValueError, IndexError) as exc:
                raise TraceFormatError(f"{path}:{lineno}: cannot parse row {row!r}: {exc}") from exc
    if not values:
        raise TraceFormatError(f"{path}: trace has no samples")
    stamps = [s.astimezone(timezone.utc).replace(tzinfo=None) if s.tzinfo else s for s in stamps]
    ts = np.array([np.datetime64(s, "s") for s in stamps])
    values = np.array(values)
    if len(ts) == 1:
        raise TraceFormatError(f"{path}: need at least two samples to infer the sampling interval")
    steps = np.diff(ts).astype("timedelta64[s]").astype(np.int64)
    interval = int(steps[0])
    bad = np.flatnonzero(steps != interval)
    if interval <= 0 or bad.size:
        rows = (bad + 3).tolist()[:10]
        raise TraceFormatError(
            f"{path}: sampling interval not constant ({interval} s expected); "
            f"offending data rows (1-based file lines): {rows}")
    return Trace(ts, values, float(interval))


def _looks_numeric(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def write_trace_csv(path, timestamps, values) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "power_mw"])
        for t, v in zip(timestamps, values):
            w.writerow([str(np.datetime64(t, "s")), repr(float(v))])


def select_window(trace: Trace, months: Optional[Sequence[int]] = None,
                  hours: Optional[Sequence[int]] = None) -> list[np.ndarray]:
    """Split a trace into contiguous runs inside a calendar window.

    ``hours=(start, end)`` keeps samples with ``start <= hour < end``,
    wrapping past midnight when ``start > end`` (``(21, 3)`` is 9PM-3AM).
    """
    ts = trace.timestamps
    keep = np.ones(len(ts), dtype=bool)
    if months:
        month = ts.astype("datetime64[M]").astype(int) % 12 + 1
        keep &= np.isin(month, list(months))
    if hours:
        h0, h1 = hours
        hour = (ts - ts.astype("datetime64[D]")).astype("timedelta64[h]").astype(int)
        keep &= ((hour >= h0) & (hour < h1)) if h0 <= h1 else ((hour >= h0) | (hour < h1))
    idx = np.flatnonzero(keep)
    if idx.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(idx) != 1) + 1
    return [trace.values[run] for run in np.split(idx, breaks)]


def trace_replay(trace, sample_interval: float, demand: float, bmax: float,
                 b0: Optional[float] = None, *, burn_in: float = DEFAULT_BURN_IN,
                 n_batches: int = DEFAULT_BATCHES) -> SimulationStats:
    """Battery driven by a recorded generation trace against constant demand."""
    values = np.asarray(trace.values if isinstance(trace, Trace) else trace, dtype=float)
    if values.size == 0:
        raise ModelError("empty trace")
    if np.any(values < 0):
        raise ModelError("trace contains negative power values")
    if not sample_interval > 0:
        raise ModelError("sample_interval must be positive")
    return battery_replay(np.full(values.size, float(sample_interval)), values - demand,
                          bmax, b0, burn_in=burn_in, n_batches=n_batches)
