"""Regenerate ``src/fluidq/data/synthetic_wind.csv``.

A 10-level birth-death chain with occasional two-level jumps drives wind
output between 0 and 1000 MW; each sample is the level's bin center plus
uniform jitter inside the bin, taken every 5 minutes for 91 days.
"""

from pathlib import Path

import numpy as np

from fluidq.ctmc import RateMatrix
from fluidq.sim import make_rng, sample_at_interval, simulate_ctmc, write_trace_csv

N_LEVELS = 10
WIDTH = 100.0          # MW per bin
TAU = 300.0            # s
N_SAMPLES = 91 * 288
SEED = 2024
HOUR = 3600.0


def known_q() -> np.ndarray:
    q = np.zeros((N_LEVELS, N_LEVELS))
    for i in range(N_LEVELS - 1):
        q[i, i + 1] = 0.45 / HOUR
        q[i + 1, i] = 0.50 / HOUR
    for i in range(N_LEVELS - 2):
        q[i, i + 2] = q[i + 2, i] = 0.08 / HOUR
    np.fill_diagonal(q, -q.sum(axis=1))
    return q


def main(out=None):
    q = RateMatrix(known_q())
    traj = simulate_ctmc(q, TAU * N_SAMPLES, SEED)
    states = sample_at_interval(traj, TAU, N_SAMPLES)
    jitter = make_rng(SEED + 1).uniform(-0.45, 0.45, N_SAMPLES)
    values = np.round((states + 0.5 + jitter) * WIDTH, 1)
    stamps = np.datetime64("2024-01-15T00:00:00") + np.arange(N_SAMPLES) * np.timedelta64(int(TAU), "s")
    out = Path(out or Path(__file__).resolve().parents[1] / "src/fluidq/data/synthetic_wind.csv")
    write_trace_csv(out, stamps, values)
    print(f"wrote {N_SAMPLES} samples to {out}")


if __name__ == "__main__":
    main()
