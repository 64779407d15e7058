"""Pure-Python reference implementations of the hot loops.

These mirror ``_kernels.pyx`` operation for operation so both backends give
bit-identical simulation output for the same random draws.
"""

import math

import numpy as np

BACKEND = "python"


def pf_eigen(m, v0, tol, max_iter):
    """Power iteration for the Perron root of an irreducible nonnegative matrix.

    Stops when the Collatz-Wielandt bounds ``min (Mv)_i/v_i <= rho <=
    max (Mv)_i/v_i`` agree to relative ``tol``.  Returns
    ``(rho, v, iterations, converged)``.
    """
    v = np.array(v0, dtype=float)
    v /= v.max()
    lo = hi = 0.0
    for it in range(1, max_iter + 1):
        w = m @ v
        ratio = w / v
        lo = float(ratio.min())
        hi = float(ratio.max())
        wmax = float(w.max())
        if wmax <= 0.0 or lo <= 0.0:
            return 0.5 * (lo + hi), v, it, False
        v = w / wmax
        if hi - lo <= tol * hi:
            return 0.5 * (lo + hi), v, it, True
    return 0.5 * (lo + hi), v, max_iter, False


def ctmc_path(jump_cdf, exit_rates, state, exp_draws, unif_draws, out_states, out_durations):
    """Fill one chunk of a CTMC path; returns the state entered after the chunk."""
    n = jump_cdf.shape[1]
    for k in range(exp_draws.shape[0]):
        out_states[k] = state
        out_durations[k] = exp_draws[k] / exit_rates[state]
        u = unif_draws[k]
        j = 0
        while j < n - 1 and not u < jump_cdf[state, j]:
            j += 1
        state = j
    return state


def dtmc_path(cdf, state, unif_draws, out_states):
    n = cdf.shape[1]
    for k in range(unif_draws.shape[0]):
        out_states[k] = state
        u = unif_draws[k]
        j = 0
        while j < n - 1 and not u < cdf[state, j]:
            j += 1
        state = j
    return state


def replay(durations, rates, bmax, b0, cuts, seg_time, seg_empty, seg_lost,
           seg_full, seg_overflow, seg_net):
    """Exact event-driven integration of the regulated battery level.

    Interval ``k`` has constant net rate ``rates[k]`` for ``durations[k]``
    time units.  ``cuts`` are increasing times splitting the horizon into
    ``len(cuts) + 1`` accumulation segments.  Returns the final level.
    """
    ncuts = cuts.shape[0]
    seg = 0
    next_cut = cuts[0] if ncuts > 0 else math.inf
    t = 0.0
    b = b0
    for k in range(durations.shape[0]):
        h = durations[k]
        r = rates[k]
        while h > 0.0:
            split = t + h > next_cut
            if split:
                piece = next_cut - t
                if piece < 0.0:
                    piece = 0.0
            else:
                piece = h
            seg_time[seg] += piece
            seg_net[seg] += r * piece
            if r < 0.0:
                te = b / -r
                if piece <= te:
                    b = b + r * piece
                    if b < 0.0:
                        b = 0.0
                else:
                    dwell = piece - te
                    seg_empty[seg] += dwell
                    seg_lost[seg] += -r * dwell
                    b = 0.0
            elif r > 0.0:
                tf = (bmax - b) / r
                if piece <= tf:
                    b = b + r * piece
                    if b > bmax:
                        b = bmax
                else:
                    dwell = piece - tf
                    seg_full[seg] += dwell
                    seg_overflow[seg] += r * dwell
                    b = bmax
            t += piece
            h -= piece
            if split:
                t = next_cut
                seg += 1
                next_cut = cuts[seg] if seg < ncuts else math.inf
    return b
