# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops; see ``_kernels_py`` for the reference semantics."""

import numpy as np
from libc.math cimport INFINITY

BACKEND = "cython"


def pf_eigen(double[:, ::1] m, v0, double tol, Py_ssize_t max_iter):
    cdef Py_ssize_t n = m.shape[0]
    cdef Py_ssize_t i, j, it
    cdef double s, lo = 0.0, hi = 0.0, wmax, ratio
    v_arr = np.array(v0, dtype=np.float64)
    w_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] v = v_arr
    cdef double[::1] w = w_arr
    wmax = 0.0
    for i in range(n):
        if v[i] > wmax:
            wmax = v[i]
    for i in range(n):
        v[i] = v[i] / wmax
    for it in range(1, max_iter + 1):
        wmax = 0.0
        for i in range(n):
            s = 0.0
            for j in range(n):
                s = s + m[i, j] * v[j]
            w[i] = s
            ratio = s / v[i]
            if i == 0 or ratio < lo:
                lo = ratio
            if i == 0 or ratio > hi:
                hi = ratio
            if s > wmax:
                wmax = s
        if wmax <= 0.0 or lo <= 0.0:
            return 0.5 * (lo + hi), v_arr, it, False
        for i in range(n):
            v[i] = w[i] / wmax
        if hi - lo <= tol * hi:
            return 0.5 * (lo + hi), v_arr, it, True
    return 0.5 * (lo + hi), v_arr, max_iter, False


def ctmc_path(const double[:, ::1] jump_cdf, const double[::1] exit_rates, Py_ssize_t state,
              const double[::1] exp_draws, const double[::1] unif_draws,
              Py_ssize_t[::1] out_states, double[::1] out_durations):
    cdef Py_ssize_t n = jump_cdf.shape[1]
    cdef Py_ssize_t k, j
    cdef double u
    for k in range(exp_draws.shape[0]):
        out_states[k] = state
        out_durations[k] = exp_draws[k] / exit_rates[state]
        u = unif_draws[k]
        j = 0
        while j < n - 1 and not u < jump_cdf[state, j]:
            j += 1
        state = j
    return state


def dtmc_path(const double[:, ::1] cdf, Py_ssize_t state, const double[::1] unif_draws,
              Py_ssize_t[::1] out_states):
    cdef Py_ssize_t n = cdf.shape[1]
    cdef Py_ssize_t k, j
    cdef double u
    for k in range(unif_draws.shape[0]):
        out_states[k] = state
        u = unif_draws[k]
        j = 0
        while j < n - 1 and not u < cdf[state, j]:
            j += 1
        state = j
    return state


def replay(const double[::1] durations, const double[::1] rates, double bmax, double b0,
           const double[::1] cuts, double[::1] seg_time, double[::1] seg_empty,
           double[::1] seg_lost, double[::1] seg_full, double[::1] seg_overflow,
           double[::1] seg_net):
    cdef Py_ssize_t ncuts = cuts.shape[0]
    cdef Py_ssize_t seg = 0
    cdef Py_ssize_t k
    cdef double next_cut = cuts[0] if ncuts > 0 else INFINITY
    cdef double t = 0.0
    cdef double b = b0
    cdef double h, r, piece, te, tf, dwell
    cdef bint split
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
                next_cut = cuts[seg] if seg < ncuts else INFINITY
    return b
