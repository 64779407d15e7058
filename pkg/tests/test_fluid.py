import itertools
import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import solve_ivp

from fluidq.ctmc import (NetGenModel, RateMatrix, drift, invariant_distribution,
                         random_reversible_model, reverse_model, two_state_model)
from fluidq.errors import DriftError, ModelError, NumericalError
from fluidq.fluid import (cdf, lolp_curve, lolp_lower_bound, reliability, solve_stationary,
                          spectrum, two_state_lolp)
from fluidq.ldp import decay_rate_eig

from helpers import models_with_drift, reversible_models

GRID = [(a, b, g, d, bmax)
        for a, b in itertools.product([0.5, 1, 2], repeat=2)
        for g, d in [(3, 1), (2, 0.5), (1.5, 1)]
        for bmax in [0.1, 1, 2, 10]]


# -- closed form ----------------------------------------------------------

def test_closed_form_examples():
    assert two_state_lolp(1, 1, 3, 1, 0) == pytest.approx(0.5, rel=1e-15)
    assert two_state_lolp(1, 1, 3, 1, 2) == pytest.approx(0.5 / (2 * math.e - 1), rel=1e-14)
    assert two_state_lolp(1, 1, 1.5, 1, math.inf) == 0.25
    assert two_state_lolp(1, 1, 3, 1, math.inf) == 0.0


def test_closed_form_rejects_zero_drift_and_bad_input():
    with pytest.raises(DriftError):
        two_state_lolp(1, 1, 2, 1, 1.0)
    with pytest.raises(ModelError):
        two_state_lolp(1, 1, 1, 2, 1.0)


@pytest.mark.parametrize("a, b, g, d, bmax", GRID)
def test_solver_matches_closed_form(a, b, g, d, bmax):
    if a * g - a * d - b * d == 0:
        pytest.skip("zero drift")
    m = two_state_model(a, b, g, d)
    lolp = reliability(solve_stationary(m, bmax)).lolp
    assert lolp == pytest.approx(two_state_lolp(a, b, g, d, bmax), rel=1e-8)


def test_example_bmax_two():
    rep = reliability(solve_stationary(two_state_model(1, 1, 3, 1), 2.0))
    assert rep.lolp == pytest.approx(0.5 / (2 * math.e - 1), rel=1e-13)
    assert rep.lolp == pytest.approx(0.112701, abs=2e-6)   # quoted rounded value
    # one deficit state with |r| = 1
    assert rep.llr == pytest.approx(rep.lolp, rel=1e-14)


def test_small_battery_limit():
    rep = reliability(solve_stationary(two_state_model(1, 1, 3, 1), 1e-9))
    assert rep.lolp == pytest.approx(0.5, abs=1e-8)


@pytest.mark.parametrize("bmax", [20.0, 60.0, 200.0, 1000.0])
def test_tiny_lolp_keeps_relative_accuracy(bmax):
    lolp = reliability(solve_stationary(two_state_model(1, 1, 3, 1), bmax)).lolp
    exact = two_state_lolp(1, 1, 3, 1, bmax)
    if exact == 0.0:
        assert lolp < 1e-300
    else:
        assert lolp == pytest.approx(exact, rel=1e-12)


# -- mpmath oracle --------------------------------------------------------

def _mp_lolp(model, bmax, dps=80):
    """Same boundary-value problem at 80 digits (eigen-decomposition in mpmath).

    Growing modes are written as exp(w (x - bmax)) so the boundary matrix
    stays well scaled at large ``bmax``.
    """
    with mp.workdps(dps):
        n = model.n
        r = [mp.mpf(float(x)) for x in model.rates]
        q = model.q_matrix.entries
        a = mp.matrix(n, n)
        for i in range(n):
            for j in range(n):
                a[i, j] = mp.mpf(float(q[j, i])) / r[i]
        # pi from the augmented system in high precision
        aug = mp.matrix(n + 1, n)
        for i in range(n):
            for j in range(n):
                aug[i, j] = mp.mpf(float(q[j, i]))
        for j in range(n):
            aug[n, j] = 1
        rhs = mp.matrix(n + 1, 1)
        rhs[n] = 1
        pi = mp.lu_solve(aug.T * aug, aug.T * rhs)
        w, v = mp.eig(a)
        w = [mp.re(x) for x in w]
        b = mp.mpf(float(bmax))
        m = mp.matrix(n, n)
        rhs = mp.matrix(n, 1)
        shift = [b if wj > 0 else 0 for wj in w]
        for i in range(n):
            x = 0 if r[i] > 0 else b
            for j in range(n):
                m[i, j] = mp.re(v[i, j]) * mp.exp(w[j] * (x - shift[j]))
            rhs[i] = 0 if r[i] > 0 else pi[i]
        c = mp.lu_solve(m, rhs)
        at0 = [c[j] * mp.exp(-w[j] * shift[j]) for j in range(n)]
        return float(sum(mp.re(v[i, j]) * at0[j] for i in range(n) if r[i] < 0 for j in range(n)))


@pytest.mark.parametrize("seed", [3, 4, 5])
def test_solver_matches_high_precision(seed):
    model = random_reversible_model(4, np.random.default_rng(seed), drift_sign=1)
    lam = decay_rate_eig(model)
    spec = spectrum(model)
    for scaled in (0.5, 5.0, 40.0):
        b = scaled / lam
        ours = reliability(solve_stationary(model, b, spec)).lolp
        assert ours == pytest.approx(_mp_lolp(model, b), rel=1e-9)


# -- ODE shooting oracle --------------------------------------------------

def _shoot(model, bmax, xs):
    """Integrate F' = R^{-1} Q^T F from x = 0 with F_i(0) = 0 on charging states.

    The unknown discharging-state values at 0 are fixed by linearity: each
    unit start vector is integrated separately and the combination matching
    F_i(bmax) = pi_i is solved for.
    """
    a = model.q_matrix.entries.T / model.rates[:, None]
    pi = invariant_distribution(model.q_matrix)
    neg = np.flatnonzero(model.rates < 0)
    paths = []
    for j in neg:
        y0 = np.zeros(model.n)
        y0[j] = 1.0
        sol = solve_ivp(lambda _, y: a @ y, (0.0, bmax), y0, method="DOP853",
                        rtol=1e-12, atol=1e-15, t_eval=xs, dense_output=False)
        paths.append(sol.y)
    paths = np.array(paths)                     # (len(neg), n, len(xs))
    end = paths[:, :, -1]                       # values at bmax
    coeff = np.linalg.solve(end[:, neg].T, pi[neg])
    return np.einsum("k,knx->nx", coeff, paths)


def test_solver_matches_ode_integration():
    model = random_reversible_model(5, np.random.default_rng(21), drift_sign=1)
    bmax = 2.0 / decay_rate_eig(model)
    xs = np.linspace(0.0, bmax, 41)
    ref = _shoot(model, bmax, xs)
    sol = solve_stationary(model, bmax)
    ours = np.array([cdf(sol, x) for x in xs]).T
    assert np.max(np.abs(ours - ref)) < 1e-7


def test_solver_matches_ode_integration_negative_drift():
    model = random_reversible_model(5, np.random.default_rng(22), drift_sign=-1)
    bmax = 1.5
    xs = np.linspace(0.0, bmax, 31)
    ref = _shoot(model, bmax, xs)
    sol = solve_stationary(model, bmax)
    ours = np.array([cdf(sol, x) for x in xs]).T
    assert np.max(np.abs(ours - ref)) < 1e-7


# -- spectrum -------------------------------------------------------------

@given(reversible_models())
def test_spectrum_invariants(model):
    if abs(drift(model)) < 1e-6:
        return
    spec = spectrum(model)
    a = model.q_matrix.entries.T / model.rates[:, None]
    lam, phi = spec.eigenvalues, spec.eigenvectors
    assert np.max(np.abs(a @ phi - phi * lam)) < 1e-9 * np.linalg.norm(a, 2)
    assert np.count_nonzero(lam == 0) == 1
    z = phi[:, spec.zero_index]
    assert np.allclose(z / z.sum(), spec.pi, atol=1e-14)


def test_zero_drift_rejected():
    m = NetGenModel(RateMatrix([[-1, 1], [1, -1]]), [-1.0, 1.0])
    with pytest.raises(DriftError, match="zero-drift"):
        solve_stationary(m, 1.0)


def test_non_real_spectrum_rejected():
    # a one-way 4-cycle with a single deficit state has a complex pair
    q = RateMatrix([[-5, 5, 0, 0], [0, -5, 5, 0], [0, 0, -5, 5], [5, 0, 0, -5]])
    m = NetGenModel(q, [1.0, 1.0, 1.0, -1.0])
    with pytest.raises(NumericalError, match="non-real"):
        solve_stationary(m, 1.0)


def test_bmax_must_be_positive():
    m = two_state_model(1, 1, 3, 1)
    for bad in (0.0, -1.0, math.inf, math.nan):
        with pytest.raises(ModelError):
            solve_stationary(m, bad)


# -- cdf ------------------------------------------------------------------

def test_cdf_boundaries_and_range():
    model = random_reversible_model(5, np.random.default_rng(9), drift_sign=1)
    sol = solve_stationary(model, 3.0)
    pi = invariant_distribution(model.q_matrix)
    pos, neg = model.rates > 0, model.rates < 0
    assert np.all(np.abs(cdf(sol, 0.0)[pos]) < 1e-12)
    assert np.allclose(cdf(sol, 3.0)[neg], pi[neg], atol=1e-12)
    with pytest.raises(ModelError):
        cdf(sol, -0.1)
    with pytest.raises(ModelError):
        cdf(sol, 3.1)


@given(reversible_models(), st.floats(0.05, 20.0))
def test_cdf_is_monotone_bounded_and_sums(model, bmax):
    if abs(drift(model)) < 1e-6:
        return
    sol = solve_stationary(model, bmax)
    pi = sol.pi
    xs = np.linspace(0.0, bmax, 25)
    vals = np.array([cdf(sol, x) for x in xs])
    assert np.all(vals >= 0) and np.all(vals <= pi)
    assert np.all(np.diff(vals, axis=0) >= -1e-12)
    rep = reliability(sol)
    assert vals[-1].sum() + rep.overflow_prob == pytest.approx(1.0, abs=1e-9)


# -- reliability identities -----------------------------------------------

@given(reversible_models(), st.floats(0.01, 50.0))
def test_energy_balance_and_sandwich(model, bmax):
    if abs(drift(model)) < 1e-6:
        return
    rep = reliability(solve_stationary(model, bmax))
    scale = max(abs(rep.drift), rep.llr)
    assert abs(rep.llr + rep.drift - rep.overflow_rate) < 1e-9 * scale
    deficits = -model.rates[model.rates < 0]
    assert deficits.min() * rep.lolp <= rep.llr <= deficits.max() * rep.lolp
    # lolp may underflow to 0 for a large battery
    assert 0 <= rep.lolp < 1 and 0 <= rep.overflow_prob < 1


@given(reversible_models(), st.floats(0.05, 10.0))
def test_reversed_system_identity(model, bmax):
    if abs(drift(model)) < 1e-6:
        return
    lolp = reliability(solve_stationary(model, bmax)).lolp
    rev = reverse_model(model)
    sol = solve_stationary(rev, bmax)
    # full-battery atom of the reversed system, straight from its CDF
    full = float(np.sum((sol.pi - cdf(sol, bmax))[rev.rates > 0]))
    assert lolp == pytest.approx(full, abs=1e-9)
    assert reliability(sol).overflow_prob == pytest.approx(lolp, abs=1e-9)


@pytest.mark.parametrize("model", models_with_drift(6, 31, 1) + models_with_drift(6, 32, -1))
def test_lolp_strictly_decreasing(model):
    grid = np.geomspace(1e-3, 1e2, 30)
    lolp = np.array([r.lolp for r in lolp_curve(model, grid)])
    assert np.all(np.diff(lolp) <= 0)
    # strict wherever the change is above rounding: underflow for positive
    # drift, convergence onto the large-battery limit for negative drift
    floor = lolp[-1] if drift(model) < 0 else 0.0
    resolved = (lolp - floor) > 1e-10 * max(floor, 1e-290)
    assert np.all(np.diff(lolp[resolved]) < 0)


# -- negative drift bound -------------------------------------------------

def test_lower_bound_two_state():
    lb = lolp_lower_bound(two_state_model(1, 1, 1.5, 1))
    assert lb.bound == pytest.approx(0.25, rel=1e-14)
    assert lb.tight


def test_lower_bound_not_tight_with_two_deficit_states():
    q = RateMatrix([[-2, 1, 1], [1, -2, 1], [1, 1, -2]])
    lb = lolp_lower_bound(NetGenModel(q, [-1.0, -0.5, 1.0]))
    assert not lb.tight
    assert lb.bound == pytest.approx((0.5 / 3) / 1.0)


def test_lower_bound_requires_negative_drift():
    with pytest.raises(DriftError, match="negative drift"):
        lolp_lower_bound(two_state_model(1, 1, 3, 1))


@pytest.mark.parametrize("model", models_with_drift(8, 41, -1))
def test_lolp_stays_above_bound(model):
    bound = lolp_lower_bound(model).bound
    # past a few decay lengths lolp meets the bound in floating point, so the
    # grid is scaled by the slowest nonzero mode
    lam = spectrum(model).eigenvalues
    kappa = np.min(np.abs(lam[lam != 0]))
    for rep in lolp_curve(model, np.geomspace(1e-3, 10.0, 12) / kappa):
        assert rep.lolp > bound


def test_solution_serializes():
    sol = solve_stationary(two_state_model(1, 1, 3, 1), 2.0)
    doc = sol.to_dict()
    assert doc["bmax"] == 2.0 and len(doc["coefficients"]) == 2
    assert doc["anchored_at_bmax"] == [False, True]
