"""Stationary distribution of the finite-buffer Markov modulated fluid queue.

The joint distribution ``F_i(x) = P[b <= x, X = i]`` solves the linear ODE
``F'(x) = A F(x)`` with ``A = R^{-1} Q^T`` on ``[0, bmax]``, subject to
``F_i(0) = 0`` for charging states and ``F_i(bmax) = pi_i`` for discharging
states.  With ``A`` diagonalizable the solution is a finite sum of
exponential modes, and the boundary conditions fix the mode coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ctmc import NetGenModel, invariant_distribution
from .errors import DriftError, ModelError, NumericalError

IMAG_RTOL = 1e-9
ZERO_EIG_RTOL = 1e-12
DRIFT_RTOL = 1e-12
RESIDUAL_TOL = 1e-9
COND_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Eigen-decomposition of ``R^{-1} Q^T`` with the zero mode pinned to ``pi``."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    zero_index: int
    pi: np.ndarray
    drift: float


@dataclass(frozen=True, eq=False)
class SpectralSolution:
    """``F(x) = sum_j a_j psi_j(x) phi_j``.

    Modes with a positive eigenvalue are anchored at the top of the
    battery, ``psi_j(x) = exp(lambda_j (x - bmax))``; all other modes use
    ``psi_j(x) = exp(lambda_j x)``.  Both choices keep ``psi_j <= 1`` on
    ``[0, bmax]`` so large batteries cannot overflow.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    coefficients: np.ndarray
    bmax: float
    model: NetGenModel
    pi: np.ndarray
    drift: float

    def basis(self, x) -> np.ndarray:
        lam = self.eigenvalues
        shift = np.where(lam > 0, self.bmax, 0.0)
        return np.exp(lam * (x - shift))

    def to_dict(self) -> dict:
        return {
            "bmax": float(self.bmax),
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "coefficients": [float(v) for v in self.coefficients],
            "anchored_at_bmax": [bool(v > 0) for v in self.eigenvalues],
            "eigenvectors": [[float(v) for v in row] for row in self.eigenvectors],
        }


@dataclass(frozen=True)
class ReliabilityReport:
    lolp: float
    llr: float
    overflow_prob: float
    overflow_rate: float
    drift: float
    bmax: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def spectrum(model: NetGenModel) -> Spectrum:
    """Real spectrum of ``R^{-1} Q^T`` for a model with nonzero drift.

    Raises
    ------
    DriftError
        If the drift is zero (the zero eigenvalue is then not simple).
    NumericalError
        For a non-real, defective or numerically degenerate spectrum.
    """
    q = model.q_matrix.entries
    r = model.rates
    pi = invariant_distribution(model.q_matrix)
    delta = float(pi @ r)
    if abs(delta) <= DRIFT_RTOL * float(np.max(np.abs(r))):
        raise DriftError("zero-drift unsupported: the stationary solution has no simple zero mode")
    a = q.T / r[:, None]
    w, v = np.linalg.eig(a)
    rho = float(np.max(np.abs(w)))
    if np.max(np.abs(w.imag)) > IMAG_RTOL * rho:
        raise NumericalError("non-real spectrum (model not reversible?)")
    if np.iscomplexobj(v):
        # undo the arbitrary complex phase LAPACK may attach to each column
        k = np.argmax(np.abs(v), axis=0)
        v = (v / v[k, np.arange(v.shape[1])]).real
    w = w.real.copy()
    v = np.array(v, dtype=float)
    z = int(np.argmin(np.abs(w)))
    w[z] = 0.0
    v[:, z] = pi
    others = np.delete(np.abs(w), z)
    if others.size and np.min(others) < ZERO_EIG_RTOL * rho:
        raise NumericalError("numerically degenerate spectrum: a second eigenvalue is ~0")
    v = v / np.max(np.abs(v), axis=0)
    if np.linalg.cond(v) > COND_LIMIT:
        raise NumericalError("defective spectrum: eigenvectors are numerically dependent")
    norm_a = np.linalg.norm(a, 2)
    resid = np.max(np.abs(a @ v - v * w))
    if resid > RESIDUAL_TOL * max(norm_a, 1.0):
        raise NumericalError(f"eigenpair residual {resid:.2e} too large")
    order = np.argsort(w)
    return Spectrum(w[order], v[:, order], int(np.flatnonzero(order == z)[0]), pi, delta)


def _reversed(spec: Spectrum) -> Spectrum:
    # negating the rates negates R^{-1} Q^T; eigenvectors carry over
    return Spectrum(-spec.eigenvalues[::-1], spec.eigenvectors[:, ::-1],
                    len(spec.eigenvalues) - 1 - spec.zero_index, spec.pi, -spec.drift)


def _coefficients(lam, phi, pi, pos, drift, bmax) -> np.ndarray:
    """Mode coefficients by block elimination.

    Modes anchored at 0 (negative eigenvalues, plus the zero mode when the
    drift is positive) are matched to the charging-state conditions at 0,
    the remaining modes to the discharging-state conditions at ``bmax``.
    Eliminating the first block leaves a Schur complement whose coupling
    terms carry a factor ``exp(-|lambda| bmax)``, so coefficients of size
    ``exp(-lambda bmax)`` come out with full relative accuracy; a plain LU
    solve of the whole system loses them to cancellation.
    """
    at0 = (lam < 0) | ((lam == 0) & (drift > 0))
    neg = ~pos
    if at0.sum() != pos.sum():
        raise NumericalError(
            f"mode count mismatch: {int(at0.sum())} modes anchored at 0 for "
            f"{int(pos.sum())} charging states")
    e_a = np.exp(lam[at0] * bmax)
    e_b = np.exp(-np.abs(lam[~at0]) * bmax)
    p_pa, p_pb = phi[np.ix_(pos, at0)], phi[np.ix_(pos, ~at0)]
    p_na, p_nb = phi[np.ix_(neg, at0)], phi[np.ix_(neg, ~at0)]
    x = np.linalg.solve(p_pa, p_pb)
    schur = p_nb - (p_na * e_a[None, :]) @ x * e_b[None, :]
    c_b = np.linalg.solve(schur, pi[neg])
    coef = np.empty(lam.size)
    coef[~at0] = c_b
    coef[at0] = -x @ (e_b * c_b)
    return coef


def solve_stationary(model: NetGenModel, bmax: float, spec: Spectrum | None = None) -> SpectralSolution:
    """Solve the stationary fluid equations for a battery of size ``bmax``.

    ``spec`` may be passed to reuse one eigen-decomposition over many
    battery sizes.
    """
    bmax = float(bmax)
    if not (bmax > 0 and math.isfinite(bmax)):
        raise ModelError(f"bmax must be positive and finite, got {bmax}")
    if spec is None:
        spec = spectrum(model)
    lam, phi = spec.eigenvalues, spec.eigenvectors
    pos = model.rates > 0
    coef = _coefficients(lam, phi, spec.pi, pos, spec.drift, bmax)
    at_zero = np.exp(np.where(lam > 0, -lam * bmax, 0.0))
    at_top = np.exp(np.where(lam > 0, 0.0, lam * bmax))
    m = phi * np.where(pos[:, None], at_zero[None, :], at_top[None, :])
    rhs = np.where(pos, 0.0, spec.pi)
    resid = float(np.max(np.abs(m @ coef - rhs)))
    if not resid < RESIDUAL_TOL:
        raise NumericalError(f"boundary-condition residual {resid:.2e} exceeds {RESIDUAL_TOL}")
    coef.setflags(write=False)
    return SpectralSolution(lam, phi, coef, bmax, model, spec.pi, spec.drift)


def _cdf_raw(solution: SpectralSolution, x: float) -> np.ndarray:
    return solution.eigenvectors @ (solution.coefficients * solution.basis(x))


def cdf(solution: SpectralSolution, x: float) -> np.ndarray:
    """``(F_i(x), i in S)``: probability that the battery holds at most ``x``
    and the background chain is in state ``i``."""
    x = float(x)
    if not 0.0 <= x <= solution.bmax:
        raise ModelError(f"x={x} outside [0, {solution.bmax}]")
    return np.clip(_cdf_raw(solution, x), 0.0, solution.pi)


def reliability(solution: SpectralSolution) -> ReliabilityReport:
    """LOLP and LLR from the empty-battery mass; overflow from the full-battery mass.

    The full-battery mass ``pi_i - F_i(bmax)`` is the empty-battery mass of
    the reversed model (negated rates), which avoids computing it as a
    difference of nearly equal numbers when overflow is rare.
    """
    r = solution.model.rates
    neg = r < 0
    empty = np.where(neg, _cdf_raw(solution, 0.0), 0.0)
    spec = Spectrum(solution.eigenvalues, solution.eigenvectors,
                    int(np.flatnonzero(solution.eigenvalues == 0)[0]),
                    solution.pi, solution.drift)
    rev = _reversed(spec)
    coef = _coefficients(rev.eigenvalues, rev.eigenvectors, solution.pi, neg,
                         rev.drift, solution.bmax)
    shift = np.where(rev.eigenvalues > 0, solution.bmax, 0.0)
    f_rev0 = rev.eigenvectors @ (coef * np.exp(-rev.eigenvalues * shift))
    full = np.where(neg, 0.0, f_rev0)
    return ReliabilityReport(
        lolp=float(empty.sum()),
        llr=float(empty @ -r),
        overflow_prob=float(full.sum()),
        overflow_rate=float(full @ r),
        drift=solution.drift,
        bmax=solution.bmax,
    )


def lolp_curve(model: NetGenModel, bmax_values) -> list[ReliabilityReport]:
    spec = spectrum(model)
    return [reliability(solve_stationary(model, b, spec)) for b in bmax_values]


def two_state_lolp(a: float, b: float, g: float, d: float, bmax: float) -> float:
    """Closed-form LOLP for generation alternating between 0 and ``g``.

    ``a`` is the rate of leaving the zero-generation state and ``b`` the
    rate of leaving the ``g`` state; demand is constant at ``0 < d < g``.
    ``bmax = inf`` gives the large-battery limit.
    """
    if not (a > 0 and b > 0):
        raise ModelError("transition rates a, b must be positive")
    if not 0 < d < g:
        raise ModelError("need 0 < d < g")
    if bmax < 0:
        raise ModelError("bmax must be nonnegative")
    delta = (a * g - a * d - b * d) / (a + b)
    if delta == 0:
        raise DriftError("closed form degenerates at zero drift")
    k = (a * g - a * d) / (b * d)
    expo = (a + b) * delta / ((g - d) * d)
    if math.isinf(bmax):
        return -delta / d if delta < 0 else 0.0
    if delta > 0:
        # divide through by the growing exponential
        e = math.exp(-expo * bmax)
        return (delta / d) * e / (k - e)
    return (-delta / d) / (1.0 - k * math.exp(expo * bmax))


@dataclass(frozen=True)
class LowerBound:
    bound: float
    tight: bool


def lolp_lower_bound(model: NetGenModel) -> LowerBound:
    """Negative-drift LOLP floor ``-drift / -r_min``, attained asymptotically
    when exactly one state discharges."""
    pi = invariant_distribution(model.q_matrix)
    delta = float(pi @ model.rates)
    if delta >= 0:
        raise DriftError("bound applies only to negative drift")
    return LowerBound(-delta / -model.r_min, len(model.negative_states) == 1)
