"""Decay rate of the LOLP by two independent routes.

Large-deviations route
    Uniformize the background chain at rate ``q``.  The scaled cumulant
    generating function of the (reversed) net flow per uniformized step is
    ``Lambda(theta) = log rho(M(theta))`` with
    ``M_lm(theta) = P_lm * q / (q + theta * r_l)`` on the open interval
    ``(-q / r_max, -q / r_min)`` and ``+inf`` outside.  The decay rate is
    ``sup{theta > 0 : Lambda(theta) < 0}``, found by bisection.

Eigenvalue route
    The smallest strictly positive eigenvalue of ``R^{-1} Q^T``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._backend import kernels
from .ctmc import (DEFAULT_Q_MULTIPLIER, NetGenModel, UniformizedChain,
                   default_uniformization_rate, invariant_distribution, uniformize)
from .errors import DriftError, NumericalError

PF_TOL = 1e-12
PF_MAX_ITER = 100_000
DENSE_FALLBACK_MAX_N = 500
ROOT_RTOL = 1e-10
ENDPOINT_EPS = 1e-9
POSITIVE_EIG_RTOL = 1e-9


@dataclass(frozen=True, eq=False)
class CgfEvaluator:
    chain: UniformizedChain
    rates: np.ndarray

    @classmethod
    def from_model(cls, model: NetGenModel, q_multiplier: float = DEFAULT_Q_MULTIPLIER):
        q = default_uniformization_rate(model.q_matrix, q_multiplier)
        return cls(uniformize(model.q_matrix, q), model.rates)

    @property
    def q_rate(self) -> float:
        return self.chain.q_rate

    @property
    def domain(self) -> tuple[float, float]:
        q = self.chain.q_rate
        return (-q / float(self.rates.max()), -q / float(self.rates.min()))

    def in_domain(self, theta: float) -> bool:
        lo, hi = self.domain
        return lo < theta < hi

    def matrix(self, theta: float) -> np.ndarray:
        q = self.chain.q_rate
        scale = q / (q + theta * self.rates)
        return np.ascontiguousarray(self.chain.p_matrix * scale[:, None])


def perron_root(m: np.ndarray, v0: Optional[np.ndarray] = None,
                tol: float = PF_TOL, max_iter: int = PF_MAX_ITER):
    """Perron-Frobenius eigenvalue and positive eigenvector of ``m``.

    Power iteration with Collatz-Wielandt stopping; falls back to a dense
    eigensolver for small matrices when iteration stalls.
    """
    m = np.ascontiguousarray(m, dtype=float)
    n = m.shape[0]
    if v0 is None:
        v0 = np.ones(n)
    rho, v, iters, ok = kernels.pf_eigen(m, np.asarray(v0, dtype=float), tol, max_iter)
    if ok:
        return rho, np.asarray(v)
    if n <= DENSE_FALLBACK_MAX_N:
        w, vecs = np.linalg.eig(m)
        k = int(np.argmax(w.real))
        vec = np.abs(vecs[:, k].real)
        return float(w[k].real), vec / vec.max()
    raise NumericalError(
        f"power iteration did not converge after {iters} iterations "
        f"(last estimate {rho:.12g}, n={n})")


def _cgf_with_vector(evaluator: CgfEvaluator, theta: float, v0=None):
    if theta == 0.0:
        return 0.0, np.ones(len(evaluator.rates))
    if not evaluator.in_domain(theta):
        return math.inf, None
    rho, v = perron_root(evaluator.matrix(theta), v0)
    if not rho > 0:
        raise NumericalError(f"non-positive Perron root {rho} at theta={theta}")
    return math.log(rho), v


def cgf(evaluator: CgfEvaluator, theta: float) -> float:
    """``Lambda(theta)``; ``math.inf`` outside the open domain."""
    return _cgf_with_vector(evaluator, float(theta))[0]


def _positive_drift(model: NetGenModel) -> float:
    delta = float(invariant_distribution(model.q_matrix) @ model.rates)
    if not delta > 0:
        raise DriftError("decay rate defined only for positive drift")
    return delta


def decay_rate_ld(model: NetGenModel, q_multiplier: float = DEFAULT_Q_MULTIPLIER) -> float:
    """Positive zero of ``Lambda`` by bracket expansion then bisection."""
    _positive_drift(model)
    ev = CgfEvaluator.from_model(model, q_multiplier)
    left, right = ev.domain
    eps = ENDPOINT_EPS * (right - left)
    top = right - eps
    val_top, _ = _cgf_with_vector(ev, top)
    if not val_top > 0:
        raise NumericalError(f"Lambda not positive near the domain endpoint ({val_top})")

    # smallest step with a resolvable negative value
    h = 1e-6 * right
    val, vec = _cgf_with_vector(ev, h)
    while not val < 0:
        h *= 0.5
        if h < 1e-16 * right:
            raise NumericalError("could not resolve Lambda < 0 next to theta = 0")
        val, vec = _cgf_with_vector(ev, h, vec)
    lo, v_lo = h, vec
    hi = None
    while hi is None:
        cand = 2.0 * lo
        if cand >= top:
            hi = top
            break
        val, vec = _cgf_with_vector(ev, cand, v_lo)
        if val < 0:
            lo, v_lo = cand, vec
        else:
            hi = cand
    while hi - lo > ROOT_RTOL * hi:
        mid = 0.5 * (lo + hi)
        val, vec = _cgf_with_vector(ev, mid, v_lo)
        if val < 0:
            lo, v_lo = mid, vec
        else:
            hi = mid
    return 0.5 * (lo + hi)


def decay_rate_eig(model: NetGenModel) -> float:
    """Smallest strictly positive eigenvalue of ``R^{-1} Q^T``."""
    _positive_drift(model)
    a = model.q_matrix.entries.T / model.rates[:, None]
    w, v = np.linalg.eig(a)
    rho = float(np.max(np.abs(w)))
    real = np.abs(w.imag) <= 1e-9 * rho
    cand = np.flatnonzero(real & (w.real > POSITIVE_EIG_RTOL * rho))
    if cand.size == 0:
        raise NumericalError("no strictly positive real eigenvalue of R^-1 Q^T")
    k = cand[np.argmin(w.real[cand])]
    lam = float(w[k].real)
    vec = v[:, k]
    resid = np.linalg.norm(a @ vec - lam * vec) / np.linalg.norm(vec)
    if resid > 1e-9 * max(np.linalg.norm(a, 2), 1.0):
        raise NumericalError(f"eigenpair residual {resid:.2e} too large")
    return lam


@dataclass(frozen=True)
class DecayRateReport:
    lambda_ld: float
    lambda_eig: float
    agreement_gap: float
    theta_domain: tuple
    q_rate: float
    cgf_samples: list = field(default_factory=list)

    @property
    def relative_gap(self) -> float:
        return self.agreement_gap / self.lambda_eig

    def to_dict(self) -> dict:
        return {
            "lambda_ld": self.lambda_ld,
            "lambda_eig": self.lambda_eig,
            "agreement_gap": self.agreement_gap,
            "relative_gap": self.relative_gap,
            "theta_domain": list(self.theta_domain),
            "q_rate": self.q_rate,
            "cgf_samples": [{"theta": t, "Lambda": (v if math.isfinite(v) else None)}
                            for t, v in self.cgf_samples],
        }


def cgf_table(evaluator: CgfEvaluator, n: int = 41, margin: float = 1e-3) -> list:
    left, right = evaluator.domain
    pad = margin * (right - left)
    thetas = np.linspace(left + pad, right - pad, n)
    return [(float(t), cgf(evaluator, float(t))) for t in thetas]


def decay_report(model: NetGenModel, q_multiplier: float = DEFAULT_Q_MULTIPLIER,
                 n_samples: int = 41) -> DecayRateReport:
    lam_eig = decay_rate_eig(model)
    lam_ld = decay_rate_ld(model, q_multiplier)
    ev = CgfEvaluator.from_model(model, q_multiplier)
    gap = abs(lam_ld - lam_eig)
    if gap > 1e-6 * lam_eig:
        warnings.warn(f"decay-rate routes disagree: relative gap {gap / lam_eig:.2e}")
    samples = cgf_table(ev, n_samples) if n_samples else []
    return DecayRateReport(lam_ld, lam_eig, gap, ev.domain, ev.q_rate, samples)
