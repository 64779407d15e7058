"""Battery sizing for a loss-of-load target.

For positive drift the LOLP decays like ``c * exp(-lambda * bmax)``, so the
size for a target ``delta`` is about ``log(1/delta) / lambda`` plus a
constant offset ``log(c) / lambda``.  ``size_exact`` finds the true size by
bisection on the fluid solver.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .ctmc import NetGenModel, invariant_distribution
from .errors import DriftError, ModelError, NumericalError, UnattainableTargetError
from .fluid import DRIFT_RTOL, lolp_lower_bound, reliability, solve_stationary, spectrum
from .ldp import decay_rate_eig

SIZE_RTOL = 1e-6
LOWER_FRACTION = 1e-9
UPPER_FACTOR = 4.0
MAX_DOUBLINGS = 200


def _check_lambda(lam: float) -> float:
    lam = float(lam)
    if not (lam > 0 and math.isfinite(lam)):
        raise ModelError(f"decay rate must be positive and finite, got {lam}")
    return lam


def _check_fraction(x: float, name: str) -> float:
    x = float(x)
    if not 0.0 < x <= 1.0:
        raise ModelError(f"{name} must lie in (0, 1], got {x}")
    return x


def size_estimate(lam: float, delta: float) -> float:
    """Large-deviations size ``log(1/delta) / lambda``."""
    return math.log(1.0 / _check_fraction(delta, "delta")) / _check_lambda(lam)


def incremental_size(lam: float, epsilon: float) -> float:
    """Extra capacity that shrinks the LOLP by a factor ``epsilon``."""
    return math.log(1.0 / _check_fraction(epsilon, "epsilon")) / _check_lambda(lam)


def _lolp_fn(model: NetGenModel):
    spec = spectrum(model)
    return lambda b: reliability(solve_stationary(model, b, spec)).lolp


def _bisect(lolp, delta: float, lo: float, hi: float, rtol: float) -> float:
    # invariant: lolp(lo) > delta >= lolp(hi)
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if lolp(mid) > delta:
            lo = mid
        else:
            hi = mid
    return hi


def size_exact(model: NetGenModel, delta: float, rtol: float = SIZE_RTOL, *,
               allow_negative_drift: bool = False) -> float:
    """Smallest ``bmax`` whose solver LOLP does not exceed ``delta``.

    The LOLP decreases strictly in ``bmax`` from ``sum(pi[S-])`` at an empty
    battery, so a target at or above that value needs no battery and 0 is
    returned.  For negative drift the LOLP never falls below
    ``-drift / -r_min``; targets under that bound raise
    :class:`UnattainableTargetError`.  Targets above it are solvable but
    outside the asymptotic regime and require ``allow_negative_drift``.
    """
    delta = _check_fraction(delta, "delta")
    pi = invariant_distribution(model.q_matrix)
    d = float(pi @ model.rates)
    if abs(d) <= DRIFT_RTOL * float(np.max(np.abs(model.rates))):
        raise DriftError("zero drift: the fluid solution is degenerate")
    if delta >= float(pi[model.rates < 0].sum()):
        return 0.0

    if d > 0:
        scale = size_estimate(decay_rate_eig(model), delta)
    else:
        bound = lolp_lower_bound(model).bound
        if delta <= bound:
            raise UnattainableTargetError(
                f"target {delta:g} unattainable at any battery size: "
                f"LOLP >= {bound:.6g} under negative drift", bound)
        if not allow_negative_drift:
            raise DriftError(
                "negative drift: sizing is outside the decay-rate regime",
                hint=f"targets above the bound {bound:.6g} can be sized with allow_negative_drift")
        warnings.warn(f"sizing under negative drift; LOLP floor is {bound:.6g}", stacklevel=2)
        scale = float(np.max(np.abs(model.rates)) / np.max(model.q_matrix.exit_rates()))

    lolp = _lolp_fn(model)
    lo = LOWER_FRACTION * scale
    if not lolp(lo) > delta:
        return lo
    hi = UPPER_FACTOR * scale
    for _ in range(MAX_DOUBLINGS):
        if lolp(hi) <= delta:
            return _bisect(lolp, delta, lo, hi, rtol)
        lo, hi = hi, 2.0 * hi
    if d < 0:
        raise UnattainableTargetError(
            f"no battery up to {hi:.3g} reaches LOLP {delta:g}", lolp_lower_bound(model).bound)
    raise NumericalError(f"bracket expansion failed to reach LOLP {delta:g} (bmax up to {hi:.3g})")


@dataclass(frozen=True)
class SizingResult:
    target_lolp: float
    lam: float
    estimate_bmax: float
    exact_bmax: Optional[float] = None

    @property
    def offset(self) -> Optional[float]:
        if self.exact_bmax is None:
            return None
        return self.exact_bmax - self.estimate_bmax

    def to_dict(self) -> dict:
        return {
            "target_lolp": self.target_lolp,
            "lambda": self.lam,
            "estimate_bmax": self.estimate_bmax,
            "exact_bmax": self.exact_bmax,
            "offset": self.offset,
        }


def size_report(model: NetGenModel, delta: float, exact: bool = True,
                rtol: float = SIZE_RTOL) -> SizingResult:
    lam = decay_rate_eig(model)
    est = size_estimate(lam, delta)
    ex = size_exact(model, delta, rtol) if exact else None
    return SizingResult(float(delta), lam, est, ex)


@dataclass(frozen=True)
class PrefactorEstimate:
    log_c: float
    offset: float
    bmax_grid: tuple
    max_residual: float


def estimate_prefactor(model: NetGenModel, bmax_grid=None) -> PrefactorEstimate:
    """Least-squares ``log c`` from ``log LOLP + lambda * bmax`` on a grid.

    The default grid spans ``lambda * bmax`` from 10 to 30, far enough out
    that the dominant exponential has taken over for typical models.
    """
    lam = decay_rate_eig(model)
    grid = (np.linspace(10.0, 30.0, 11) / lam) if bmax_grid is None \
        else np.asarray(bmax_grid, dtype=float)
    lolp = _lolp_fn(model)
    y = np.array([math.log(lolp(b)) + lam * b for b in grid])
    log_c = float(y.mean())
    return PrefactorEstimate(log_c, log_c / lam, tuple(float(b) for b in grid),
                             float(np.max(np.abs(y - log_c))))
