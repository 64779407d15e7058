"""Continuous-time Markov chain primitives for the net-generation model.

A :class:`NetGenModel` couples an irreducible rate matrix with one nonzero
net-generation rate (generation minus demand) per state.  Everything here
is immutable: arrays are copied on construction and marked read-only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import InputFileError, ModelError, NumericalError, TraceFormatError

ROW_SUM_RTOL = 1e-12
DEFAULT_Q_MULTIPLIER = 1.1

POWER_UNITS = {"W": 1.0, "kW": 1e3, "MW": 1e6, "GW": 1e9}
TIME_UNITS = {"s": 1.0, "min": 60.0, "h": 3600.0}
JOULES_PER_KWH = 3.6e6


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ModelUnits:
    """Units of the rate vector and of time.

    Energy is measured in ``power * time``; :meth:`joules_per_energy_unit`
    converts it to SI.
    """

    power: str = "MW"
    time: str = "s"

    def __post_init__(self):
        if self.power not in POWER_UNITS:
            raise ModelError(f"unknown power unit {self.power!r}; expected one of {sorted(POWER_UNITS)}")
        if self.time not in TIME_UNITS:
            raise ModelError(f"unknown time unit {self.time!r}; expected one of {sorted(TIME_UNITS)}")

    def joules_per_energy_unit(self) -> float:
        return POWER_UNITS[self.power] * TIME_UNITS[self.time]

    def to_dict(self):
        return {"power": self.power, "time": self.time,
                "energy": f"{self.power}*{self.time}"}


class RateMatrix:
    """Validated generator of an irreducible finite CTMC.

    Parameters
    ----------
    entries : array_like, shape (n, n)
        Off-diagonal entries must be nonnegative and every row must sum to
        zero (relative tolerance ``1e-12 * max|entry|``).  The directed graph
        of nonzero off-diagonal entries must be strongly connected.
    """

    __slots__ = ("_entries",)

    def __init__(self, entries):
        q = _frozen(entries)
        if q.ndim != 2 or q.shape[0] != q.shape[1] or q.shape[0] < 1:
            raise ModelError(f"rate matrix must be square, got shape {q.shape}")
        if not np.all(np.isfinite(q)):
            raise ModelError("rate matrix has non-finite entries")
        n = q.shape[0]
        off = q[~np.eye(n, dtype=bool)]
        if np.any(off < 0):
            raise ModelError("rate matrix has negative off-diagonal entries")
        scale = np.max(np.abs(q)) if q.size else 0.0
        row_sums = q.sum(axis=1)
        if np.any(np.abs(row_sums) > ROW_SUM_RTOL * max(scale, np.finfo(float).tiny)):
            worst = int(np.argmax(np.abs(row_sums)))
            raise ModelError(f"rate matrix row {worst} sums to {row_sums[worst]:.3e}, not 0")
        if n > 1:
            adjacency = (q > 0) & ~np.eye(n, dtype=bool)
            ncomp, _ = connected_components(adjacency, directed=True, connection="strong")
            if ncomp != 1:
                raise ModelError(f"rate matrix is not irreducible ({ncomp} strongly connected classes)")
        self._entries = q

    @property
    def entries(self) -> np.ndarray:
        return self._entries

    @property
    def n(self) -> int:
        return self._entries.shape[0]

    def exit_rates(self) -> np.ndarray:
        return -np.diag(self._entries)

    def __array__(self, dtype=None, copy=None):
        return self._entries if dtype is None else self._entries.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, RateMatrix):
            return NotImplemented
        return np.array_equal(self._entries, other._entries)

    def __hash__(self):
        return hash(self._entries.tobytes())

    def __repr__(self):
        return f"RateMatrix(n={self.n})"


def as_rate_matrix(q) -> RateMatrix:
    return q if isinstance(q, RateMatrix) else RateMatrix(q)


@dataclass(frozen=True, eq=False)
class NetGenModel:
    """Rate matrix plus per-state net-generation rates.

    ``rates[i] > 0`` charges the battery, ``rates[i] < 0`` discharges it.
    Zero rates are not allowed and both signs must be present.
    """

    q_matrix: RateMatrix
    rates: np.ndarray
    labels: Optional[tuple] = None
    units: ModelUnits = field(default_factory=ModelUnits)

    def __post_init__(self):
        q = as_rate_matrix(self.q_matrix)
        r = _frozen(self.rates)
        if r.ndim != 1 or r.shape[0] != q.n:
            raise ModelError(f"rates must be a vector of length {q.n}, got shape {r.shape}")
        if not np.all(np.isfinite(r)):
            raise ModelError("rates contain non-finite values")
        if np.any(r == 0):
            bad = np.flatnonzero(r == 0).tolist()
            raise ModelError(f"states {bad} have zero net generation rate",
                             hint="shift the demand or merge the offending bins")
        if not np.any(r > 0) or not np.any(r < 0):
            raise ModelError("degenerate model: all net generation rates have the same sign")
        labels = self.labels
        if labels is not None:
            labels = tuple(str(s) for s in labels)
            if len(labels) != q.n:
                raise ModelError(f"expected {q.n} labels, got {len(labels)}")
        object.__setattr__(self, "q_matrix", q)
        object.__setattr__(self, "rates", r)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.q_matrix.n

    @property
    def positive_states(self) -> np.ndarray:
        return np.flatnonzero(self.rates > 0)

    @property
    def negative_states(self) -> np.ndarray:
        return np.flatnonzero(self.rates < 0)

    @property
    def r_max(self) -> float:
        return float(self.rates.max())

    @property
    def r_min(self) -> float:
        return float(self.rates.min())

    def rate_diag(self) -> np.ndarray:
        return np.diag(self.rates)

    def __eq__(self, other):
        if not isinstance(other, NetGenModel):
            return NotImplemented
        return (self.q_matrix == other.q_matrix
                and np.array_equal(self.rates, other.rates)
                and self.labels == other.labels
                and self.units == other.units)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class UniformizedChain:
    """Uniformized chain: Poisson clock of rate ``q_rate`` and jump matrix ``p_matrix``."""

    q_rate: float
    p_matrix: np.ndarray


def invariant_distribution(q_matrix) -> np.ndarray:
    """Stationary distribution of an irreducible CTMC.

    Solves the augmented system ``[Q^T; 1^T] pi = [0; 1]`` by least squares
    after scaling ``Q`` to unit max-norm.
    """
    q = as_rate_matrix(q_matrix).entries
    n = q.shape[0]
    if n == 1:
        return _frozen([1.0])
    scale = np.max(np.abs(q))
    a = np.vstack([q.T / scale, np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, _, rank, _ = np.linalg.lstsq(a, b, rcond=None)
    if rank < n:
        raise ModelError("rate matrix is not irreducible (null space dimension != 1)")
    if np.any(pi <= 0):
        raise ModelError("rate matrix is not irreducible (non-positive stationary mass)")
    pi = pi / pi.sum()
    residual = np.max(np.abs(pi @ q)) / scale
    if residual > 1e-10:
        raise NumericalError(f"stationary distribution residual {residual:.2e} exceeds 1e-10")
    return _frozen(pi)


def drift(model: NetGenModel) -> float:
    """Steady-state mean net generation ``sum_i pi_i r_i``."""
    pi = invariant_distribution(model.q_matrix)
    return float(pi @ model.rates)


def default_uniformization_rate(q_matrix, multiplier: float = DEFAULT_Q_MULTIPLIER) -> float:
    exit_max = float(np.max(as_rate_matrix(q_matrix).exit_rates()))
    return multiplier * exit_max


def uniformize(q_matrix, q_rate: Optional[float] = None) -> UniformizedChain:
    q = as_rate_matrix(q_matrix)
    exit_max = float(np.max(q.exit_rates()))
    if q_rate is None:
        q_rate = DEFAULT_Q_MULTIPLIER * exit_max
    q_rate = float(q_rate)
    if not q_rate > exit_max:
        raise ModelError(f"uniformization rate too small: q={q_rate} must exceed max exit rate {exit_max}")
    p = np.eye(q.n) + q.entries / q_rate
    # clip tiny negative round-off on the diagonal
    p = np.clip(p, 0.0, 1.0)
    return UniformizedChain(q_rate, _frozen(p))


def reverse_model(model: NetGenModel) -> NetGenModel:
    """Swap the roles of generation and demand: same ``Q``, negated rates."""
    return NetGenModel(model.q_matrix, -model.rates, model.labels, model.units)


def is_reversible(q_matrix, rtol: float = 1e-9) -> bool:
    """Detailed balance check ``pi_i Q_ij == pi_j Q_ji``."""
    q = as_rate_matrix(q_matrix).entries
    pi = invariant_distribution(q)
    flux = pi[:, None] * q
    return bool(np.max(np.abs(flux - flux.T)) <= rtol * np.max(np.abs(flux)))


def random_reversible_model(n: int, rng: np.random.Generator, drift_sign: int = 1,
                            density: float = 0.6, min_drift_ratio: float = 0.05,
                            rate_range=(0.2, 2.0)) -> NetGenModel:
    """Draw a random reversible model with a drift of the requested sign.

    The rate matrix is ``Q_ij = S_ij / pi_i`` for a random symmetric weight
    matrix ``S`` containing a Hamiltonian path (hence irreducible).  Rates
    are redrawn until ``|drift| >= min_drift_ratio * max|r|`` with the
    requested sign; ``drift_sign=0`` accepts either sign.
    """
    if n < 2:
        raise ModelError("need at least two states")
    pi = rng.dirichlet(np.full(n, 3.0)) + 0.02
    pi /= pi.sum()
    s = np.zeros((n, n))
    order = rng.permutation(n)
    for a, b in zip(order[:-1], order[1:]):
        s[a, b] = s[b, a] = rng.uniform(0.1, 1.0)
    extra = np.triu(rng.random((n, n)) < density, 1)
    w = rng.uniform(0.05, 1.0, size=(n, n))
    s = np.where(extra & (s == 0), w, s)
    s = np.triu(s, 1)
    s = s + s.T
    q = s / pi[:, None]
    np.fill_diagonal(q, 0.0)
    np.fill_diagonal(q, -q.sum(axis=1))
    lo, hi = rate_range
    for _ in range(10_000):
        mags = rng.uniform(lo, hi, size=n)
        signs = rng.choice([-1.0, 1.0], size=n)
        if np.all(signs > 0) or np.all(signs < 0):
            continue
        r = mags * signs
        d = float(pi @ r)
        if abs(d) < min_drift_ratio * np.max(np.abs(r)):
            continue
        if drift_sign and np.sign(d) != np.sign(drift_sign):
            continue
        return NetGenModel(RateMatrix(q), r)
    raise RuntimeError("could not draw rates with the requested drift")


def two_state_model(a: float, b: float, g: float, d: float) -> NetGenModel:
    """Generation alternating between 0 (rate ``a`` out) and ``g`` (rate ``b`` out)
    against constant demand ``d``."""
    q = np.array([[-a, a], [b, -b]], dtype=float)
    return NetGenModel(RateMatrix(q), np.array([-d, g - d], dtype=float),
                       labels=("off", "on"))


# -- serialization -------------------------------------------------------

MODEL_FORMAT = "fluidq-model"


def model_to_dict(model: NetGenModel) -> dict:
    labels = list(model.labels) if model.labels is not None else [str(i) for i in range(model.n)]
    return {
        "format": MODEL_FORMAT,
        "version": 1,
        "units": model.units.to_dict(),
        "states": labels,
        "Q": [[float(x) for x in row] for row in model.q_matrix.entries],
        "rates": [float(x) for x in model.rates],
    }


def model_from_dict(doc: dict) -> NetGenModel:
    try:
        units = doc.get("units", {})
        units = ModelUnits(units.get("power", "MW"), units.get("time", "s"))
        q = np.array(doc["Q"], dtype=float)
        rates = np.array(doc["rates"], dtype=float)
        states = doc.get("states")
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise TraceFormatError(f"malformed model document: {exc}") from exc
    return NetGenModel(RateMatrix(q), rates, tuple(states) if states is not None else None, units)


def save_model(model: NetGenModel, path) -> None:
    # json emits repr() floats: shortest string that round-trips exactly
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2) + "\n")


def load_model(path) -> NetGenModel:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputFileError(f"cannot read model file {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TraceFormatError(f"model file {path} is not valid JSON: {exc}") from exc
    return model_from_dict(doc)

