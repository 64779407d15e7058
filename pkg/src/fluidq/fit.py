"""Fit a net-generation model to a sampled power trace.

The pipeline quantizes samples into power bins, counts bin-to-bin
transitions between consecutive samples, takes the row-normalized counts
as the transition matrix ``T`` of a DTMC sampled every ``tau``, and
linearizes ``T = exp(Q tau)`` to ``Q = (T - I) / tau``.  Net generation in
bin ``i`` is the bin center minus a constant demand.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.sparse.csgraph import connected_components

from .ctmc import ModelUnits, NetGenModel, RateMatrix
from .errors import ModelError

log = logging.getLogger(__name__)

MIN_TRANSITIONS = 10
TAYLOR_WARN = 0.1

# power bins (MW) suited to the Bonneville Power Administration wind feed
BPA_EDGES = (0, 60, 120, 180, 240, 300, 450, 600, 900, 1200, 1500, 1800, 2100,
             2400, 2700, 3000, 3300, 3600, 3900, 4200, 4500)


class InsufficientDataError(ModelError):
    pass


@dataclass(frozen=True, eq=False)
class BinningSpec:
    edges: np.ndarray

    def __post_init__(self):
        e = np.array(self.edges, dtype=float)
        if e.ndim != 1 or e.size < 3:
            raise ModelError("binning needs at least two bins (three edges)")
        if not np.all(np.diff(e) > 0):
            raise ModelError("bin edges must be strictly increasing")
        e.setflags(write=False)
        object.__setattr__(self, "edges", e)

    @property
    def n_bins(self) -> int:
        return self.edges.size - 1

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])


@dataclass(frozen=True, eq=False)
class FittedModel:
    binning: BinningSpec
    t_matrix: np.ndarray
    tau: float
    q_matrix: RateMatrix
    retained_states: np.ndarray
    dropped_states: list
    visit_counts: np.ndarray
    transition_counts: np.ndarray
    warnings: list = field(default_factory=list)

    @property
    def centers(self) -> np.ndarray:
        return self.binning.centers[self.retained_states]

    @property
    def sample_counts(self) -> dict:
        return {"visits": self.visit_counts, "transitions": self.transition_counts}

    def to_dict(self) -> dict:
        return {
            "format": "fluidq-fit",
            "version": 1,
            "bin_edges": self.binning.edges.tolist(),
            "tau": self.tau,
            "retained_states": self.retained_states.tolist(),
            "dropped_states": list(self.dropped_states),
            "centers": self.centers.tolist(),
            "visit_counts": self.visit_counts.tolist(),
            "transition_counts": self.transition_counts.tolist(),
            "T": self.t_matrix.tolist(),
            "Q": self.q_matrix.entries.tolist(),
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FittedModel":
        return cls(
            binning=BinningSpec(doc["bin_edges"]),
            t_matrix=np.array(doc["T"], dtype=float),
            tau=float(doc["tau"]),
            q_matrix=RateMatrix(doc["Q"]),
            retained_states=np.array(doc["retained_states"], dtype=int),
            dropped_states=list(doc["dropped_states"]),
            visit_counts=np.array(doc["visit_counts"], dtype=np.int64),
            transition_counts=np.array(doc["transition_counts"], dtype=np.int64),
            warnings=list(doc.get("warnings", [])),
        )


def quantize(trace, binning: BinningSpec) -> np.ndarray:
    """Bin index per sample: ``edges[i] <= s < edges[i+1]``, last bin closed."""
    x = np.asarray(trace, dtype=float)
    e = binning.edges
    out = (x < e[0]) | (x > e[-1]) | ~np.isfinite(x)
    if np.any(out):
        k = int(np.flatnonzero(out)[0])
        raise ModelError(f"sample {k} (value {x[k]}) outside bin range [{e[0]}, {e[-1]}]")
    idx = np.searchsorted(e, x, side="right") - 1
    return np.minimum(idx, binning.n_bins - 1)


def _as_segments(states) -> list[np.ndarray]:
    if isinstance(states, np.ndarray) and states.ndim == 1:
        return [states]
    if len(states) and np.ndim(states[0]) == 0:
        return [np.asarray(states)]
    return [np.asarray(s) for s in states]


def _count_transitions(segments, n_bins: int) -> np.ndarray:
    if sum(max(len(s) - 1, 0) for s in segments) < 1:
        raise ModelError("need at least two consecutive samples")
    counts = np.zeros((n_bins, n_bins), dtype=np.int64)
    for seg in segments:
        seg = np.asarray(seg, dtype=np.intp)
        if seg.size >= 2:
            np.add.at(counts, (seg[:-1], seg[1:]), 1)
    return counts


def estimate_transition_matrix(states, n_bins: int, pseudo_count: float = 0.0):
    """Maximum-likelihood DTMC transition matrix from a state sequence.

    ``states`` may be a single sequence or a list of contiguous segments;
    no transition is counted across segment boundaries.  Rows without
    outgoing transitions are left at zero and reported with a warning.

    Returns
    -------
    t_matrix : ndarray, shape (n_bins, n_bins)
    counts : ndarray of int, shape (n_bins, n_bins)
    """
    counts = _count_transitions(_as_segments(states), n_bins)
    c = counts + float(pseudo_count)
    totals = c.sum(axis=1)
    t = np.divide(c, totals[:, None], out=np.zeros_like(c, dtype=float), where=totals[:, None] > 0)
    empty = np.flatnonzero(totals == 0)
    if empty.size:
        warnings.warn(f"bins {empty.tolist()} have no outgoing transitions", stacklevel=2)
    return t, counts


def to_rate_matrix(t_matrix, tau: float) -> RateMatrix:
    """First-order inversion of ``T = exp(Q tau)``: ``Q = (T - I) / tau``."""
    t = np.asarray(t_matrix, dtype=float)
    if not tau > 0:
        raise ModelError("tau must be positive")
    q = t / tau
    np.fill_diagonal(q, 0.0)
    np.fill_diagonal(q, -q.sum(axis=1))
    return RateMatrix(q)


def _retain(counts: np.ndarray) -> np.ndarray:
    keep = np.ones(counts.shape[0], dtype=bool)
    keep &= counts.sum(axis=1) + counts.sum(axis=0) > 0
    while True:
        sub = counts[np.ix_(keep, keep)]
        dead = sub.sum(axis=1) == 0
        if not dead.any():
            return np.flatnonzero(keep)
        keep[np.flatnonzero(keep)[dead]] = False
        if not keep.any():
            return np.flatnonzero(keep)


def fit_pipeline(trace, sample_interval: float, binning: BinningSpec, demand: Optional[float] = None, *,
                 min_transitions: int = MIN_TRANSITIONS, pseudo_count: float = 0.0,
                 units: ModelUnits | None = None):
    """Quantize, estimate ``T``, convert to ``Q`` and (optionally) build the model.

    ``trace`` is a sample vector or a list of contiguous sample segments.
    Bins never visited, or whose only visits end the trace, are dropped and
    the remaining states re-indexed.

    Returns
    -------
    (FittedModel, NetGenModel or None)
    """
    if not sample_interval > 0:
        raise ModelError("sample_interval must be positive")
    if not isinstance(binning, BinningSpec):
        binning = BinningSpec(binning)
    segments = _as_segments(trace)
    if sum(len(s) for s in segments) < 2:
        raise ModelError("trace shorter than two samples")
    states = [quantize(s, binning) for s in segments]
    n = binning.n_bins
    visits = np.bincount(np.concatenate(states), minlength=n)
    counts = _count_transitions(states, n)
    keep = _retain(counts)
    dropped = sorted(set(range(n)) - set(keep.tolist()))
    unvisited = [i for i in dropped if visits[i] == 0]
    stranded = [i for i in dropped if visits[i] > 0]
    if unvisited:
        log.info("dropping %d unvisited bins: %s", len(unvisited), unvisited)
    notes = []
    if stranded:
        msg = f"dropping visited bins {stranded} with no transitions into retained bins"
        warnings.warn(msg, stacklevel=2)
        notes.append(msg)
    if keep.size < 2:
        raise ModelError(f"only {keep.size} bin(s) retained; need at least two")
    sub = counts[np.ix_(keep, keep)]
    ncomp, _ = connected_components(sub > 0, directed=True, connection="strong")
    if ncomp != 1:
        raise ModelError(f"retained bins are not strongly connected ({ncomp} classes)")
    row_totals = sub.sum(axis=1)
    thin = keep[row_totals < min_transitions]
    if thin.size:
        raise InsufficientDataError(
            f"bins {thin.tolist()} have fewer than {min_transitions} observed transitions",
            hint="merge sparse bins, supply more data, or lower min_transitions")
    c = sub + float(pseudo_count)
    t = c / c.sum(axis=1, keepdims=True)
    q = to_rate_matrix(t, sample_interval)
    stiffness = float(sample_interval * np.max(q.exit_rates()))
    if stiffness > TAYLOR_WARN:
        msg = (f"tau * max exit rate = {stiffness:.3f} > {TAYLOR_WARN}; "
               "the linearization Q = (T - I)/tau may be inaccurate")
        warnings.warn(msg, stacklevel=2)
        notes.append(msg)
    fitted = FittedModel(binning, t, float(sample_interval), q, keep, dropped,
                         visits, counts, notes)
    model = build_model(fitted, demand, units) if demand is not None else None
    return fitted, model


def build_model(fitted: FittedModel, demand: float, units: ModelUnits | None = None) -> NetGenModel:
    """Net-generation model for a constant demand level."""
    demand = float(demand)
    if not demand > 0:
        raise ModelError("demand must be positive")
    centers = fitted.centers
    rates = centers - demand
    scale = max(float(np.max(np.abs(centers))), abs(demand))
    hit = np.flatnonzero(np.abs(rates) <= 1e-12 * scale)
    if hit.size:
        raise ModelError(
            f"demand {demand} equals the center of bin(s) {fitted.retained_states[hit].tolist()}: "
            "zero net-generation state",
            hint="shift the demand slightly or merge the bins around it")
    if np.all(rates > 0) or np.all(rates < 0):
        raise ModelError("degenerate model: demand lies outside the range of bin centers")
    labels = tuple(f"bin{int(i)}" for i in fitted.retained_states)
    return NetGenModel(fitted.q_matrix, rates, labels, units or ModelUnits())
