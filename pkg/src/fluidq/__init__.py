"""Loss-of-load probability for a renewable generator with a finite battery.

The battery is a Markov modulated fluid queue: a continuous-time Markov
chain picks the net generation rate (generation minus demand) and the
battery level integrates it between 0 and ``bmax``.
"""

from ._backend import BACKEND
from .ctmc import (ModelUnits, NetGenModel, RateMatrix, drift, invariant_distribution,
                   load_model, reverse_model, save_model, two_state_model, uniformize)
from .errors import (DriftError, FluidqError, ModelError, NumericalError,
                     UnattainableTargetError)
from .fit import BinningSpec, FittedModel, fit_pipeline
from .fluid import (ReliabilityReport, lolp_curve, lolp_lower_bound, reliability,
                    solve_stationary, two_state_lolp)
from .ldp import decay_rate_eig, decay_rate_ld, decay_report
from .sim import simulate_ctmc, simulate_lolp
from .sizing import incremental_size, size_estimate, size_exact

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "BinningSpec", "DriftError", "FittedModel", "FluidqError", "ModelError",
    "ModelUnits", "NetGenModel", "NumericalError", "RateMatrix", "ReliabilityReport",
    "UnattainableTargetError", "decay_rate_eig", "decay_rate_ld", "decay_report", "drift",
    "fit_pipeline", "incremental_size", "invariant_distribution", "load_model",
    "lolp_curve", "lolp_lower_bound", "reliability", "reverse_model", "save_model",
    "simulate_ctmc", "simulate_lolp", "size_estimate", "size_exact", "solve_stationary",
    "two_state_lolp", "two_state_model", "uniformize",
]
