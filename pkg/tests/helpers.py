"""Shared model generators and strategies for the test suite."""

import numpy as np
from hypothesis import strategies as st

from fluidq.ctmc import random_reversible_model


def models_with_drift(count, seed, sign, sizes=(2, 3, 4, 5, 6)):
    rng = np.random.default_rng(seed)
    return [random_reversible_model(int(sizes[k % len(sizes)]), rng, drift_sign=sign)
            for k in range(count)]


@st.composite
def reversible_models(draw, n_min=2, n_max=7, drift_sign=0):
    n = draw(st.integers(n_min, n_max))
    seed = draw(st.integers(0, 2**32 - 1))
    return random_reversible_model(n, np.random.default_rng(seed), drift_sign=drift_sign)
