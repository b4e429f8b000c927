"""Input validation shared by the estimator wrappers."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .kernels import SubMarkovGenerator


def check_generator(generator) -> SubMarkovGenerator:
    """Accept a :class:`SubMarkovGenerator` or a rate matrix."""
    if generator is None:
        raise ValueError("generator must be set before fitting")
    if isinstance(generator, SubMarkovGenerator):
        return generator
    return SubMarkovGenerator(check_array(generator, ensure_2d=True, dtype=float))


def check_state_functions(X, n_states: int) -> np.ndarray:
    """Rows of ``X`` are functions on the ``n_states`` states; 1-d input is one row."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    X = check_array(X, dtype=float)
    if X.shape[1] != n_states:
        raise ValueError(f"X has {X.shape[1]} features, but the generator has {n_states} states")
    return X


def check_subsets(X, n_states: int) -> np.ndarray:
    """Rows of ``X`` are subsets of ``E`` encoded as 0/1 indicator vectors."""
    X = check_state_functions(X, n_states)
    if not np.all((X == 0) | (X == 1)):
        raise ValueError("subsets must be given as 0/1 indicator rows")
    return X.astype(bool)
