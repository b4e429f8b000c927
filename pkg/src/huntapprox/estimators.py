"""Estimator-style wrappers over the operator-valued parts of the library.

Each wrapper takes the generator as a hyper-parameter (like a kernel in a
Gaussian-process model), does its factorizations in ``fit`` and maps rows of
``X`` (functions on the state space) in ``transform``. They follow the
scikit-learn conventions, so ``get_params``/``set_params``/``clone`` and
pipelines work.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .kernels import resolvent
from .potential import capacity, reduite
from .space import StateSpace, as_mask
from .validation import check_generator, check_state_functions, check_subsets
from .yosida import approx_semigroup, semigroup_expm, yosida_generator

__all__ = ["ResolventTransformer", "YosidaSemigroup", "ReduiteTransformer", "StrictCapacity"]


class _GeneratorFitMixin:
    def _fit_generator(self, X):
        self.generator_ = check_generator(self.generator)
        self.n_features_in_ = self.generator_.n_states
        if X is not None:
            check_state_functions(X, self.n_features_in_)


class ResolventTransformer(_GeneratorFitMixin, TransformerMixin, BaseEstimator):
    """Apply ``G_alpha = (alpha I - L)^{-1}`` to each row of ``X``."""

    def __init__(self, generator=None, alpha=1.0):
        self.generator = generator
        self.alpha = alpha

    def fit(self, X=None, y=None):
        self._fit_generator(X)
        self.kernel_ = resolvent(self.generator_, self.alpha)
        return self

    def transform(self, X):
        check_is_fitted(self, "kernel_")
        X = check_state_functions(X, self.n_features_in_)
        return X @ self.kernel_.matrix.T


class YosidaSemigroup(_GeneratorFitMixin, TransformerMixin, BaseEstimator):
    """Apply ``P^beta_t`` to each row of ``X``.

    Parameters
    ----------
    generator : SubMarkovGenerator or array_like
    beta : float
        Yosida parameter.
    t : float
        Time.
    method : {"series", "expm"}
        Poisson-weighted series in ``beta R_beta`` or matrix exponential of
        ``L^beta``.
    tail_tol : float
        Truncation tolerance of the series.
    """

    def __init__(self, generator=None, beta=1.0, t=1.0, method="series", tail_tol=1e-13):
        self.generator = generator
        self.beta = beta
        self.t = t
        self.method = method
        self.tail_tol = tail_tol

    def fit(self, X=None, y=None):
        if self.method not in ("series", "expm"):
            raise ValueError(f"method must be 'series' or 'expm', got {self.method!r}")
        self._fit_generator(X)
        self.approximation_ = yosida_generator(self.generator_, self.beta)
        return self

    def transform(self, X):
        check_is_fitted(self, "approximation_")
        X = check_state_functions(X, self.n_features_in_)
        if self.method == "expm":
            return np.array([semigroup_expm(self.approximation_, self.t, f) for f in X])
        return np.array([approx_semigroup(self.approximation_, self.t, f, self.tail_tol).values for f in X])


class ReduiteTransformer(_GeneratorFitMixin, TransformerMixin, BaseEstimator):
    """Replace each row ``f`` by its reduced function on ``subset``."""

    def __init__(self, generator=None, subset=None, alpha=1.0, tol=1e-10):
        self.generator = generator
        self.subset = subset
        self.alpha = alpha
        self.tol = tol

    def fit(self, X=None, y=None):
        self._fit_generator(X)
        self.mask_ = as_mask(self.subset, self.n_features_in_) if self.subset is not None else np.ones(self.n_features_in_, bool)
        return self

    def transform(self, X):
        check_is_fitted(self, "mask_")
        X = check_state_functions(X, self.n_features_in_)
        return np.array([reduite(f, self.mask_, self.generator_, self.alpha, self.tol).values for f in X])


class StrictCapacity(_GeneratorFitMixin, BaseEstimator):
    """Capacity of sets given as indicator rows; ``predict`` returns one value per row."""

    def __init__(self, generator=None, space=None):
        self.generator = generator
        self.space = space

    def fit(self, X=None, y=None):
        self._fit_generator(X)
        sp = self.space if self.space is not None else StateSpace.uniform(self.n_features_in_)
        if not isinstance(sp, StateSpace) or sp.n_states != self.n_features_in_:
            raise ValueError("space must be a StateSpace matching the generator")
        self.space_ = sp
        return self

    def predict(self, X):
        check_is_fitted(self, "space_")
        sets = check_subsets(X, self.n_features_in_)
        return np.array([capacity(U, self.space_, self.generator_).value for U in sets])
