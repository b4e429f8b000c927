"""Yosida approximation: bounded generators, their semigroups and resolvents."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg
from scipy.stats import poisson

from .exceptions import NumericalFailure
from .kernels import ExtendedKernel, SubMarkovGenerator, extend_cemetery, resolvent
from .space import StateSpace, h_inner

__all__ = [
    "YosidaApprox",
    "SemigroupEvaluation",
    "ConvergenceTable",
    "DEFAULT_BETA_GRID",
    "yosida_generator",
    "approx_semigroup",
    "semigroup_expm",
    "target_semigroup",
    "approx_resolvent",
    "approx_form_eval",
    "convergence_table",
    "fit_order",
]

DEFAULT_BETA_GRID = 2.0 ** np.arange(0, 13)
MAX_SERIES_TERMS = 200_000


@dataclass(frozen=True, eq=False)
class YosidaApprox:
    """Bounded approximation ``L^beta = beta (beta G_beta - I)`` of a generator.

    ``chain_step`` is ``beta R_beta`` on ``E_Delta`` (rows sum to one), the
    one-step transition of the subordinated chain.
    """

    beta: float
    L_beta: np.ndarray
    chain_step: np.ndarray
    generator: SubMarkovGenerator

    @property
    def n_states(self) -> int:
        return self.L_beta.shape[0]

    @property
    def cemetery_index(self) -> int:
        return self.L_beta.shape[0]


class SemigroupEvaluation(NamedTuple):
    t: float
    f: np.ndarray
    truncation_bound: float
    values: np.ndarray
    n_terms: int


def yosida_generator(L: SubMarkovGenerator, beta: float) -> YosidaApprox:
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta!r}")
    G = resolvent(L, beta)
    n = L.n_states
    Lb = beta * (beta * G.matrix - np.eye(n))
    norm = float(np.abs(Lb).sum(axis=1).max())
    if norm > 2 * beta * (1 + 1e-10):
        raise NumericalFailure(f"||L^beta||_inf = {norm:.6g} exceeds 2 beta")
    R: ExtendedKernel = extend_cemetery(G)
    step = beta * np.array(R.matrix)
    step[-1] = 0.0
    step[-1, -1] = 1.0  # the cemetery is absorbing exactly, not up to rounding of beta * (1/beta)
    step.setflags(write=False)
    Lb.setflags(write=False)
    return YosidaApprox(float(beta), Lb, step, L)


def _series_terms(mu: float, tail_tol: float) -> int:
    # Chernoff-type starting guess, then exact tail mass.
    log_t = math.log(1.0 / tail_tol)
    K = int(math.ceil(mu + math.sqrt(2.0 * mu * log_t) + log_t))
    while poisson.sf(K, mu) >= tail_tol:
        K += max(1, int(math.sqrt(mu + 1)))
    while K > 0 and poisson.sf(K - 1, mu) < tail_tol:
        K -= 1
    return K


def approx_semigroup(ya: YosidaApprox, t: float, f, tail_tol: float = 1e-13, max_terms: int = MAX_SERIES_TERMS) -> SemigroupEvaluation:
    """``P^beta_t f`` by the Poisson-weighted series in powers of ``beta R_beta``.

    The series is cut at the smallest ``K`` whose Poisson(``beta t``) tail mass
    is below ``tail_tol``, which bounds the sup-norm error by
    ``tail_tol * ||f||_inf``.

    Raises
    ------
    NumericalFailure
        If more than ``max_terms`` terms would be needed.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    f = np.asarray(f, dtype=float)
    n = ya.n_states
    if f.shape != (n,):
        raise ValueError(f"f has shape {f.shape}, expected ({n},)")
    mu = ya.beta * t
    if mu == 0:
        return SemigroupEvaluation(float(t), f, 0.0, f.copy(), 1)
    K = _series_terms(mu, tail_tol)
    if K > max_terms:
        raise NumericalFailure(f"beta t = {mu:g} needs {K} series terms (cap {max_terms}); use semigroup_expm")
    weights = poisson.pmf(np.arange(K + 1), mu)
    Q = ya.chain_step
    v = np.append(f, 0.0)
    acc = weights[0] * v
    for k in range(1, K + 1):
        v = Q @ v
        acc += weights[k] * v
    return SemigroupEvaluation(float(t), f, float(poisson.sf(K, mu)), acc[:n], K + 1)


def semigroup_expm(ya: YosidaApprox, t: float, f) -> np.ndarray:
    """``exp(t L^beta) f`` by scaling and squaring."""
    return scipy.linalg.expm(t * ya.L_beta) @ np.asarray(f, dtype=float)


def target_semigroup(L: SubMarkovGenerator, t: float, f) -> np.ndarray:
    """``exp(t L) f``, the reference the approximations converge to."""
    return scipy.linalg.expm(t * L.rates) @ np.asarray(f, dtype=float)


def approx_resolvent(L: SubMarkovGenerator, alpha: float, beta: float) -> np.ndarray:
    """Closed-form resolvent of ``L^beta``.

    ``(beta/(alpha+beta))^2 G_{alpha beta/(alpha+beta)} + I/(alpha+beta)``.
    """
    if not (alpha > 0 and beta > 0):
        raise ValueError("alpha and beta must be positive")
    s = alpha + beta
    G = resolvent(L, alpha * beta / s).matrix
    return (beta / s) ** 2 * G + np.eye(L.n_states) / s


def approx_form_eval(L: SubMarkovGenerator, beta: float, u, v, sp: StateSpace) -> float:
    """Approximating form ``beta (u - beta G_beta u, v)_H``."""
    u = np.asarray(u, dtype=float)
    return beta * h_inner(u - beta * L.solve(beta, u), v, sp)


def fit_order(betas, errors) -> float:
    """Least-squares slope of ``log(error)`` against ``log(beta)``; nan if degenerate."""
    b = np.asarray(betas, dtype=float)
    e = np.asarray(errors, dtype=float)
    keep = e > 0
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(b[keep]), np.log(e[keep]), 1)[0])


@dataclass(frozen=True)
class ConvergenceTable:
    betas: np.ndarray
    sup_errors: np.ndarray
    l2_errors: np.ndarray
    fitted_order: float
    fit_from: int

    def local_orders(self) -> np.ndarray:
        """Slopes between consecutive betas (nan for the first row)."""
        out = np.full(self.betas.size, np.nan)
        with np.errstate(divide="ignore", invalid="ignore"):
            out[1:] = np.log(self.sup_errors[1:] / self.sup_errors[:-1]) / np.log(self.betas[1:] / self.betas[:-1])
        return out


def convergence_table(
    L: SubMarkovGenerator,
    f,
    t: float,
    beta_list=None,
    sp: StateSpace | None = None,
    fit_from: int | None = None,
) -> ConvergenceTable:
    """Errors ``||exp(t L^beta) f - exp(t L) f||`` over ``beta_list``.

    The sup-norm and the ``L^2(m)`` norm are reported (uniform ``m`` when ``sp``
    is omitted). The fitted order is the log-log slope of the sup errors
    over the asymptotic part of the list, by default its upper half (at
    least three points); ``fit_from`` overrides the starting index.
    """
    betas = np.asarray(DEFAULT_BETA_GRID if beta_list is None else beta_list, dtype=float)
    if np.any(np.diff(betas) <= 0):
        raise ValueError("beta_list must be increasing")
    f = np.asarray(f, dtype=float)
    m = np.ones(L.n_states) if sp is None else sp.m
    ref = target_semigroup(L, t, f)
    sup, l2 = [], []
    for b in betas:
        d = semigroup_expm(yosida_generator(L, b), t, f) - ref
        sup.append(float(np.abs(d).max()))
        l2.append(float(np.sqrt(np.sum(d * d * m))))
    if fit_from is None:
        fit_from = max(0, min(betas.size // 2, betas.size - 3))
    order = fit_order(betas[fit_from:], np.array(sup)[fit_from:])
    return ConvergenceTable(betas, np.array(sup), np.array(l2), order, fit_from)
