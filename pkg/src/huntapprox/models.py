"""Library of example generators.

All constructors return a :class:`SubMarkovGenerator`; :func:`example_models`
bundles them with matching state spaces for sweeps.
"""
from __future__ import annotations

from collections import deque
from typing import Callable, NamedTuple

import numpy as np

from .kernels import SubMarkovGenerator
from .space import StateSpace

__all__ = [
    "model_birth_death",
    "model_absorbed_diffusion",
    "model_space_time_transport",
    "model_reducible",
    "is_symmetrizable",
    "cell_centers",
    "Model",
    "example_models",
]


def _coeff(c, x: np.ndarray, name: str) -> np.ndarray:
    if callable(c):
        vals = np.array([float(c(t)) for t in x])
    else:
        vals = np.asarray(c, dtype=float)
        if vals.ndim == 0:
            vals = np.full(x.size, float(vals))
    if vals.shape != x.shape:
        raise ValueError(f"{name} must be a scalar, callable or array of length {x.size}")
    if not np.all(np.isfinite(vals)):
        raise ValueError(f"{name} has non-finite values")
    return vals


def model_birth_death(n: int, birth, death, killing) -> SubMarkovGenerator:
    """Birth-death chain on ``0..n-1``.

    ``birth[i]`` is the rate ``i -> i+1`` and ``death[i]`` the rate
    ``i+1 -> i`` (both of length ``n - 1``); ``killing`` has length ``n``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    birth = np.asarray(birth, dtype=float).reshape(-1)
    death = np.asarray(death, dtype=float).reshape(-1)
    killing = np.asarray(killing, dtype=float).reshape(-1)
    if birth.size != n - 1 or death.size != n - 1 or killing.size != n:
        raise ValueError("need n-1 birth rates, n-1 death rates and n killing rates")
    for name, arr in (("birth", birth), ("death", death), ("killing", killing)):
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise ValueError(f"{name} rates must be finite and nonnegative")
    L = np.zeros((n, n))
    idx = np.arange(n - 1)
    L[idx, idx + 1] = birth
    L[idx + 1, idx] = death
    L[np.arange(n), np.arange(n)] = -(L.sum(axis=1) + killing)
    return SubMarkovGenerator(L)


def cell_centers(n: int) -> np.ndarray:
    return (np.arange(n) + 0.5) / n


def model_absorbed_diffusion(drift, diffusion, n: int) -> SubMarkovGenerator:
    """Finite-difference generator of ``a f'' + b f'`` on ``[0, 1]``.

    The interval is split into ``n`` cells of width ``h = 1/n``. Neighbouring
    cells exchange mass at rate ``a/h^2 +- b/(2h)`` (central differences) or,
    where the cell Peclet number ``|b| h / a`` exceeds 2, ``a/h^2`` plus an
    upwind drift ``|b|/h`` in the direction of ``b``. Rates pointing out of
    ``[0, 1]`` become killing: both ends are absorbing.
    """
    if n < 2:
        raise ValueError("grid too small: need n >= 2 cells")
    x = cell_centers(n)
    b = _coeff(drift, x, "drift")
    a = _coeff(diffusion, x, "diffusion")
    if np.any(a <= 0):
        raise ValueError("diffusion coefficient must be bounded away from 0")
    h = 1.0 / n
    upwind = np.abs(b) * h > 2 * a
    right = np.where(upwind, a / h**2 + np.maximum(b, 0) / h, a / h**2 + b / (2 * h))
    left = np.where(upwind, a / h**2 + np.maximum(-b, 0) / h, a / h**2 - b / (2 * h))
    L = np.zeros((n, n))
    i = np.arange(n)
    L[i[:-1], i[:-1] + 1] = right[:-1]
    L[i[1:], i[1:] - 1] = left[1:]
    L[i, i] = -(right + left)
    return SubMarkovGenerator(L)


def model_space_time_transport(L0: SubMarkovGenerator, layers: int) -> SubMarkovGenerator:
    """Space-time chain: spatial motion by ``L0`` inside each time layer.

    Time moves forward one layer at rate ``layers`` (unit speed on ``[0, 1]``
    with step ``1/layers``); leaving the last layer kills the path. The
    state ``(j, x)`` has index ``j * n0 + x``. Time transitions are strictly
    one-directional, so the generator is never symmetrizable. It is a
    surrogate for a non-sectorial generator chosen for testing, not a model
    of any particular physical system.
    """
    if layers < 2:
        raise ValueError("grid too small: need at least 2 time layers")
    n0 = L0.n_states
    n = n0 * layers
    L = np.zeros((n, n))
    rate = float(layers)
    for j in range(layers):
        blk = slice(j * n0, (j + 1) * n0)
        L[blk, blk] = L0.rates
        L[blk, blk] -= rate * np.eye(n0)
        if j + 1 < layers:
            nxt = slice((j + 1) * n0, (j + 2) * n0)
            L[blk, nxt] += rate * np.eye(n0)
    return SubMarkovGenerator(L)


def model_reducible(blocks) -> SubMarkovGenerator:
    """Block-diagonal generator built from independent sub-generators."""
    blocks = [b if isinstance(b, SubMarkovGenerator) else SubMarkovGenerator(b) for b in blocks]
    n = sum(b.n_states for b in blocks)
    L = np.zeros((n, n))
    k = 0
    for b in blocks:
        L[k:k + b.n_states, k:k + b.n_states] = b.rates
        k += b.n_states
    return SubMarkovGenerator(L)


def is_symmetrizable(L: SubMarkovGenerator, rtol: float = 1e-10) -> bool:
    """Whether some positive diagonal ``D`` makes ``D L`` symmetric.

    Builds candidate weights along a spanning forest of the jump graph and
    then verifies detailed balance on every edge.
    """
    Q = L.rates
    n = L.n_states
    pos = Q > 0
    np.fill_diagonal(pos, False)
    if np.any(pos != pos.T):
        return False
    mu = np.zeros(n)
    for root in range(n):
        if mu[root] > 0:
            continue
        mu[root] = 1.0
        queue = deque([root])
        while queue:
            x = queue.popleft()
            for y in np.flatnonzero(pos[x]):
                if mu[y] == 0:
                    mu[y] = mu[x] * Q[x, y] / Q[y, x]
                    queue.append(y)
    flux = mu[:, None] * Q
    off = ~np.eye(n, dtype=bool)
    return bool(np.allclose(flux[off], flux.T[off], rtol=rtol, atol=0.0))


class Model(NamedTuple):
    name: str
    space: StateSpace
    generator: SubMarkovGenerator
    #: coordinate used for predicate-defined sets and default test functions
    position: np.ndarray


def _random_birth_death(n: int, rng: np.random.Generator) -> SubMarkovGenerator:
    return model_birth_death(
        n,
        rng.uniform(0.5, 2.0, n - 1),
        rng.uniform(0.5, 2.0, n - 1),
        np.r_[rng.uniform(0.1, 0.5), np.zeros(n - 2), rng.uniform(0.1, 0.5)],
    )


def example_models(seed: int = 0) -> dict[str, Model]:
    """The reference model set used by sweeps and acceptance checks."""
    rng = np.random.default_rng(seed)
    models: list[Model] = []

    models.append(Model("killing", StateSpace.uniform(1), model_birth_death(1, [], [], [1.0]), np.zeros(1)))
    models.append(Model(
        "two_state",
        StateSpace(m=np.array([1.0, 1.0])),
        SubMarkovGenerator([[-1.0, 1.0], [1.0, -1.0]]),
        np.array([0.0, 1.0]),
    ))
    bd = _random_birth_death(8, rng)
    models.append(Model(
        "birth_death",
        StateSpace(m=rng.uniform(0.5, 1.5, 8), phi=rng.uniform(0.3, 1.0, 8)),
        bd,
        np.linspace(0, 1, 8),
    ))
    n = 16
    models.append(Model(
        "absorbed_diffusion",
        StateSpace.uniform(n, 1.0 / n),
        model_absorbed_diffusion(lambda x: 2.0 * np.sin(2 * np.pi * x), 0.1, n),
        cell_centers(n),
    ))
    L0 = model_birth_death(3, [1.0, 1.0], [1.0, 1.0], [0.0, 0.0, 0.0])
    models.append(Model(
        "space_time_transport",
        StateSpace.uniform(12, 1.0 / 12),
        model_space_time_transport(L0, 4),
        np.repeat(np.arange(4), 3) / 3.0,
    ))
    red = model_reducible([
        model_birth_death(3, [1.0, 0.5], [0.7, 1.2], [0.0, 0.0, 0.3]),
        model_birth_death(2, [2.0], [1.0], [0.2, 0.0]),
    ])
    models.append(Model("reducible", StateSpace(m=np.array([1.0, 2.0, 1.0, 0.5, 0.5])), red, np.linspace(0, 1, 5)))
    return {mdl.name: mdl for mdl in models}
