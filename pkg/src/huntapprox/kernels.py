"""Sub-Markov generators, their resolvents and cemetery-extended kernels."""
from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg

from .exceptions import InvariantViolation, NumericalFailure
from .space import StateSpace

__all__ = [
    "SubMarkovGenerator",
    "ResolventKernel",
    "ExtendedKernel",
    "AdjointResolvent",
    "Check",
    "DEFAULT_ALPHA_GRID",
    "resolvent",
    "extend_cemetery",
    "adjoint",
    "check_resolvent_identity",
    "check_yosida_resolvent_bound",
    "format_kernel",
]

#: Dyadic grid standing in for the positive rationals in every "sup over alpha".
DEFAULT_ALPHA_GRID = 2.0 ** np.arange(-4, 11)

_CLAMP = 1e-14


class Check(NamedTuple):
    """Verdict of a numerical check together with its worst residual."""

    passed: bool
    residual: float


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


class SubMarkovGenerator:
    """Rate matrix of a killed continuous-time Markov chain on ``E``.

    ``rates[x, y]`` for ``x != y`` is the jump rate from ``x`` to ``y``; the
    diagonal holds minus the total outflow including killing, so every row
    sums to a non-positive number.

    LU factorizations of ``alpha I - L`` are cached per ``alpha``; the cache is
    guarded by a lock so that instances can be shared across threads.
    """

    _CACHE_SIZE = 64

    def __init__(self, rates, tol: float = 1e-12):
        L = np.array(rates, dtype=float)
        if L.ndim != 2 or L.shape[0] != L.shape[1] or L.shape[0] == 0:
            raise ValueError(f"rates must be a non-empty square matrix, got shape {L.shape}")
        if not np.all(np.isfinite(L)):
            raise ValueError("rates contain non-finite entries")
        off = L - np.diag(np.diag(L))
        if off.min() < 0:
            x, y = np.unravel_index(np.argmin(off), off.shape)
            raise ValueError(f"negative off-diagonal jump rate {float(off[x, y])!r} from state {x} to {y}")
        scale = max(1.0, float(np.abs(L).max()))
        rs = L.sum(axis=1)
        if rs.max() > tol * scale:
            x = int(np.argmax(rs))
            raise ValueError(f"row {x} of the generator sums to {float(rs[x])!r} > 0")
        self.rates = _readonly(L)
        self._lu: OrderedDict[float, tuple] = OrderedDict()
        self._lock = threading.Lock()

    def __repr__(self):
        return f"SubMarkovGenerator(n_states={self.n_states})"

    # the factorization cache and its lock are not part of the state
    def __getstate__(self):
        return {"rates": self.rates}

    def __setstate__(self, state):
        self.rates = _readonly(state["rates"])
        self._lu = OrderedDict()
        self._lock = threading.Lock()

    @property
    def n_states(self) -> int:
        return self.rates.shape[0]

    @property
    def killing(self) -> np.ndarray:
        """Killing rate of every state (minus the row sums)."""
        return np.maximum(-self.rates.sum(axis=1), 0.0)

    @property
    def is_conservative(self) -> bool:
        return bool(np.all(self.killing <= 1e-12 * max(1.0, np.abs(self.rates).max())))

    def _factor(self, alpha: float):
        alpha = float(alpha)
        with self._lock:
            lu = self._lu.get(alpha)
            if lu is not None:
                self._lu.move_to_end(alpha)
                return lu
        A = alpha * np.eye(self.n_states) - self.rates
        lu, piv = scipy.linalg.lu_factor(A, check_finite=False)
        if np.any(np.diag(lu) == 0) or not np.all(np.isfinite(lu)):
            raise NumericalFailure(f"alpha I - L is singular at alpha={alpha!r}; invalid generator")
        with self._lock:
            self._lu[alpha] = (lu, piv)
            while len(self._lu) > self._CACHE_SIZE:
                self._lu.popitem(last=False)
        return lu, piv

    def solve(self, alpha: float, rhs) -> np.ndarray:
        """Return ``(alpha I - L)^{-1} rhs``, i.e. ``G_alpha`` applied to ``rhs``."""
        if not alpha > 0:
            raise ValueError(f"alpha must be positive, got {alpha!r}")
        return scipy.linalg.lu_solve(self._factor(alpha), np.asarray(rhs, dtype=float))


@dataclass(frozen=True, eq=False)
class ResolventKernel:
    """``G_alpha = (alpha I - L)^{-1}`` as a dense matrix over ``E``."""

    alpha: float
    matrix: np.ndarray

    def __call__(self, f) -> np.ndarray:
        return self.matrix @ np.asarray(f, dtype=float)


@dataclass(frozen=True, eq=False)
class ExtendedKernel:
    """Kernel on ``E_Delta``: the defect mass of every row goes to the cemetery.

    The last row and column belong to ``Delta``. ``alpha * matrix`` has rows
    summing to one.
    """

    alpha: float
    matrix: np.ndarray

    @property
    def cemetery_index(self) -> int:
        return self.matrix.shape[0] - 1


@dataclass(frozen=True, eq=False)
class AdjointResolvent:
    """The ``L^2(m)``-adjoint ``M^{-1} G_alpha^T M`` of a resolvent."""

    alpha: float
    matrix: np.ndarray

    def __call__(self, g) -> np.ndarray:
        return self.matrix @ np.asarray(g, dtype=float)


def resolvent(L: SubMarkovGenerator, alpha: float) -> ResolventKernel:
    """Dense resolvent ``(alpha I - L)^{-1}`` by LU factorization.

    Raises
    ------
    NumericalFailure
        If ``alpha I - L`` is singular.
    """
    G = L.solve(alpha, np.eye(L.n_states))
    return ResolventKernel(float(alpha), _readonly(G))


def extend_cemetery(k: ResolventKernel, tol: float = 1e-12) -> ExtendedKernel:
    """Extend a sub-Markov resolvent kernel to ``E_Delta``.

    Entries within ``1e-14`` below zero are treated as roundoff and clamped.
    A row whose mass exceeds ``1/alpha`` by more than ``tol/alpha`` means
    the sub-Markov property is broken and raises :class:`InvariantViolation`.
    """
    G = np.array(k.matrix, dtype=float)
    if G.min() < -_CLAMP:
        x, y = np.unravel_index(np.argmin(G), G.shape)
        raise InvariantViolation(f"resolvent entry ({x}, {y}) = {G[x, y]!r} is negative")
    G[G < 0] = 0.0
    n = G.shape[0]
    inv = 1.0 / k.alpha
    defect = inv - G.sum(axis=1)
    if defect.min() < -tol * inv:
        x = int(np.argmin(defect))
        raise InvariantViolation(
            f"row {x}: alpha * rowsum = {k.alpha * G[x].sum()!r} exceeds 1 (sub-Markov property broken)"
        )
    R = np.zeros((n + 1, n + 1))
    R[:n, :n] = G
    R[:n, n] = np.maximum(defect, 0.0)
    R[n, n] = inv
    return ExtendedKernel(k.alpha, _readonly(R))


def adjoint(k: ResolventKernel, sp: StateSpace) -> AdjointResolvent:
    m = sp.m
    if k.matrix.shape != (m.size, m.size):
        raise ValueError(f"kernel of shape {k.matrix.shape} does not match {m.size} states")
    return AdjointResolvent(k.alpha, _readonly(k.matrix.T * m[None, :] / m[:, None]))


def check_resolvent_identity(L: SubMarkovGenerator, alpha: float, beta: float, tol: float = 1e-11) -> Check:
    """Max-entry residual of ``G_a - G_b - (b - a) G_a G_b``."""
    Ga = resolvent(L, alpha).matrix
    Gb = resolvent(L, beta).matrix
    res = float(np.abs(Ga - Gb - (beta - alpha) * (Ga @ Gb)).max())
    return Check(res <= tol, res)


def check_yosida_resolvent_bound(L: SubMarkovGenerator, u, beta_grid=None, tol: float = 1e-12) -> Check:
    """Check ``beta G_{beta+1} u <= u`` along a grid and the approach to ``u``.

    ``u`` must be 1-excessive. The residual is the largest violation of the
    inequality; the check also fails if ``||a G_{a+1} u - u||_inf`` increases
    along the (sorted) grid.
    """
    from .potential import is_alpha_excessive

    u = np.asarray(u, dtype=float)
    if not is_alpha_excessive(u, L, 1.0).passed:
        raise ValueError("u is not 1-excessive")
    grid = np.sort(np.asarray(DEFAULT_ALPHA_GRID if beta_grid is None else beta_grid, dtype=float))
    scale = max(1.0, float(np.abs(u).max()))
    worst = -np.inf
    gaps = []
    for b in grid:
        v = b * L.solve(b + 1.0, u)
        worst = max(worst, float((v - u).max()))
        gaps.append(float(np.abs(v - u).max()))
    monotone = all(g2 <= g1 + tol * scale for g1, g2 in zip(gaps, gaps[1:]))
    worst = max(worst, 0.0)
    return Check(worst <= tol * scale and monotone, worst)


def format_kernel(matrix) -> str:
    """Dense row-major text dump with 17 significant digits."""
    M = np.atleast_2d(np.asarray(matrix, dtype=float))
    return "".join(" ".join(f"{v:.17g}" for v in row) + "\n" for row in M)
