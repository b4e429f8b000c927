"""Excessive functions, reduced functions and the strict capacity.

On a finite space a nonnegative ``v`` is alpha-excessive iff
``(alpha I - L) v >= 0``. The reduced function (réduite) of ``f`` on ``U`` is
the smallest alpha-excessive ``v`` with ``v >= f`` on ``U``; it solves the
obstacle problem

    v >= h,  (alpha I - L) v >= 0,  (v - h) * (alpha I - L) v = 0,

with obstacle ``h = max(f 1_U, 0)``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .exceptions import ConvergenceError, InvariantViolation, NumericalFailure
from .kernels import DEFAULT_ALPHA_GRID, Check, SubMarkovGenerator, adjoint, resolvent
from .space import StateSpace, as_mask, h_inner, integrate

__all__ = [
    "ExcessiveFunction",
    "Reduite",
    "CapacityReport",
    "ModifiedExcessiveSequence",
    "MarkovInequality",
    "E_N_ALPHA_GRID",
    "E_N_L_GRID",
    "is_alpha_excessive",
    "certify_excessive",
    "reduite",
    "e_U_by_definition",
    "capacity",
    "capacity_dual_lower_bound",
    "dual_energies",
    "sample_excessive_below_one",
    "capacity_markov_inequality",
    "build_modified_sequence",
]

#: alpha-grid for the supremum defining e_n. It reaches far enough that
#: alpha/(alpha+1) is within 1e-12 of 1, so the grid truncation does not
#: leave spurious points below the N_n threshold.
E_N_ALPHA_GRID = 2.0 ** np.arange(0, 61, 2)
E_N_L_GRID = 2.0 ** np.arange(0, 41, 2)


@dataclass(frozen=True, eq=False)
class ExcessiveFunction:
    order: float
    values: np.ndarray
    certificate_residual: float


class Reduite(NamedTuple):
    base: np.ndarray
    set: np.ndarray
    order: float
    values: np.ndarray
    iterations: int


class CapacityReport(NamedTuple):
    set: np.ndarray
    e_U: np.ndarray
    value: float
    phi_used: str


class MarkovInequality(NamedTuple):
    passed: bool
    lhs: float
    rhs: float


def _phi_id(phi: np.ndarray) -> str:
    return hashlib.sha1(np.ascontiguousarray(phi, dtype=float).tobytes()).hexdigest()[:12]


def is_alpha_excessive(v, L: SubMarkovGenerator, alpha: float, tol: float = 1e-10) -> Check:
    """Certificate ``v >= 0`` and ``(alpha I - L) v >= 0`` up to ``tol``.

    The residual is the smallest entry of both vectors (negative means a
    violation).
    """
    v = np.asarray(v, dtype=float)
    cert = alpha * v - L.rates @ v
    res = float(min(v.min(), cert.min()))
    return Check(res >= -tol, res)


def certify_excessive(v, L: SubMarkovGenerator, alpha: float, tol: float = 1e-10) -> ExcessiveFunction:
    ok, res = is_alpha_excessive(v, L, alpha, tol)
    if not ok:
        raise InvariantViolation(f"function is not {alpha:g}-excessive (residual {res:.3e})")
    return ExcessiveFunction(float(alpha), np.array(v, dtype=float), res)


def _evaluate_stopping(A: np.ndarray, h: np.ndarray, stop: np.ndarray) -> np.ndarray:
    """Value of stopping on ``stop``: ``v = h`` there, ``(A v) = 0`` elsewhere."""
    v = h.copy()
    free = ~stop
    if free.any():
        rhs = -A[np.ix_(free, stop)] @ h[stop]
        v[free] = np.linalg.solve(A[np.ix_(free, free)], rhs)
    return v


def reduite(
    f,
    U,
    L: SubMarkovGenerator,
    alpha: float = 1.0,
    tol: float = 1e-10,
    max_iter: int = 10_000,
) -> Reduite:
    """Smallest alpha-excessive majorant of ``f`` on ``U``.

    Monotone value iteration on the uniformized chain,
    ``v <- max(h, lam/(lam+alpha) P v)`` with ``P = I + L/lam`` and
    ``lam = 1.05 max|L_xx|``, started from ``v0 = h``. After every sweep the
    greedy stopping rule of the current iterate is evaluated exactly and the
    iterate is raised to that value when larger. Both steps keep the iterate
    a nondecreasing sub-solution, so convergence is one-sided from below;
    the exact evaluation makes the iteration terminate after finitely many
    rule changes instead of at the geometric rate ``lam/(lam+alpha)``.

    Raises
    ------
    ConvergenceError
        If the sup-change is still above ``tol`` after ``max_iter`` sweeps.
    """
    n = L.n_states
    mask = as_mask(U, n)
    f = np.broadcast_to(np.asarray(f, dtype=float), (n,)).copy()
    h = np.where(mask, np.maximum(f, 0.0), 0.0)
    if not h.any():
        return Reduite(f, mask, float(alpha), np.zeros(n), 0)
    Q = L.rates
    lam = 1.05 * float(np.abs(np.diag(Q)).max()) or 1.0
    r = lam / (lam + alpha)
    P = np.eye(n) + Q / lam
    A = alpha * np.eye(n) - Q
    v = h.copy()
    scale = max(1.0, float(h.max()))
    for it in range(1, max_iter + 1):
        cont = r * (P @ v)
        new = np.maximum(h, cont)
        new = np.maximum(new, _evaluate_stopping(A, h, h >= cont))
        change = float(np.abs(new - v).max())
        v = new
        if change < tol * scale:
            break
    else:
        raise ConvergenceError(f"reduite did not converge in {max_iter} sweeps (last change {change:.3e})")
    return Reduite(f, mask, float(alpha), v, it)


def e_U_by_definition(
    U,
    L: SubMarkovGenerator,
    sp: StateSpace,
    k_max: int = 60,
    tol: float = 1e-8,
) -> np.ndarray:
    """``e_U`` as the increasing limit of reduced functions of ``1 ^ G_1(k phi)``.

    ``k`` runs over ``2^0 .. 2^k_max``; the loop stops once the truncation
    ``1 ^ k G_1 phi`` is identically 1. The limit is cross-checked against
    the reduced function of the constant 1.
    """
    n = L.n_states
    mask = as_mask(U, n)
    g = L.solve(1.0, sp.phi)
    if g.min() <= 0:
        raise NumericalFailure("G_1 phi is not strictly positive")
    prev = np.zeros(n)
    for k in 2.0 ** np.arange(k_max + 1):
        obstacle = np.minimum(1.0, k * g)
        cur = reduite(obstacle, mask, L, 1.0).values
        if np.any(cur < prev - tol):
            raise NumericalFailure("increasing limit violated: reduite sequence decreased")
        prev = cur
        if np.all(obstacle[mask] == 1.0):
            break
    direct = reduite(np.ones(n), mask, L, 1.0).values
    gap = float(np.abs(prev - direct).max()) if n else 0.0
    if gap > tol:
        raise NumericalFailure(f"increasing limit differs from reduite of 1 by {gap:.3e}")
    return prev


def capacity(U, sp: StateSpace, L: SubMarkovGenerator) -> CapacityReport:
    """Strict capacity ``int e_U phi dm`` with ``e_U`` the 1-reduced function of 1 on ``U``."""
    mask = as_mask(U, sp.n_states)
    e = reduite(np.ones(sp.n_states), mask, L, 1.0).values
    return CapacityReport(mask, e, integrate(e * sp.phi, sp), _phi_id(sp.phi))


def sample_excessive_below_one(L: SubMarkovGenerator, count: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Random 1-excessive functions bounded by 1.

    Each sample is a random convex mixture of the constant 1 and normalized
    potentials ``G_1 g / max G_1 g`` with random ``g >= 0``.
    """
    n = L.n_states
    out = []
    for _ in range(count):
        k = int(rng.integers(1, 4))
        parts = []
        for _ in range(k):
            g = rng.exponential(size=n) * (rng.random(n) < 0.6)
            if not g.any():
                g[rng.integers(n)] = 1.0
            p = L.solve(1.0, g)
            parts.append(p / p.max())
        w = rng.dirichlet(np.ones(k + 1))
        u = w[0] * rng.random() * np.ones(n) + sum(wi * p for wi, p in zip(w[1:], parts))
        out.append(np.minimum(u, 1.0))
    return out


def dual_energies(U, sp: StateSpace, L: SubMarkovGenerator, samples: Sequence[np.ndarray]) -> np.ndarray:
    """``E_1(u_U, G^_1 phi) = ((I - L) u_U, G^_1 phi)_H`` for every sample ``u``."""
    mask = as_mask(U, sp.n_states)
    cophi = adjoint(resolvent(L, 1.0), sp)(sp.phi)
    vals = []
    for u in samples:
        w = reduite(u, mask, L, 1.0).values
        vals.append(h_inner(w - L.rates @ w, cophi, sp))
    return np.array(vals)


def capacity_dual_lower_bound(
    U,
    sp: StateSpace,
    L: SubMarkovGenerator,
    sample_count: int = 32,
    rng: np.random.Generator | None = None,
    include_one: bool = True,
) -> float:
    """Largest dual energy over sampled 1-excessive ``u <= 1``.

    With ``include_one`` the constant 1 (the maximizer on a finite space) is
    part of the sample and the bound equals the capacity.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    samples = sample_excessive_below_one(L, sample_count, rng)
    if include_one:
        samples.append(np.ones(sp.n_states))
    if not samples:
        return 0.0
    return float(dual_energies(U, sp, L, samples).max())


def capacity_markov_inequality(u, epsilon: float, sp: StateSpace, L: SubMarkovGenerator, tol: float = 1e-9) -> MarkovInequality:
    """Compare ``Cap({u > eps})`` with ``eps^-1 int e_u phi dm``."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    u = np.asarray(u, dtype=float)
    if u.min() < 0:
        raise ValueError("u must be nonnegative")
    lhs = capacity(u > epsilon, sp, L).value
    e_u = reduite(u, np.ones(sp.n_states, dtype=bool), L, 1.0).values
    rhs = integrate(e_u * sp.phi, sp) / epsilon
    return MarkovInequality(lhs <= rhs + tol, lhs, rhs)


@dataclass(frozen=True, eq=False)
class ModifiedExcessiveSequence:
    """Decreasing sets ``U_n`` with the functions ``e_n``, ``N_n`` and ``e_hat_n``."""

    sets: list
    e: list
    N: list
    e_hat: list
    capacities: list
    alpha_grid: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.sets)

    def excessivity_violation(self, L: SubMarkovGenerator, alpha_grid=None) -> float:
        """``max_{n, alpha, x} (alpha G_{alpha+1} e_hat_n - e_hat_n)(x)``."""
        grid = DEFAULT_ALPHA_GRID if alpha_grid is None else alpha_grid
        worst = -np.inf
        for eh in self.e_hat:
            for a in grid:
                worst = max(worst, float((a * L.solve(a + 1.0, eh) - eh).max()))
        return worst

    def decay_profile(self) -> list[tuple[float, float]]:
        """Pairs ``(Cap(U_n), max e_hat_n)``."""
        return [(c, float(eh.max()) if eh.size else 0.0) for c, eh in zip(self.capacities, self.e_hat)]


def build_modified_sequence(
    U_seq,
    L: SubMarkovGenerator,
    sp: StateSpace,
    alpha_grid=None,
    l_grid=None,
    threshold: float = 1e-12,
    check: bool = True,
    tol: float = 1e-9,
) -> ModifiedExcessiveSequence:
    """Build ``e_n``, ``N_n`` and ``e_hat_n = e_n + 1_{N_n}`` for decreasing ``U_n``.

    ``e_n`` is the entrywise maximum over ``alpha`` in ``alpha_grid`` and ``l`` in
    ``l_grid`` of ``alpha G_{alpha+1}`` applied to the 1-reduced function of
    ``1 ^ l G_1 phi`` on ``U_n``. ``N_n`` collects the points of ``U_n`` where
    ``e_n < 1 - threshold``.

    With ``check`` the 1-excessivity of every ``e_hat_n`` is asserted along
    :data:`DEFAULT_ALPHA_GRID`. ``e_hat_n >= 1`` on ``U_n`` holds by
    construction and is always asserted.
    """
    n = L.n_states
    alpha_grid = E_N_ALPHA_GRID if alpha_grid is None else np.asarray(alpha_grid, dtype=float)
    l_grid = E_N_L_GRID if l_grid is None else np.asarray(l_grid, dtype=float)
    if np.any(alpha_grid < 1) or np.any(l_grid < 1):
        raise ValueError("alpha and l grids must be >= 1")
    masks = [as_mask(U, n) for U in U_seq]
    for k, (a, b) in enumerate(zip(masks, masks[1:])):
        if np.any(b & ~a):
            raise ValueError(f"sets are not decreasing: U_{k + 2} is not contained in U_{k + 1}")
    g = L.solve(1.0, sp.phi)
    obstacles = {}
    for l in l_grid:
        ob = np.minimum(1.0, l * g)
        obstacles.setdefault(ob.tobytes(), ob)
    es, Ns, ehs, caps = [], [], [], []
    for mask in masks:
        e = np.zeros(n)
        if mask.any():
            for ob in obstacles.values():
                w = reduite(ob, mask, L, 1.0).values
                for a in alpha_grid:
                    e = np.maximum(e, a * L.solve(a + 1.0, w))
        N = mask & (e < 1.0 - threshold)
        eh = e + N
        if np.any(eh[mask] < 1.0):
            raise InvariantViolation("e_hat_n < 1 somewhere on U_n")
        es.append(e)
        Ns.append(N)
        ehs.append(eh)
        caps.append(capacity(mask, sp, L).value)
    seq = ModifiedExcessiveSequence(masks, es, Ns, ehs, caps, alpha_grid)
    if check:
        worst = seq.excessivity_violation(L)
        if worst > tol:
            raise InvariantViolation(f"alpha G_(alpha+1) e_hat_n exceeds e_hat_n by {worst:.3e}")
    return seq
