"""Independent reference computations used by the test-suite.

Nothing here calls into the solver paths under test: inverses are done in
exact rational arithmetic, reduced functions by enumerating complementarity
patterns or by linear programming, reversibility by the cycle criterion.
"""
from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np
from scipy.optimize import linprog


# --- exact linear algebra ---------------------------------------------------

def fraction_inverse(A) -> list[list[Fraction]]:
    """Gauss-Jordan inverse over the rationals."""
    n = len(A)
    M = [[Fraction(A[i][j]) for j in range(n)] + [Fraction(int(i == j)) for j in range(n)] for i in range(n)]
    for c in range(n):
        p = next(r for r in range(c, n) if M[r][c] != 0)
        M[c], M[p] = M[p], M[c]
        piv = M[c][c]
        M[c] = [v / piv for v in M[c]]
        for r in range(n):
            if r != c and M[r][c] != 0:
                f = M[r][c]
                M[r] = [a - f * b for a, b in zip(M[r], M[c])]
    return [row[n:] for row in M]


def exact_resolvent(Q, alpha) -> np.ndarray:
    """``(alpha I - Q)^{-1}`` for a rational rate matrix, rounded once to float."""
    n = len(Q)
    a = Fraction(alpha)
    A = [[(a if i == j else 0) - Fraction(Q[i][j]) for j in range(n)] for i in range(n)]
    return np.array([[float(v) for v in row] for row in fraction_inverse(A)])


def random_integer_generator(n: int, rng: np.random.Generator, max_rate: int = 4, killing: bool = True) -> np.ndarray:
    """Integer rate matrix with nonnegative off-diagonals and nonpositive row sums."""
    Q = rng.integers(0, max_rate + 1, size=(n, n)).astype(float)
    np.fill_diagonal(Q, 0.0)
    kill = rng.integers(0, max_rate + 1, size=n).astype(float) if killing else np.zeros(n)
    np.fill_diagonal(Q, -(Q.sum(axis=1) + kill))
    return Q


def random_float_generator(n: int, rng: np.random.Generator, density: float = 0.6, killing: float = 0.5) -> np.ndarray:
    Q = rng.random((n, n)) * (rng.random((n, n)) < density) * 2.0
    np.fill_diagonal(Q, 0.0)
    kill = rng.random(n) * killing
    np.fill_diagonal(Q, -(Q.sum(axis=1) + kill))
    return Q


# --- reduced functions ------------------------------------------------------

def lcp_reduite(f, U, Q, alpha: float = 1.0) -> np.ndarray:
    """Smallest ``v`` with ``v >= h`` and ``(alpha I - Q) v >= 0``, ``h = max(f 1_U, 0)``.

    Every one of the ``2^n`` complementarity patterns (state stops with
    ``v = h`` or continues with ``((alpha I - Q) v)(x) = 0``) is solved; the
    answer is the entrywise minimum of the feasible solutions, which is
    checked to be feasible itself.
    """
    Q = np.asarray(Q, dtype=float)
    n = Q.shape[0]
    mask = np.zeros(n, dtype=bool)
    mask[np.asarray(U, dtype=int)] = True
    h = np.where(mask, np.maximum(np.asarray(f, dtype=float), 0.0), 0.0)
    A = alpha * np.eye(n) - Q
    patterns = np.array(list(itertools.product([False, True], repeat=n)), dtype=bool)
    systems = np.where(patterns[:, :, None], np.eye(n)[None], A[None])
    rhs = np.where(patterns, h[None], 0.0)
    sols = np.linalg.solve(systems, rhs[..., None])[..., 0]
    scale = max(1.0, float(np.abs(h).max()))
    tol = 1e-11 * scale
    ok = np.all(sols >= h - tol, axis=1) & np.all(sols @ A.T >= -tol * (1 + np.abs(A).sum(axis=1).max()), axis=1)
    feasible = sols[ok]
    if not len(feasible):
        raise AssertionError("no feasible complementarity pattern")
    v = feasible.min(axis=0)
    gap = np.abs(feasible - v).sum(axis=1).min()
    if gap > 1e-9 * scale * n:
        raise AssertionError("entrywise minimum of feasible solutions is not itself a solution")
    return v


def lp_reduite(f, U, Q, alpha: float = 1.0) -> np.ndarray:
    """Same object as :func:`lcp_reduite` from ``min sum v`` by linear programming."""
    Q = np.asarray(Q, dtype=float)
    n = Q.shape[0]
    mask = np.zeros(n, dtype=bool)
    mask[np.asarray(U, dtype=int)] = True
    h = np.where(mask, np.maximum(np.asarray(f, dtype=float), 0.0), 0.0)
    A = alpha * np.eye(n) - Q
    res = linprog(np.ones(n), A_ub=-A, b_ub=np.zeros(n), bounds=[(lo, None) for lo in h], method="highs")
    assert res.success, res.message
    return res.x


# --- reversibility ----------------------------------------------------------

def kolmogorov_reversible(Q, rtol: float = 1e-10, max_len: int | None = None) -> bool:
    """Kolmogorov cycle criterion over all simple cycles of length >= 2.

    A chain is reversible (symmetrizable by a positive diagonal) iff its
    jumps are two-way and every cycle has equal forward and backward rate
    products. Exhaustive, so only for small ``n``.
    """
    Q = np.asarray(Q, dtype=float)
    n = Q.shape[0]
    max_len = n if max_len is None else max_len
    off = ~np.eye(n, dtype=bool)
    if np.any(((Q > 0) != (Q.T > 0)) & off):
        return False  # a one-way jump breaks detailed balance outright
    adj = [[y for y in range(n) if y != x and Q[x, y] > 0] for x in range(n)]

    def dfs(start, path):
        x = path[-1]
        for y in adj[x]:
            if y == start and len(path) >= 2:
                fwd = math.prod(Q[a, b] for a, b in zip(path, path[1:] + [start]))
                bwd = math.prod(Q[b, a] for a, b in zip(path, path[1:] + [start]))
                if not math.isclose(fwd, bwd, rel_tol=rtol):
                    return False
            elif y > start and y not in path and len(path) < max_len:
                if not dfs(start, path + [y]):
                    return False
        return True

    return all(dfs(s, [s]) for s in range(n))


# --- brute force sums -------------------------------------------------------

def brute_inner(f, g, m) -> float:
    return math.fsum(float(a) * float(b) * float(w) for a, b, w in zip(f, g, m))


def brute_adjoint_residual(G, Gh, m, f, g) -> float:
    """``|(G f, g)_m - (f, Gh g)_m|`` computed with explicit loops."""
    n = len(m)
    Gf = [math.fsum(G[i][j] * f[j] for j in range(n)) for i in range(n)]
    Ghg = [math.fsum(Gh[i][j] * g[j] for j in range(n)) for i in range(n)]
    return abs(brute_inner(Gf, g, m) - brute_inner(f, Ghg, m))


# --- scalar closed forms ----------------------------------------------------

def killing_yosida_semigroup(beta: float, t: float) -> float:
    """``exp(t L^beta) 1`` for ``L = -1``: ``exp(t beta (beta/(beta+1) - 1))``."""
    return math.exp(t * beta * (beta / (beta + 1.0) - 1.0))


def binomial_band(p: float, n: int, k: float = 4.0) -> float:
    return k * math.sqrt(max(p * (1 - p), 0.0) / n)
