"""Monte Carlo for the subordinated chains ``X^beta_t = Y^beta(Pi^beta_t)``.

Paths are generated in fixed-size blocks. Block ``b`` draws from a Philox
stream keyed by ``(seed, b)``, so path ``i`` depends only on the master seed
and on ``i``; blocks can run on any number of worker threads and are
reassembled in index order before anything is reduced.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

from .exceptions import InvariantViolation, NumericalFailure
from .space import as_mask
from .yosida import YosidaApprox, approx_semigroup

__all__ = [
    "BLOCK_SIZE",
    "PathSample",
    "PathBatch",
    "MCEstimate",
    "ExitBound",
    "TwoExcessive",
    "block_rng",
    "sample_chain_step",
    "sample_path",
    "simulate_paths",
    "hitting_time",
    "mc_estimate",
    "mc_marginal",
    "mc_laplace",
    "mc_exit_bound",
    "mc_exit_bounds",
    "check_two_excessive",
    "invariance_check",
    "PATH_FORMAT_HEADER",
]

BLOCK_SIZE = 2048
PATH_FORMAT_HEADER = {"format": "huntapprox-paths", "version": 1}


def block_rng(seed: int, block: int) -> np.random.Generator:
    """Counter-based stream for one block of paths."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(int(block),))))


def _cumulative_rows(ya: YosidaApprox) -> np.ndarray:
    Q = ya.chain_step
    s = Q.sum(axis=1)
    if np.abs(s - 1.0).max() > 1e-12:
        raise InvariantViolation(f"chain step rows do not sum to 1 (max deviation {np.abs(s - 1).max():.3e})")
    cum = np.cumsum(Q, axis=1)
    cum[:, -1] = 1.0
    return cum


def sample_chain_step(x: int, ya: YosidaApprox, rng: np.random.Generator) -> int:
    """One transition of the chain with kernel ``beta R_beta`` on ``E_Delta``."""
    cum = _cumulative_rows(ya)
    return int(np.count_nonzero(cum[x] <= rng.random()))


@dataclass(frozen=True, eq=False)
class PathSample:
    """One piecewise constant, right-continuous path on ``[0, horizon]``.

    ``states[0]`` is the start; ``states[k]`` is occupied on
    ``[jump_times[k-1], jump_times[k])``. ``absorbed_at`` is ``inf`` when
    the cemetery is not reached before the horizon.
    """

    beta: float
    horizon: float
    jump_times: np.ndarray
    states: np.ndarray
    absorbed_at: float

    def state_at(self, t: float) -> int:
        return int(self.states[np.searchsorted(self.jump_times, t, side="right")])


class PathBatch:
    """Many paths stored as padded arrays.

    ``times`` has shape ``(n_paths, K)`` padded with ``inf``; ``states`` has
    shape ``(n_paths, K + 1)`` padded with the last state reached.
    """

    def __init__(self, beta, horizon, start, times, states, n_jumps, absorbed_at, cemetery, seed=None):
        self.beta = float(beta)
        self.horizon = float(horizon)
        self.start = int(start)
        self.times = times
        self.states = states
        self.n_jumps = n_jumps
        self.absorbed_at = absorbed_at
        self.cemetery = int(cemetery)
        self.seed = seed

    def __len__(self):
        return self.states.shape[0]

    def state_at(self, t: float) -> np.ndarray:
        idx = np.count_nonzero(self.times <= t, axis=1)
        return self.states[np.arange(len(self)), idx]

    def path(self, i: int) -> PathSample:
        k = int(self.n_jumps[i])
        return PathSample(self.beta, self.horizon, self.times[i, :k].copy(), self.states[i, :k + 1].copy(), float(self.absorbed_at[i]))

    def __iter__(self) -> Iterator[PathSample]:
        return (self.path(i) for i in range(len(self)))


def _simulate_block(x: int, ya: YosidaApprox, T: float, rng: np.random.Generator, size: int, cum: np.ndarray):
    beta = ya.beta
    delta = ya.cemetery_index
    mu = beta * T
    k_cap = int(math.ceil(mu + 8.0 * math.sqrt(mu) + 16))
    gaps = rng.exponential(1.0 / beta, size=(size, k_cap))
    arrivals = np.cumsum(gaps, axis=1)
    while np.any(arrivals[:, -1] <= T):
        more = np.cumsum(rng.exponential(1.0 / beta, size=(size, k_cap)), axis=1) + arrivals[:, -1:]
        arrivals = np.concatenate([arrivals, more], axis=1)
    n_jumps = np.count_nonzero(arrivals <= T, axis=1)
    K = int(n_jumps.max()) if size else 0
    times = arrivals[:, :K]
    times[times > T] = np.inf
    states = np.empty((size, K + 1), dtype=np.int64)
    cur = np.full(size, x, dtype=np.int64)
    states[:, 0] = cur
    for k in range(K):
        u = rng.random(size)
        nxt = np.count_nonzero(cum[cur] <= u[:, None], axis=1)
        cur = np.where(k < n_jumps, nxt, cur)
        states[:, k + 1] = cur
    absorbed_at = np.full(size, np.inf)
    if K:
        hit = states[:, 1:] == delta
        first = np.argmax(hit, axis=1)
        reached = hit.any(axis=1)
        absorbed_at[reached] = times[reached, first[reached]]
    if x == delta:
        absorbed_at[:] = 0.0
    return times, states, n_jumps, absorbed_at


def simulate_paths(x: int, ya: YosidaApprox, T: float, n_paths: int, seed: int, threads: int = 1) -> PathBatch:
    """Simulate ``n_paths`` paths of ``X^beta`` started at ``x`` on ``[0, T]``.

    Output is bit-identical for fixed ``(seed, n_paths)`` regardless of
    ``threads``.
    """
    if not T > 0:
        raise ValueError("horizon T must be positive")
    if not 0 <= x <= ya.cemetery_index:
        raise ValueError(f"start state {x} outside E_Delta")
    cum = _cumulative_rows(ya)
    n_blocks = -(-n_paths // BLOCK_SIZE)

    def run(b):
        return _simulate_block(x, ya, T, block_rng(seed, b), BLOCK_SIZE, cum)

    if threads > 1 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(run, range(n_blocks)))
    else:
        blocks = [run(b) for b in range(n_blocks)]
    K = max((blk[0].shape[1] for blk in blocks), default=0)
    times = np.full((n_blocks * BLOCK_SIZE, K), np.inf)
    states = np.empty((n_blocks * BLOCK_SIZE, K + 1), dtype=np.int64)
    for b, (tb, sb, _, _) in enumerate(blocks):
        rows = slice(b * BLOCK_SIZE, (b + 1) * BLOCK_SIZE)
        times[rows, :tb.shape[1]] = tb
        states[rows, :sb.shape[1]] = sb
        states[rows, sb.shape[1]:] = sb[:, -1:]
    n_jumps = np.concatenate([blk[2] for blk in blocks]) if blocks else np.zeros(0, int)
    absorbed = np.concatenate([blk[3] for blk in blocks]) if blocks else np.zeros(0)
    return PathBatch(ya.beta, T, x, times[:n_paths], states[:n_paths], n_jumps[:n_paths], absorbed[:n_paths], ya.cemetery_index, seed)


def sample_path(x: int, ya: YosidaApprox, T: float, rng: np.random.Generator) -> PathSample:
    """A single path drawn from ``rng``."""
    times, states, n_jumps, absorbed = _simulate_block(x, ya, T, rng, 1, _cumulative_rows(ya))
    k = int(n_jumps[0])
    return PathSample(ya.beta, float(T), times[0, :k], states[0, :k + 1], float(absorbed[0]))


def hitting_time(p: PathSample, U) -> float:
    """First time the path is in ``U`` (0 if it starts there, ``inf`` if never)."""
    U = np.asarray(U if U is not None else [])
    members = np.flatnonzero(U) if U.dtype == bool else U.astype(int).ravel()
    inside = np.isin(p.states, members)
    if not inside.any():
        return math.inf
    k = int(np.argmax(inside))
    return 0.0 if k == 0 else float(p.jump_times[k - 1])


def _batch_hitting_times(batch: PathBatch, U) -> np.ndarray:
    mask = np.append(as_mask(U, batch.cemetery), False)
    inside = mask[batch.states]
    first = np.argmax(inside, axis=1)
    hit = inside.any(axis=1)
    tau = np.full(len(batch), np.inf)
    tau[hit & (first == 0)] = 0.0
    later = hit & (first > 0)
    tau[later] = batch.times[later, first[later] - 1]
    return tau


class MCEstimate(NamedTuple):
    mean: float
    std_error: float
    n_paths: int
    seed: int


def mc_estimate(values: np.ndarray, seed: int) -> MCEstimate:
    """Mean and standard error of per-path values (order-fixed reduction)."""
    values = np.asarray(values, dtype=float)
    n = values.size
    mean = math.fsum(values) / n
    if n > 1:
        var = math.fsum((values - mean) ** 2) / (n - 1)
    else:
        var = 0.0
    return MCEstimate(mean, math.sqrt(var / n), n, int(seed))


def mc_marginal(x: int, f, t: float, ya: YosidaApprox, n_paths: int, seed: int, threads: int = 1) -> MCEstimate:
    """Estimate ``E_x[f(X^beta_t)]`` (``f`` extended by 0 at the cemetery)."""
    fe = np.append(np.asarray(f, dtype=float), 0.0)
    batch = simulate_paths(x, ya, t, n_paths, seed, threads)
    return mc_estimate(fe[batch.state_at(t)], seed)


def _piecewise_laplace(batch: PathBatch, alpha: float, fe: np.ndarray) -> np.ndarray:
    T = batch.horizon
    K = batch.times.shape[1]
    starts = np.concatenate([np.zeros((len(batch), 1)), np.minimum(batch.times, T)], axis=1)
    ends = np.concatenate([np.minimum(batch.times, T), np.full((len(batch), 1), T)], axis=1)
    ends = np.maximum(ends, starts)
    weights = (np.exp(-alpha * starts) - np.exp(-alpha * ends)) / alpha
    return np.sum(weights * fe[batch.states[:, :K + 1]], axis=1)


def mc_laplace(
    x: int,
    alpha: float,
    f,
    ya: YosidaApprox,
    n_paths: int,
    T: float,
    seed: int,
    bias_budget: float = 1e-6,
    threads: int = 1,
) -> tuple[MCEstimate, float]:
    """Estimate ``E_x[int_0^inf e^{-alpha t} f(X_t) dt]``.

    Integrals over the constant pieces of each path are exact; the part
    beyond ``T`` is bounded by ``e^{-alpha T} ||f||_inf / alpha``, which is
    returned alongside the estimate.

    Raises
    ------
    ValueError
        If that bound exceeds ``bias_budget``.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    fe = np.append(np.asarray(f, dtype=float), 0.0)
    bias = math.exp(-alpha * T) * float(np.abs(fe).max()) / alpha
    if bias > bias_budget:
        raise ValueError(f"horizon T={T:g} leaves a tail bias {bias:.3e} above the budget {bias_budget:.3e}")
    batch = simulate_paths(x, ya, T, n_paths, seed, threads)
    return mc_estimate(_piecewise_laplace(batch, alpha, fe), seed), bias


class ExitBound(NamedTuple):
    x: int
    estimate: MCEstimate
    tail: float
    e_hat: float
    passed: bool


def mc_exit_bounds(
    x: int,
    U_seq,
    e_hat_seq,
    ya: YosidaApprox,
    n_paths: int,
    T: float,
    seed: int,
    n_sigma: float = 4.0,
    tol: float = 1e-9,
    threads: int = 1,
) -> list[ExitBound]:
    """Test ``E_x[exp(-2 tau_U)] <= e_hat(x)`` for several sets on shared paths.

    The estimator averages ``exp(-2 tau) 1{tau <= T}``; the neglected part is
    at most ``exp(-2 T)`` (and exactly 0 when ``x`` lies in ``U``, where
    ``tau = 0``). The verdict adds ``n_sigma`` standard errors and that tail
    to the estimate before comparing.
    """
    if ya.beta < 2:
        raise ValueError("the exit-time bound requires beta >= 2")
    if len(U_seq) != len(e_hat_seq):
        raise ValueError("need one e_hat per set")
    batch = simulate_paths(x, ya, T, n_paths, seed, threads)
    out = []
    for U, e_hat in zip(U_seq, e_hat_seq):
        e_hat = np.asarray(e_hat, dtype=float)
        e_x = 0.0 if x == ya.cemetery_index else float(e_hat[x])
        tau = _batch_hitting_times(batch, U)
        vals = np.where(np.isfinite(tau), np.exp(-2.0 * np.where(np.isfinite(tau), tau, 0.0)), 0.0)
        est = mc_estimate(vals, seed)
        starts_inside = x < ya.n_states and bool(as_mask(U, ya.n_states)[x])
        tail = 0.0 if starts_inside else math.exp(-2.0 * T)
        ok = est.mean + n_sigma * est.std_error + tail <= e_x + tol
        out.append(ExitBound(int(x), est, tail, e_x, bool(ok)))
    return out


def mc_exit_bound(x: int, U, e_hat, ya: YosidaApprox, n_paths: int, T: float, seed: int,
                  n_sigma: float = 4.0, tol: float = 1e-9, threads: int = 1) -> ExitBound:
    """Single-set form of :func:`mc_exit_bounds`."""
    return mc_exit_bounds(x, [U], [e_hat], ya, n_paths, T, seed, n_sigma, tol, threads)[0]


class TwoExcessive(NamedTuple):
    passed: bool
    max_violation: float
    small_time_gaps: np.ndarray


def check_two_excessive(e_hat, ya: YosidaApprox, t_grid=None, tol: float = 1e-9, tail_tol: float = 1e-13) -> TwoExcessive:
    """Deterministic check of ``e^{-2t} P^beta_t e_hat <= e_hat`` on a time grid.

    Also reports ``||e^{-2t} P^beta_t e_hat - e_hat||_inf`` for the sorted grid,
    which must shrink as ``t`` decreases to 0.
    """
    if ya.beta < 2:
        raise ValueError("2-excessivity is only claimed for beta >= 2")
    e_hat = np.asarray(e_hat, dtype=float)
    grid = np.sort(np.asarray(2.0 ** np.arange(-10, 2) if t_grid is None else t_grid, dtype=float))
    worst = -np.inf
    gaps = []
    for t in grid:
        ev = approx_semigroup(ya, t, e_hat, tail_tol=tail_tol)
        diff = math.exp(-2.0 * t) * ev.values - e_hat
        worst = max(worst, float(diff.max()))
        gaps.append(float(np.abs(diff).max()))
    gaps = np.array(gaps)
    scale = max(1.0, float(np.abs(e_hat).max()))
    shrinking = bool(np.all(np.diff(gaps) >= -tol * scale))
    return TwoExcessive(worst <= tol and shrinking, worst, gaps)


def invariance_check(paths, S, ya: YosidaApprox) -> bool:
    """Whether no path started in ``S_Delta`` leaves ``S_Delta``.

    The kernel premise, ``beta R_beta(x, E minus S) = 0`` for ``x`` in ``S``, is
    checked first.

    Raises
    ------
    InvariantViolation
        If the kernel premise fails; no paths are inspected then.
    """
    n = ya.n_states
    mask = as_mask(S, n)
    leak = ya.chain_step[:n, :n][np.ix_(mask, ~mask)]
    if leak.size and leak.max() > 0:
        raise InvariantViolation(f"S is not invariant for the kernel (leak mass {leak.sum(axis=1).max():.3e})")
    allowed = np.append(mask, True)
    if isinstance(paths, PathBatch):
        if not allowed[paths.start]:
            raise ValueError("paths must start in S_Delta")
        return bool(np.all(allowed[paths.states]))
    for p in paths:
        if not allowed[p.states[0]]:
            raise ValueError("paths must start in S_Delta")
        if not np.all(allowed[p.states]):
            return False
    return True
