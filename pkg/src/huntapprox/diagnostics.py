"""Separating families, the metric rho and convergence probes for beta -> inf."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .exceptions import NumericalFailure
from .kernels import SubMarkovGenerator
from .simulator import PathBatch, mc_estimate, simulate_paths
from .space import StateSpace
from .yosida import target_semigroup, yosida_generator

__all__ = [
    "SeparatingFamily",
    "ConvergenceReport",
    "build_separating_family",
    "rho_distance",
    "rho_matrix",
    "generator_bound_check",
    "weak_convergence_probe",
    "path_regularity_stats",
    "kernel_rho_bound",
]


@dataclass(frozen=True, eq=False)
class SeparatingFamily:
    """Functions ``u_n >= 0`` and their potentials ``g_n = G_1 u_n``.

    ``g`` has shape ``(count, n + 1)``; its last column is the cemetery,
    where every ``g_n`` vanishes.
    """

    u: np.ndarray
    g: np.ndarray
    weights: np.ndarray

    @property
    def count(self) -> int:
        return self.u.shape[0]


def _separates(g: np.ndarray) -> tuple[bool, tuple[int, int] | None]:
    cols = g.T
    for x, y in itertools.combinations(range(cols.shape[0]), 2):
        if not np.any(cols[x] != cols[y]):
            return False, (x, y)
    return True, None


def build_separating_family(
    sp: StateSpace,
    L: SubMarkovGenerator,
    count: int | None = None,
    kind: str = "indicator",
    rng: np.random.Generator | None = None,
) -> SeparatingFamily:
    """Constant 1 followed by state indicators (or random bumps), pushed through ``G_1``.

    ``kind="random"`` draws the non-constant members as random nonnegative
    functions instead of indicators.

    Raises
    ------
    NumericalFailure
        If the resulting ``g_n`` do not separate the points of ``E_Delta``.
    """
    n = sp.n_states
    count = n + 1 if count is None else int(count)
    if count < 1:
        raise ValueError("count must be >= 1")
    rows = [np.ones(n)]
    if kind == "indicator":
        rows += [np.eye(n)[i % n] for i in range(count - 1)]
    elif kind == "random":
        rng = np.random.default_rng(0) if rng is None else rng
        rows += [rng.random(n) for _ in range(count - 1)]
    else:
        raise ValueError(f"unknown family kind {kind!r}")
    u = np.array(rows[:count])
    g = np.zeros((count, n + 1))
    g[:, :n] = L.solve(1.0, u.T).T
    ok, pair = _separates(g)
    if not ok:
        x, y = pair
        name = lambda i: "Delta" if i == n else sp.labels[i]
        raise NumericalFailure(f"family of {count} functions does not separate {name(x)} and {name(y)}; increase count")
    weights = 2.0 ** -np.arange(1, count + 1)
    return SeparatingFamily(u, g, weights)


def rho_distance(x: int, y: int, fam: SeparatingFamily) -> float:
    """``sum_n 2^-n min(|g_n(x) - g_n(y)|, 1)`` on ``E_Delta``."""
    return float(np.sum(fam.weights * np.minimum(np.abs(fam.g[:, x] - fam.g[:, y]), 1.0)))


def rho_matrix(fam: SeparatingFamily) -> np.ndarray:
    diff = np.abs(fam.g[:, :, None] - fam.g[:, None, :])
    return np.tensordot(fam.weights, np.minimum(diff, 1.0), axes=1)


def generator_bound_check(L: SubMarkovGenerator, fam: SeparatingFamily, beta_list) -> tuple[bool, np.ndarray, np.ndarray]:
    """Check ``||L^beta g_n||_inf <= ||g_n - u_n||_inf`` for every ``beta``.

    Returns the verdict, the bound per ``n`` and the largest observed
    ``||L^beta g_n||_inf`` per ``n``.
    """
    n = L.n_states
    g = fam.g[:, :n]
    bound = np.abs(g - fam.u).max(axis=1)
    seen = np.zeros(fam.count)
    for b in beta_list:
        Lb = yosida_generator(L, b).L_beta
        seen = np.maximum(seen, np.abs(Lb @ g.T).max(axis=0))
    return bool(np.all(seen <= bound * (1 + 1e-10) + 1e-12)), bound, seen


@dataclass(frozen=True)
class ConvergenceReport:
    betas: np.ndarray
    discrepancy: np.ndarray
    ci_halfwidth: np.ndarray
    jump_mean: np.ndarray
    max_rho_jump: np.ndarray
    modulus: np.ndarray
    exact_gap: np.ndarray = field(default=None)

    def final_vs_first(self) -> float:
        return float(self.discrepancy[-1] / self.discrepancy[0]) if self.discrepancy[0] > 0 else float("nan")


def _rho_jumps(batch: PathBatch, rho: np.ndarray) -> np.ndarray:
    if batch.states.shape[1] < 2:
        return np.zeros((len(batch), 0))
    before, after = batch.states[:, :-1], batch.states[:, 1:]
    jumps = rho[before, after]
    jumps[~np.isfinite(batch.times)] = 0.0
    return jumps


def path_regularity_stats(paths: PathBatch, fam: SeparatingFamily, delta: float = 0.05) -> dict:
    """Jump activity and rho-oscillation of a batch of paths.

    ``modulus`` is the mean over paths of the largest
    ``rho(X_{tau_k -}, X_{tau_{k+1}})`` over successive jump pairs closer than
    ``delta``: the oscillation that prevents a partition with mesh ``delta``
    from isolating single jumps. It is 0 for paths without such pairs.
    """
    rho = rho_matrix(fam)
    jumps = _rho_jumps(paths, rho)
    times = paths.times
    finite = np.isfinite(times)
    osc = np.zeros(len(paths))
    if times.shape[1] >= 2:
        with np.errstate(invalid="ignore"):
            close = finite[:, 1:] & (times[:, 1:] - times[:, :-1] < delta)
        two_step = rho[paths.states[:, :-2], paths.states[:, 2:]]
        cand = np.maximum(two_step, np.maximum(jumps[:, :-1], jumps[:, 1:]))
        osc = np.where(close, cand, 0.0).max(axis=1)
    flat = jumps[finite] if jumps.size else np.zeros(0)
    n_j = paths.n_jumps
    return {
        "jump_mean": float(n_j.mean()) if n_j.size else 0.0,
        "jump_max": int(n_j.max()) if n_j.size else 0,
        "rho_jump_max": float(flat.max()) if flat.size else 0.0,
        "rho_jump_mean": float(flat.mean()) if flat.size else 0.0,
        "rho_jump_quantiles": np.quantile(flat, [0.5, 0.9, 0.99]).tolist() if flat.size else [0.0, 0.0, 0.0],
        "modulus": float(osc.mean()) if osc.size else 0.0,
        "delta": float(delta),
    }


def kernel_rho_bound(ya, fam: SeparatingFamily) -> float:
    """Largest rho distance between states the chain can jump between."""
    rho = rho_matrix(fam)
    adj = ya.chain_step > 0
    return float(rho[adj].max()) if adj.any() else 0.0


def weak_convergence_probe(
    x: int,
    L: SubMarkovGenerator,
    beta_list,
    t_list,
    fam: SeparatingFamily,
    n_paths: int,
    seed: int,
    threads: int = 1,
    n_sigma: float = 4.0,
) -> ConvergenceReport:
    """Monte Carlo distance of ``X^beta_t`` from the target marginals.

    For every ``beta`` the discrepancy is the maximum over probe times and
    family functions ``g_n`` of ``|mean g_n(X^beta_t) - (e^{tL} g_n)(x)|``.
    ``exact_gap`` holds the same maximum computed from ``exp(t L^beta)``,
    i.e. with the sampling noise removed.
    """
    betas = np.asarray(beta_list, dtype=float)
    if np.any(np.diff(betas) <= 0):
        raise ValueError("beta_list must be increasing")
    t_list = np.asarray(t_list, dtype=float)
    n = L.n_states
    g = fam.g[:, :n]
    targets = {t: np.array([target_semigroup(L, t, gi)[x] for gi in g]) for t in t_list}
    disc, half, jmean, jmax, mods, exact = [], [], [], [], [], []
    for i, b in enumerate(betas):
        ya = yosida_generator(L, b)
        batch = simulate_paths(x, ya, float(t_list.max()), n_paths, seed + i, threads)
        worst, worst_ci, worst_exact = 0.0, 0.0, 0.0
        for t in t_list:
            at = batch.state_at(t)
            P = scipy.linalg.expm(t * ya.L_beta)
            for gi, gfull, target in zip(g, fam.g, targets[t]):
                est = mc_estimate(gfull[at], seed + i)
                d = abs(est.mean - target)
                if d > worst:
                    worst, worst_ci = d, n_sigma * est.std_error
                worst_exact = max(worst_exact, abs(float(P[x] @ gi) - target))
        stats = path_regularity_stats(batch, fam)
        disc.append(worst)
        half.append(worst_ci)
        exact.append(worst_exact)
        jmean.append(stats["jump_mean"])
        jmax.append(stats["rho_jump_max"])
        mods.append(stats["modulus"])
    return ConvergenceReport(betas, np.array(disc), np.array(half), np.array(jmean), np.array(jmax), np.array(mods), np.array(exact))
