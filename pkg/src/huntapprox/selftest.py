"""Built-in sanity suite run by ``huntapprox selftest``.

Each check evaluates one closed-form case (identity at zero, scalar killing
chain, two-state chain, ...) and reports the worst deviation it saw.
Monte Carlo checks use fixed seeds and 4-sigma bands.
"""
from __future__ import annotations

import math
from typing import Callable, NamedTuple

import numpy as np

from .diagnostics import build_separating_family, path_regularity_stats, rho_distance
from .kernels import SubMarkovGenerator, adjoint, check_resolvent_identity, extend_cemetery, resolvent
from .models import model_birth_death
from .potential import (
    capacity,
    capacity_dual_lower_bound,
    capacity_markov_inequality,
    e_U_by_definition,
    is_alpha_excessive,
    reduite,
    build_modified_sequence,
)
from .simulator import (
    PathSample,
    check_two_excessive,
    hitting_time,
    invariance_check,
    mc_exit_bound,
    mc_laplace,
    sample_chain_step,
    simulate_paths,
)
from .space import StateSpace, extend_to_cemetery, h_inner, integrate
from .yosida import approx_form_eval, approx_resolvent, approx_semigroup, convergence_table, yosida_generator
from .exceptions import InvariantViolation

__all__ = ["CheckResult", "CHECKS", "run_selftest"]


class CheckResult(NamedTuple):
    name: str
    passed: bool
    detail: str


CHECKS: list[tuple[str, Callable[[], tuple[bool, str]]]] = []


def _check(name):
    def deco(fn):
        CHECKS.append((name, fn))
        return fn
    return deco


def _killing() -> SubMarkovGenerator:
    return SubMarkovGenerator([[-1.0]])


def _two_state() -> SubMarkovGenerator:
    return SubMarkovGenerator([[-1.0, 1.0], [1.0, -1.0]])


def _close(a, b, tol) -> tuple[bool, str]:
    err = float(np.max(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)))) if np.size(a) else 0.0
    return err <= tol, f"max deviation {err:.3e} (tol {tol:g})"


# --- space ------------------------------------------------------------------

@_check("integrate: zero function")
def _():
    return _close(integrate(np.zeros(3), StateSpace.uniform(3)), 0.0, 0.0)


@_check("integrate: total mass")
def _():
    return _close(integrate(np.ones(2), StateSpace(m=[0.5, 0.5])), 1.0, 0.0)


@_check("integrate: arithmetic")
def _():
    return _close(integrate([1.0, 2.0, 3.0], StateSpace.uniform(3)), 6.0, 0.0)


@_check("h_inner: zero, disjoint support, arithmetic")
def _():
    vals = [h_inner(np.zeros(2), np.zeros(2), StateSpace.uniform(2)),
            h_inner([1.0, 0.0], [0.0, 1.0], StateSpace(m=[0.3, 7.0])),
            h_inner([1.0, 1.0], [1.0, 1.0], StateSpace(m=[2.0, 3.0]))]
    return _close(vals, [0.0, 0.0, 5.0], 0.0)


@_check("cemetery extension of 0 and 1_E")
def _():
    return _close(np.r_[extend_to_cemetery(np.zeros(3)), extend_to_cemetery(np.ones(3))], [0, 0, 0, 0, 1, 1, 1, 0], 0.0)


# --- kernels ----------------------------------------------------------------

@_check("resolvent of pure killing")
def _():
    return _close(resolvent(_killing(), 1.0).matrix, [[0.5]], 1e-15)


@_check("resolvent of the two-state chain")
def _():
    return _close(resolvent(_two_state(), 1.0).matrix, [[2 / 3, 1 / 3], [1 / 3, 2 / 3]], 1e-15)


@_check("cemetery kernel of pure killing")
def _():
    return _close(extend_cemetery(resolvent(_killing(), 1.0)).matrix, [[0.5, 0.5], [0.0, 1.0]], 1e-15)


@_check("conservative chain sends no mass to the cemetery")
def _():
    K = extend_cemetery(resolvent(_two_state(), 3.0)).matrix
    return _close(K[:2, 2], 0.0, 1e-15)


@_check("adjoint of a symmetric chain under uniform m")
def _():
    k = resolvent(_two_state(), 1.0)
    return _close(adjoint(k, StateSpace.uniform(2)).matrix, k.matrix, 1e-15)


@_check("resolvent identity: equal parameters and scalar case")
def _():
    a = check_resolvent_identity(_two_state(), 2.0, 2.0)
    b = check_resolvent_identity(_killing(), 1.0, 2.0)
    scalar = 0.5 - 1 / 3 - (2 - 1) * 0.5 * (1 / 3)
    ok = a.residual == 0.0 and b.passed and abs(scalar) < 1e-16
    return ok, f"residuals {a.residual:.3e}, {b.residual:.3e}"


@_check("single-state birth-death is pure killing")
def _():
    return _close(model_birth_death(1, [], [], [1.0]).rates, [[-1.0]], 0.0)


# --- potential --------------------------------------------------------------

@_check("excessivity certificates: 0, G_1 g, constant 1 on a conservative chain")
def _():
    L = _two_state()
    ok = all([
        is_alpha_excessive(np.zeros(2), L, 1.0).passed,
        is_alpha_excessive(L.solve(1.0, np.array([0.2, 1.3])), L, 1.0).passed,
        is_alpha_excessive(np.ones(2), L, 1.0).passed,
    ])
    return ok, "all three certified" if ok else "a certificate failed"


@_check("reduced function: empty set and 1 on E")
def _():
    L = _two_state()
    a = reduite(np.ones(2), [], L).values
    b = reduite(np.ones(2), [0, 1], L).values
    return _close(np.r_[a, b], [0, 0, 1, 1], 1e-10)


@_check("e_U and capacity of the empty set and of E")
def _():
    L, sp = _two_state(), StateSpace(m=[1.0, 2.0], phi=[0.5, 1.0])
    e_empty = e_U_by_definition([], L, sp)
    e_full = e_U_by_definition([0, 1], L, sp)
    caps = [capacity([], sp, L).value, capacity([0, 1], sp, L).value]
    return _close(np.r_[e_empty, e_full, caps], [0, 0, 1, 1, 0, integrate(sp.phi, sp)], 1e-8)


@_check("capacity is monotone on the two-state chain")
def _():
    L, sp = _two_state(), StateSpace.uniform(2)
    full = capacity([0, 1], sp, L).value
    parts = [capacity(U, sp, L).value for U in ([], [0], [1])]
    return max(parts) <= full + 1e-12, f"Cap(E) = {full:.6g}, parts {parts}"


@_check("dual lower bound of the empty set")
def _():
    return _close(capacity_dual_lower_bound([], StateSpace.uniform(2), _two_state()), 0.0, 1e-15)


@_check("capacity Markov inequality: u = 0 and u = 1")
def _():
    L, sp = _two_state(), StateSpace.uniform(2, phi=0.5)
    zero = capacity_markov_inequality(np.zeros(2), 0.5, sp, L)
    one = capacity_markov_inequality(np.ones(2), 0.5, sp, L)
    ok = zero.passed and zero.lhs == 0.0 and one.passed and abs(one.rhs - 2 * integrate(sp.phi, sp)) < 1e-9
    return ok, f"u=1: {one.lhs:.6g} <= {one.rhs:.6g}"


@_check("modified excessive sequence of empty sets")
def _():
    L, sp = _two_state(), StateSpace.uniform(2)
    seq = build_modified_sequence([[], []], L, sp)
    vals = np.concatenate([*seq.e, *seq.e_hat, *[N.astype(float) for N in seq.N]])
    return _close(vals, 0.0, 0.0)


# --- yosida -----------------------------------------------------------------

@_check("Yosida generator of pure killing")
def _():
    betas = [1.0, 10.0, 100.0, 1000.0]
    vals = np.array([yosida_generator(_killing(), b).L_beta[0, 0] for b in betas])
    ok, detail = _close(vals, [-b / (b + 1) for b in betas], 1e-12)
    return ok and bool(np.all(np.diff(np.abs(vals + 1.0)) < 0)), detail


@_check("Yosida semigroup at t = 0 and mass conservation")
def _():
    ya = yosida_generator(_two_state(), 3.0)
    f = np.array([0.3, -1.2])
    a = approx_semigroup(ya, 0.0, f).values
    b = approx_semigroup(ya, 2.5, np.ones(2)).values
    return _close(np.r_[a, b], np.r_[f, 1.0, 1.0], 1e-13)


@_check("Yosida semigroup of pure killing, scalar formula")
def _():
    v = approx_semigroup(yosida_generator(_killing(), 4.0), 1.0, np.ones(1)).values[0]
    return _close(v, math.exp(-4.0 / 5.0), 1e-12)


@_check("approximate resolvent of pure killing, both routes")
def _():
    direct = 1.0 / (1.0 - yosida_generator(_killing(), 1.0).L_beta[0, 0])
    return _close([approx_resolvent(_killing(), 1.0, 1.0)[0, 0], direct], [2 / 3, 2 / 3], 1e-15)


@_check("approximate resolvent conserves mass as alpha -> 0")
def _():
    a = 1e-8
    return _close(a * approx_resolvent(_two_state(), a, 5.0).sum(axis=1), 1.0, 1e-7)


@_check("approximating form: zeros and invariant constant")
def _():
    L, sp = _two_state(), StateSpace.uniform(2)
    vals = [approx_form_eval(L, 4.0, np.zeros(2), np.zeros(2), sp),
            approx_form_eval(L, 4.0, np.ones(2), np.array([0.7, -2.0]), sp)]
    return _close(vals, 0.0, 1e-14)


@_check("convergence table: zero function and pure killing")
def _():
    zero = convergence_table(_two_state(), np.zeros(2), 1.0, [1.0, 2.0, 4.0])
    kill = convergence_table(_killing(), np.ones(1), 1.0, [1.0])
    return _close(np.r_[zero.sup_errors, kill.sup_errors], [0, 0, 0, abs(math.exp(-0.5) - math.exp(-1))], 1e-14)


# --- simulator --------------------------------------------------------------

@_check("cemetery is absorbing for the chain step")
def _():
    ya = yosida_generator(_killing(), 1.0)
    rng = np.random.default_rng(0)
    ok = all(sample_chain_step(1, ya, rng) == 1 for _ in range(100))
    return ok, "100 draws from the cemetery"


@_check("chain step of pure killing splits one half / one half")
def _():
    ya = yosida_generator(_killing(), 1.0)
    rng = np.random.default_rng(1)
    draws = np.array([sample_chain_step(0, ya, rng) for _ in range(20000)])
    p = float(np.mean(draws == 0))
    sd = math.sqrt(0.25 / draws.size)
    return abs(p - 0.5) <= 4 * sd, f"P(stay) = {p:.4f} +- {sd:.4f}"


@_check("paths without jumps stay at the start")
def _():
    ya = yosida_generator(_two_state(), 1.0)
    batch = simulate_paths(1, ya, 1e-3, 4096, seed=5)
    quiet = batch.n_jumps == 0
    return bool(np.all(batch.states[quiet] == 1)), f"{int(quiet.sum())} jump-free paths"


@_check("mean jump count equals beta T")
def _():
    beta, T = 3.0, 2.0
    batch = simulate_paths(0, yosida_generator(_two_state(), beta), T, 100_000, seed=11)
    mean = float(batch.n_jumps.mean())
    sd = math.sqrt(beta * T / len(batch))
    return abs(mean - beta * T) <= 4 * sd, f"mean {mean:.4f}, target {beta * T}, sd {sd:.4f}"


@_check("hitting time: start inside, empty set")
def _():
    p = PathSample(1.0, 1.0, np.array([0.3]), np.array([0, 1]), math.inf)
    ok = hitting_time(p, [0]) == 0.0 and hitting_time(p, []) == math.inf
    return ok, "tau = 0 and +inf"


@_check("Laplace transform: f = 0, total mass, pure killing")
def _():
    two = yosida_generator(_two_state(), 2.0)
    zero, _ = mc_laplace(0, 1.0, np.zeros(2), two, 2048, 20.0, seed=1)
    mass, _ = mc_laplace(0, 1.0, np.ones(2), two, 2048, 20.0, seed=1)
    kill, _ = mc_laplace(0, 1.0, np.ones(1), yosida_generator(_killing(), 1.0), 100_000, 20.0, seed=2)
    ok = zero.mean == 0.0 and abs(mass.mean - 1.0) <= 1e-6 + 4 * mass.std_error \
        and abs(kill.mean - 2 / 3) <= 4 * kill.std_error
    return ok, f"mass {mass.mean:.6f}, killing {kill.mean:.5f} +- {kill.std_error:.5f}"


@_check("exit bound: start inside U and empty U")
def _():
    ya = yosida_generator(_two_state(), 2.0)
    inside = mc_exit_bound(0, [0], np.array([1.0, 0.5]), ya, 2048, 12.0, seed=3)
    empty = mc_exit_bound(0, [], np.zeros(2), ya, 2048, 12.0, seed=3)
    ok = inside.passed and inside.estimate.mean == 1.0 and empty.passed
    return ok, f"inside {inside.estimate.mean}, empty tail {empty.tail:.2e}"


@_check("2-excessivity of 0 and of 1 on a conservative chain")
def _():
    ya = yosida_generator(_two_state(), 2.0)
    a = check_two_excessive(np.zeros(2), ya)
    b = check_two_excessive(np.ones(2), ya)
    return a.passed and b.passed, f"violations {a.max_violation:.2e}, {b.max_violation:.2e}"


@_check("invariance: S = E, and refusal for a leaky S")
def _():
    ya = yosida_generator(_two_state(), 2.0)
    ok = invariance_check(simulate_paths(0, ya, 2.0, 256, seed=1), [0, 1], ya)
    try:
        invariance_check([], [0], ya)
        refused = False
    except InvariantViolation:
        refused = True
    return ok and refused, "invariant E accepted, leaky S refused"


# --- diagnostics ------------------------------------------------------------

@_check("separating family on one state and rho conventions")
def _():
    sp = StateSpace.uniform(1)
    fam = build_separating_family(sp, _killing(), count=1)
    g = fam.g[0]
    ok = g[0] > 0 and g[1] == 0 and rho_distance(0, 0, fam) == 0.0
    expect = float(np.sum(fam.weights * np.minimum(np.abs(fam.g[:, 0]), 1.0)))
    return ok and rho_distance(0, 1, fam) == expect, f"g_1 = {g[0]:.6g}"


@_check("indicator family separates all states")
def _():
    sp = StateSpace.uniform(5)
    fam = build_separating_family(sp, model_birth_death(5, np.ones(4), np.ones(4), np.r_[1.0, 0, 0, 0, 1.0]))
    return True, f"{fam.count} functions"


@_check("path statistics: zero-jump paths and pure killing jump sizes")
def _():
    ya = yosida_generator(_killing(), 1.0)
    fam = build_separating_family(StateSpace.uniform(1), _killing(), count=1)
    quiet = simulate_paths(0, ya, 1e-4, 64, seed=2)
    quiet_idx = quiet.n_jumps == 0
    stats = path_regularity_stats(simulate_paths(0, ya, 3.0, 2048, seed=2), fam)
    allowed = {0.0, rho_distance(0, 1, fam)}
    q = path_regularity_stats(quiet, fam) if quiet_idx.all() else {"rho_jump_max": 0.0, "modulus": 0.0}
    ok = q["rho_jump_max"] == 0.0 and q["modulus"] == 0.0 and stats["rho_jump_max"] in allowed
    return ok, f"largest rho jump {stats['rho_jump_max']:.6g}"


def run_selftest(verbose: bool = False) -> list[CheckResult]:
    """Run every registered check; exceptions count as failures."""
    out = []
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failed check, not a crashed suite
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append(CheckResult(name, bool(ok), detail))
        if verbose:
            print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return out
