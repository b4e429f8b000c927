import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import generators
from huntapprox.diagnostics import build_separating_family
from huntapprox.exceptions import InvariantViolation
from huntapprox.kernels import SubMarkovGenerator
from huntapprox.models import example_models, model_absorbed_diffusion, model_birth_death, model_reducible
from huntapprox.potential import build_modified_sequence
from huntapprox.simulator import (
    BLOCK_SIZE,
    PathSample,
    check_two_excessive,
    hitting_time,
    invariance_check,
    mc_estimate,
    mc_exit_bound,
    mc_exit_bounds,
    mc_laplace,
    mc_marginal,
    sample_chain_step,
    sample_path,
    simulate_paths,
)
from huntapprox.space import StateSpace
from huntapprox.yosida import approx_resolvent, approx_semigroup, yosida_generator

KILLING = SubMarkovGenerator([[-1.0]])
TWO = SubMarkovGenerator([[-1.0, 1.0], [1.0, -1.0]])


def test_cemetery_absorbs():
    ya = yosida_generator(TWO, 3.0)
    rng = np.random.default_rng(0)
    assert all(sample_chain_step(2, ya, rng) == 2 for _ in range(200))
    batch = simulate_paths(2, ya, 5.0, 500, seed=1)
    assert np.all(batch.states == 2)
    assert np.all(batch.absorbed_at == 0.0)


def test_killing_step_is_fair_coin():
    ya = yosida_generator(KILLING, 1.0)
    np.testing.assert_allclose(ya.chain_step, [[0.5, 0.5], [0.0, 1.0]], atol=1e-16)
    rng = np.random.default_rng(3)
    draws = np.array([sample_chain_step(0, ya, rng) for _ in range(40000)])
    assert abs(np.mean(draws == 0) - 0.5) <= 4 * math.sqrt(0.25 / draws.size)


def test_transition_frequencies_match_kernel(models):
    mdl = models["birth_death"]
    ya = yosida_generator(mdl.generator, 6.0)
    counts = np.zeros((ya.cemetery_index + 1,) * 2)
    for x in range(ya.cemetery_index):
        batch = simulate_paths(x, ya, 2.0, 12 * BLOCK_SIZE, seed=100 + x)
        k = batch.states.shape[1] - 1
        valid = np.arange(k)[None, :] < batch.n_jumps[:, None]
        np.add.at(counts, (batch.states[:, :-1][valid], batch.states[:, 1:][valid]), 1)
    assert counts.sum() > 1e6
    for x in range(ya.cemetery_index):
        n = counts[x].sum()
        p = ya.chain_step[x]
        band = 4 * np.sqrt(p * (1 - p) / n) + 1e-12
        assert np.all(np.abs(counts[x] / n - p) <= band), x


def test_quiet_paths_stay_put():
    ya = yosida_generator(TWO, 0.5)
    batch = simulate_paths(0, ya, 0.01, 3000, seed=2)
    quiet = batch.n_jumps == 0
    assert quiet.sum() > 2900
    assert np.all(batch.states[quiet] == 0)
    assert np.all(batch.state_at(0.005)[quiet] == 0)


def test_jump_count_is_poisson_mean():
    beta, T = 5.0, 1.5
    batch = simulate_paths(0, yosida_generator(TWO, beta), T, 100_000, seed=4)
    assert abs(batch.n_jumps.mean() - beta * T) <= 4 * math.sqrt(beta * T / len(batch))
    assert abs(batch.n_jumps.var() - beta * T) < 0.05 * beta * T


def test_marginals_match_series(models):
    misses = 0
    cells = 0
    for i, (name, mdl) in enumerate(models.items()):
        ya = yosida_generator(mdl.generator, 4.0)
        fam = build_separating_family(mdl.space, mdl.generator)
        for g in fam.g[[0, 1, -1], :-1]:
            est = mc_marginal(0, g, 1.0, ya, 100_000, seed=10 + i)
            ev = approx_semigroup(ya, 1.0, g)
            cells += 1
            # the series reference carries its own truncation error
            misses += abs(est.mean - ev.values[0]) > 4 * est.std_error + ev.truncation_bound * np.abs(g).max()
    assert misses <= 0.05 * cells


def test_hitting_time_fixture():
    p = PathSample(2.0, 3.0, np.array([0.4, 1.1, 2.5]), np.array([0, 1, 2, 1]), math.inf)
    assert hitting_time(p, [0]) == 0.0
    assert hitting_time(p, []) == math.inf
    assert hitting_time(p, [2]) == 1.1
    assert hitting_time(p, np.array([False, True, False])) == 0.4
    assert p.state_at(0.0) == 0 and p.state_at(0.4) == 1 and p.state_at(2.9) == 1


def test_laplace_examples():
    ya = yosida_generator(TWO, 2.0)
    zero, _ = mc_laplace(0, 1.0, np.zeros(2), ya, 4096, 20.0, seed=1)
    assert zero.mean == 0.0 and zero.std_error == 0.0
    one, bias = mc_laplace(1, 0.5, np.ones(2), ya, 4096, 40.0, seed=1)
    assert abs(one.mean - 2.0) <= bias + 1e-12
    kill, _ = mc_laplace(0, 1.0, np.ones(1), yosida_generator(KILLING, 1.0), 100_000, 20.0, seed=5)
    assert abs(kill.mean - 2 / 3) <= 4 * kill.std_error
    with pytest.raises(ValueError, match="budget"):
        mc_laplace(0, 1.0, np.ones(2), ya, 10, 1.0, seed=1)


def test_laplace_matches_closed_form_resolvent(models):
    mdl = models["reducible"]
    f = np.linspace(0.2, 1.0, 5)
    est, bias = mc_laplace(1, 1.5, f, yosida_generator(mdl.generator, 3.0), 50_000, 16.0, seed=9)
    exact = (approx_resolvent(mdl.generator, 1.5, 3.0) @ f)[1]
    assert abs(est.mean - exact) <= 4 * est.std_error + bias


def test_exit_bound_trivial_cases():
    ya = yosida_generator(TWO, 2.0)
    r = mc_exit_bound(0, [0], np.array([1.0, 0.3]), ya, 1000, 12.0, seed=1)
    assert r.estimate.mean == 1.0 and r.tail == 0.0 and r.passed
    r = mc_exit_bound(1, [], np.zeros(2), ya, 1000, 12.0, seed=1)
    assert r.estimate.mean == 0.0 and r.tail == pytest.approx(math.exp(-24.0)) and r.passed
    with pytest.raises(ValueError, match="beta >= 2"):
        mc_exit_bound(0, [0], np.ones(2), yosida_generator(TWO, 1.0), 10, 12.0, seed=1)


def test_exit_bound_diffusion_pipeline():
    n = 24
    L = model_absorbed_diffusion(0.0, 0.05, n)
    sp = StateSpace.uniform(n, 1.0 / n)
    seq = build_modified_sequence([np.arange(6, 18), np.arange(9, 15), np.arange(11, 13), []], L, sp)
    for beta in (2.0, 4.0, 8.0):
        ya = yosida_generator(L, beta)
        for x in (0, 4, 8, 11):
            res = mc_exit_bounds(x, seq.sets, seq.e_hat, ya, 8000, 12.0, seed=int(beta) * 100 + x)
            assert all(r.passed for r in res), (beta, x)


def test_two_excessive_examples(models):
    ya = yosida_generator(TWO, 2.0)
    assert check_two_excessive(np.zeros(2), ya).passed
    chk = check_two_excessive(np.ones(2), ya)
    assert chk.passed and chk.max_violation <= 0
    assert np.all(np.diff(chk.small_time_gaps) >= 0)
    mdl = models["birth_death"]
    seq = build_modified_sequence([np.ones(8, bool), np.arange(2, 6), []], mdl.generator, mdl.space)
    for beta in (2.0, 4.0, 8.0):
        for eh in seq.e_hat:
            assert check_two_excessive(eh, yosida_generator(mdl.generator, beta)).passed
    with pytest.raises(ValueError):
        check_two_excessive(np.ones(2), yosida_generator(TWO, 1.0))


def test_invariance():
    ya = yosida_generator(TWO, 2.0)
    assert invariance_check(simulate_paths(0, ya, 3.0, 500, seed=3), [0, 1], ya)
    L = model_reducible([model_birth_death(2, [1.0], [2.0], [0.0, 0.5]), KILLING])
    yb = yosida_generator(L, 3.0)
    assert invariance_check(simulate_paths(1, yb, 4.0, 20_000, seed=8), [0, 1], yb)
    with pytest.raises(InvariantViolation, match="not invariant"):
        invariance_check(simulate_paths(0, yb, 1.0, 10, seed=8), [0], yb)
    with pytest.raises(ValueError, match="start"):
        invariance_check(simulate_paths(2, yb, 1.0, 10, seed=8), [0, 1], yb)
    escaped = PathSample(3.0, 1.0, np.array([0.5]), np.array([0, 2]), math.inf)
    assert invariance_check([escaped], [0, 1], yosida_generator(model_reducible([TWO, TWO]), 3.0)) is False


def test_thread_count_does_not_change_paths(models):
    ya = yosida_generator(models["birth_death"].generator, 8.0)
    a = simulate_paths(2, ya, 3.0, 3 * BLOCK_SIZE + 17, seed=42, threads=1)
    b = simulate_paths(2, ya, 3.0, 3 * BLOCK_SIZE + 17, seed=42, threads=4)
    np.testing.assert_array_equal(a.times, b.times)
    np.testing.assert_array_equal(a.states, b.states)
    c = simulate_paths(2, ya, 3.0, 100, seed=42)
    for i in range(100):
        np.testing.assert_array_equal(c.path(i).states, a.path(i).states)
    d = simulate_paths(2, ya, 3.0, 100, seed=43)
    assert not np.array_equal(c.states[:, :5], d.states[:, :5])


def test_mc_estimate_reduction_is_exact():
    vals = np.array([1e16, 1.0, -1e16, 1.0])
    est = mc_estimate(vals, seed=0)
    assert est.mean == 0.5 and est.n_paths == 4


@given(L=generators(max_n=4), beta=st.sampled_from([0.5, 2.0, 8.0]), seed=st.integers(0, 2**32))
def test_paths_are_valid(L, beta, seed):
    ya = yosida_generator(L, beta)
    rng = np.random.default_rng(seed)
    p = sample_path(int(rng.integers(L.n_states)), ya, 2.0, rng)
    assert np.all(np.diff(p.jump_times) > 0)
    assert np.all(p.jump_times <= 2.0)
    assert len(p.states) == len(p.jump_times) + 1
    for a, b in zip(p.states, p.states[1:]):
        assert ya.chain_step[a, b] > 0
    d = ya.cemetery_index
    if d in p.states:
        first = int(np.argmax(p.states == d))
        assert np.all(p.states[first:] == d)
        assert p.absorbed_at == p.jump_times[first - 1]
    else:
        assert p.absorbed_at == math.inf
