import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from skts.baselines import conventional_ks, oracle_ks
from skts.em import (
    SktsConfig,
    accumulate_statistics,
    estimate_amplitude_variances,
    estimate_sparsity_order,
    exhaustive_support_search,
    greedy_tree_search,
    q_score,
    run_skts,
)
from skts.kalman import log_likelihood
from skts.model import EmStatistics, MeasurementBlock, PosteriorStats, StateSpaceModel, SupportVector

from conftest import random_psd


def brute_force_best(stats, K):
    """Best score over every size-K support, by plain enumeration."""
    M = stats.dim
    best = -np.inf
    for idx in itertools.combinations(range(M), K):
        c = np.zeros(M)
        c[list(idx)] = 1
        best = max(best, float(stats.d @ c - c @ stats.Phi @ c))
    return best


def random_stats(rng, M):
    X = rng.standard_normal((M, M))
    return EmStatistics(rng.standard_normal(M) * 3, X @ X.T / M)


# -- statistics -------------------------------------------------------------


def test_statistics_hand_example():
    block = MeasurementBlock([[1.0, 0.0]], np.eye(2))
    post = PosteriorStats(np.array([[1.0, 0.0]], complex), np.zeros((1, 2, 2), complex))
    stats = accumulate_statistics(block, post)
    np.testing.assert_allclose(stats.d, [2.0, 0.0])
    np.testing.assert_allclose(stats.Phi, [[1.0, 0.0], [0.0, 0.0]])


def test_zero_posterior_gives_zero_statistics(rng):
    block = MeasurementBlock(rng.standard_normal((3, 2)), rng.standard_normal((3, 2, 4)))
    stats = accumulate_statistics(block, PosteriorStats(np.zeros((3, 4), complex), np.zeros((3, 4, 4), complex)))
    assert not stats.d.any() and not stats.Phi.any()


def direct_trace(B, c, second):
    D = np.diag(c.astype(float))
    return float(np.real(np.trace(B @ D @ second @ D @ B.conj().T)))


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), M=st.integers(1, 8), N=st.integers(1, 5))
def test_hadamard_trace_identity(seed, M, N):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((N, M)) + 1j * rng.standard_normal((N, M))
    S = random_psd(rng, M)
    s = rng.standard_normal(M) + 1j * rng.standard_normal(M)
    c = rng.random(M) < 0.5
    second = S + np.outer(s, s.conj())
    lhs = direct_trace(B, c, second)
    rhs = float(c @ np.real(np.conj(B.conj().T @ B) * second) @ c)
    assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1e-300)


def test_quadratic_term_equals_summed_traces(rng):
    T, N, M = 4, 3, 5
    B = rng.standard_normal((T, N, M)) + 1j * rng.standard_normal((T, N, M))
    means = rng.standard_normal((T, M)) + 1j * rng.standard_normal((T, M))
    covs = np.stack([random_psd(rng, M) for _ in range(T)])
    block = MeasurementBlock(rng.standard_normal((T, N)) + 0j, B)
    stats = accumulate_statistics(block, PosteriorStats(means, covs))
    c = np.array([1, 0, 1, 1, 0], bool)
    expected = sum(direct_trace(B[t], c, covs[t] + np.outer(means[t], means[t].conj())) for t in range(T))
    assert c @ stats.Phi @ c == pytest.approx(expected, rel=1e-10)
    lin = sum(2 * np.real(block.y[t].conj() @ B[t] @ np.diag(c.astype(float)) @ means[t]) for t in range(T))
    assert stats.d @ c == pytest.approx(lin, rel=1e-10)
    np.testing.assert_allclose(stats.Phi, stats.Phi.T)


# -- score and tree search ---------------------------------------------------


def test_q_score_examples():
    stats = EmStatistics([1.0, 3.0, 2.0], 0.5 * np.eye(3))
    assert q_score(stats, np.zeros(3)) == 0
    assert q_score(stats, [0, 1, 0]) == pytest.approx(2.5)
    phi = np.arange(9.0).reshape(3, 3)
    assert q_score(EmStatistics(np.zeros(3), phi), np.ones(3)) == -phi.sum()


def test_tree_search_single_layer():
    stats = EmStatistics([1.0, 3.0, 2.0], 0.5 * np.eye(3))
    for R in (1, 2, 5):
        assert greedy_tree_search(stats, 1, R).indices == (1,)


def test_tree_search_empty():
    s = greedy_tree_search(EmStatistics.zeros(4), 0, 3)
    assert s.sparsity == 0 and not s.bits.any()


def test_tree_search_rejects_large_k():
    with pytest.raises(ValueError):
        greedy_tree_search(EmStatistics.zeros(3), 4, 2)


def test_tree_search_zero_statistics_tie_break():
    s = greedy_tree_search(EmStatistics.zeros(10), 4, 3)
    assert s.indices == (0, 1, 2, 3)


def test_tree_search_exhaustive_equivalence(rng):
    for _ in range(100):
        stats = random_stats(rng, 8)
        s = greedy_tree_search(stats, 3, 28)
        assert s.sparsity == 3
        assert q_score(stats, s) == brute_force_best(stats, 3)


def test_tree_search_exact_with_ties():
    # every pair scores the same; the lexicographically smallest wins
    stats = EmStatistics(np.ones(5), np.zeros((5, 5)))
    assert greedy_tree_search(stats, 2, 10).indices == (0, 1)
    assert exhaustive_support_search(stats, 2).indices == (0, 1)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), M=st.integers(1, 7), data=st.data())
def test_tree_search_wide_beam_is_exact(seed, M, data):
    K = data.draw(st.integers(0, M))
    rng = np.random.default_rng(seed)
    stats = random_stats(rng, M)
    R = max(math.comb(M, k) for k in range(K + 1))
    s = greedy_tree_search(stats, K, max(R, 1))
    assert s.sparsity == K
    assert q_score(stats, s) == pytest.approx(brute_force_best(stats, K), abs=1e-12)


def test_tree_search_cost_is_linear(rng, monkeypatch):
    import skts.em as em

    calls = []
    real = em.q_score
    monkeypatch.setattr(em, "q_score", lambda st_, c: calls.append(1) or real(st_, c))
    stats = random_stats(rng, 60)
    greedy_tree_search(stats, 6, 4)
    # only the final survivors are rescored exactly
    assert len(calls) <= 4


def test_drop_heuristic_stops_early():
    d = np.array([10.0, 9.0, 8.0, 0.1, 0.1, 0.1])
    stats = EmStatistics(d, 0.01 * np.eye(6))
    s = greedy_tree_search(stats, 6, 3, drop_fraction=0.05)
    assert s.indices == (0, 1, 2)


# -- sparsity order and variances --------------------------------------------


def unitary(rng, n):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
    return q


def test_sparsity_order_single_atom():
    B = np.eye(4)
    y = np.tile(B[:, 1], (3, 1))
    assert estimate_sparsity_order(MeasurementBlock(y, B), 0.5) == 1
    assert estimate_sparsity_order(MeasurementBlock(np.zeros((3, 4)), B), 0.5) == 0


def test_sparsity_order_two_taps(rng):
    B = unitary(rng, 4)
    T = 6
    h = np.zeros(4)
    h[[0, 2]] = 1.0
    y = np.stack([B @ h + np.sqrt(1e-4 / 2) * (rng.standard_normal(4) + 1j * rng.standard_normal(4)) for _ in range(T)])
    block = MeasurementBlock(y, B)
    stat = np.mean(np.abs(np.einsum("nm,tn->tm", B.conj(), y)), axis=0)
    assert np.count_nonzero(stat > 0.5) == 2
    assert estimate_sparsity_order(block, 0.5) == 2


def test_sparsity_order_warns_on_dead_column():
    B = np.eye(3)
    B[:, 2] = 0
    with pytest.warns(RuntimeWarning):
        assert estimate_sparsity_order(MeasurementBlock(np.tile(B[:, 0], (2, 1)), B), 0.5) == 1


def test_amplitude_variance_noiseless(rng):
    B = unitary(rng, 4)
    h = np.zeros(4)
    h[3] = 2.0
    block = MeasurementBlock(np.tile(B @ h, (5, 1)), B)
    for mode in ("snapshot", "coherent"):
        var = estimate_amplitude_variances(block, mode)
        assert var[3] == pytest.approx(4.0)
        np.testing.assert_allclose(var[:3], 0, atol=1e-20)
    assert not estimate_amplitude_variances(MeasurementBlock(np.zeros((5, 4)), B)).any()


def test_amplitude_variance_pure_noise(rng):
    T, sigma2 = 5, 0.5
    B = np.sqrt(2.0) * unitary(rng, 4)  # ||b||^2 = 2
    draws = {"snapshot": [], "coherent": []}
    for _ in range(1000):
        w = np.sqrt(sigma2 / 2) * (rng.standard_normal((T, 4)) + 1j * rng.standard_normal((T, 4)))
        block = MeasurementBlock(w, B)
        for mode in draws:
            draws[mode].append(estimate_amplitude_variances(block, mode))
    np.testing.assert_allclose(np.mean(draws["snapshot"], axis=0), sigma2 / 2, rtol=0.05)
    np.testing.assert_allclose(np.mean(draws["coherent"], axis=0), sigma2 / (2 * T), rtol=0.1)


def test_amplitude_variance_zero_column():
    B = np.eye(3)
    B[:, 1] = 0
    with pytest.raises(ValueError):
        estimate_amplitude_variances(MeasurementBlock(np.ones((2, 3)), B))


# -- full algorithm -----------------------------------------------------------


def test_config_validation():
    with pytest.raises(ValueError):
        SktsConfig(3, schedule=(2, 4, 3))
    with pytest.raises(ValueError):
        SktsConfig(3, schedule=(6, 4))
    assert SktsConfig(3).resolved_schedule(100) == [6, 3]
    assert SktsConfig(3).resolved_schedule(4) == [4, 3]
    assert SktsConfig(3, max_iterations=4).resolved_schedule(100) == [6, 3, 3, 3]
    with pytest.raises(ValueError):
        SktsConfig(3, schedule=(5, 3)).resolved_schedule(4)


def test_noiseless_chain_recovers_support(rng):
    M, T = 2, 4
    model = StateSpaceModel.diagonal([0.9, 0.9], [1.0, 1.0], 1e-6)
    h = np.zeros((T, M), complex)
    h[:, 0] = [1.0, 0.8, 1.1, 0.7]
    block = MeasurementBlock(h + 1e-3 * (rng.standard_normal((T, M))), np.eye(2))
    est = run_skts(model, block, SktsConfig(1))
    assert est.support.indices == (0,)
    ref = oracle_ks(model, block, SupportVector.from_indices([0], M))
    assert np.linalg.norm(est.h_hat - ref.h_hat) <= 1e-3 * np.linalg.norm(ref.h_hat)
    assert np.linalg.norm(est.h_hat - h) <= 1e-2 * np.linalg.norm(h)


def test_full_schedule_equals_conventional(rng):
    M, T = 5, 6
    model = StateSpaceModel.diagonal(np.full(M, 0.7), np.ones(M), 0.3)
    block = MeasurementBlock(rng.standard_normal((T, 3)) + 0j, rng.standard_normal((T, 3, M)))
    est = run_skts(model, block, SktsConfig(M, schedule=(M,)))
    ref = conventional_ks(model, block)
    np.testing.assert_allclose(est.h_hat, ref.h_hat, atol=1e-12)


def sparse_problem(rng, M, N, T, K, noise_var=0.05):
    model = StateSpaceModel.diagonal(np.full(M, 0.8), np.ones(M), noise_var)
    c = np.zeros(M, bool)
    c[rng.choice(M, K, replace=False)] = True
    s = np.sqrt(0.5) * (rng.standard_normal(M) + 1j * rng.standard_normal(M))
    h = []
    for _ in range(T):
        s = 0.8 * s + np.sqrt(0.36 / 2) * (rng.standard_normal(M) + 1j * rng.standard_normal(M))
        h.append(s * c)
    B = rng.standard_normal((T, N, M)) / np.sqrt(M) + 0j
    w = np.sqrt(noise_var / 2) * (rng.standard_normal((T, N)) + 1j * rng.standard_normal((T, N)))
    y = np.einsum("tnm,tm->tn", B, np.array(h)) + w
    return model, MeasurementBlock(y, B), SupportVector(c)


def test_schedule_cardinality_and_zero_off_support(rng):
    model, block, truth = sparse_problem(rng, 20, 8, 10, 3)
    est = run_skts(model, block, SktsConfig(3, schedule=(8, 5, 3), stop_on_convergence=False))
    diag = est.diagnostics["skts"]
    assert [r.sparsity for r in diag.iterations] == [8, 5, 3]
    assert all(len(r.support) == r.sparsity for r in diag.iterations)
    assert np.all(est.h_hat[:, ~est.support.bits] == 0)


def test_em_likelihood_nondecreasing(rng):
    for _ in range(10):
        model, block, truth = sparse_problem(rng, 8, 3, 6, 3, noise_var=0.2)
        init = SupportVector.from_indices(rng.choice(8, 3, replace=False), 8)
        est = run_skts(model, block, SktsConfig(3, schedule=(3,), max_iterations=6, m_step="exhaustive"),
                       initial_support=init)
        path = [init] + [SupportVector.from_indices(s, 8) for s in est.diagnostics["skts"].supports]
        ll = [log_likelihood(model, block, c) for c in path]
        assert all(b >= a - 1e-8 for a, b in zip(ll, ll[1:]))


def test_refine_variance_runs(rng):
    model, block, truth = sparse_problem(rng, 20, 8, 10, 3)
    est = run_skts(model, block, SktsConfig(3, refine_variance=True))
    assert est.support.sparsity == 3
