import numpy as np
import pytest

from skts.em import snapshot_statistics
from skts.kalman import forward_filter
from skts.model import MeasurementBlock, StateSpaceModel, SupportVector
from skts.realtime import RtConfig, RtState, rt_step, run_rt_skts


def stream(rng, M=12, N=5, T=20, K=3, noise_var=0.05):
    model = StateSpaceModel.diagonal(np.full(M, 0.9), np.ones(M), noise_var)
    c = np.zeros(M, bool)
    c[[2, 5, 9][:K]] = True
    s = np.sqrt(0.5) * (rng.standard_normal(M) + 1j * rng.standard_normal(M))
    h = []
    for _ in range(T):
        s = 0.9 * s + np.sqrt(0.19 / 2) * (rng.standard_normal(M) + 1j * rng.standard_normal(M))
        h.append(s * c)
    B = (rng.standard_normal((T, N, M)) + 1j * rng.standard_normal((T, N, M))) / np.sqrt(2 * N)
    y = np.einsum("tnm,tm->tn", B, np.array(h))
    y += np.sqrt(noise_var / 2) * (rng.standard_normal((T, N)) + 1j * rng.standard_normal((T, N)))
    return model, MeasurementBlock(y, B), np.array(h), SupportVector(c)


def test_config_validation():
    for bad in (dict(forgetting_factor=1.5), dict(num_stages=1), dict(stride=0), dict(warmup_len=-1)):
        with pytest.raises(ValueError):
            RtConfig(2, **bad)


def test_first_step_uses_tie_break_support(rng):
    model, block, _, _ = stream(rng)
    cfg = RtConfig(3)
    state = RtState(model, cfg)
    state, h0 = rt_step(state, block.y[0], block.B[0], model, cfg)
    assert state.support.indices == (0, 1, 2)
    # the output stage is a plain filter under that support
    ref = forward_filter(model, block.window(0, 1), state.support)
    np.testing.assert_allclose(h0[:3], ref.filtered_means[0, :3], atol=1e-12)
    assert not h0[3:].any()


def test_memoryless_statistics(rng):
    model, block, _, _ = stream(rng)
    cfg = RtConfig(3, forgetting_factor=1.0)
    state = RtState(model, cfg)
    for t in range(5):
        state, _ = rt_step(state, block.y[t], block.B[t], model, cfg)
    # stage 1 is the full-support filter; its statistics come from step 3 only
    full = forward_filter(model, block.window(0, 5))
    expect = snapshot_statistics(block.y[3], block.B[3], full.filtered_means[3], full.filtered_covs[3])
    np.testing.assert_allclose(state.running_stats.d, expect.d, atol=1e-10)
    np.testing.assert_allclose(state.running_stats.Phi, expect.Phi, atol=1e-10)


def test_zero_forgetting_freezes_statistics(rng):
    model, block, _, _ = stream(rng)
    cfg = RtConfig(3, forgetting_factor=0.0)
    state = RtState(model, cfg)
    for t in range(6):
        state, _ = rt_step(state, block.y[t], block.B[t], model, cfg)
        assert not state.running_stats.d.any()
        assert state.support.indices == (0, 1, 2)


def test_support_cardinality_and_symmetry(rng):
    model, block, _, _ = stream(rng)
    cfg = RtConfig(3, num_stages=3)
    state = RtState(model, cfg)
    for t in range(block.length):
        state, h = rt_step(state, block.y[t], block.B[t], model, cfg)
        assert state.support.sparsity == 3
        assert np.count_nonzero(h) <= 3
        for st in state.stages:
            np.testing.assert_allclose(st.stats.Phi, st.stats.Phi.T, atol=1e-12)


def test_stride_holds_support(rng):
    model, block, _, _ = stream(rng)
    est = run_rt_skts(model, block, RtConfig(3, stride=4))
    sup = est.diagnostics["supports"]
    for t in range(block.length):
        if t % 4:
            assert sup[t] == sup[t - 1]


def test_resumed_stream_matches_single_pass(rng):
    model, block, _, _ = stream(rng)
    cfg = RtConfig(3)
    whole = run_rt_skts(model, block, cfg)
    state = RtState(model, cfg)
    first = run_rt_skts(model, block.window(0, 8), cfg, state)
    second = run_rt_skts(model, block.window(8, block.length), cfg, state)
    np.testing.assert_array_equal(np.vstack([first.h_hat, second.h_hat]), whole.h_hat)


def test_tracks_easy_stream(rng):
    model, block, h, truth = stream(rng, N=8, T=40, noise_var=1e-3)
    est = run_rt_skts(model, block, RtConfig(3))
    assert est.diagnostics["final_support"] == truth
    err = np.sum(np.abs(est.h_hat[10:] - h[10:]) ** 2) / np.sum(np.abs(h[10:]) ** 2)
    assert err < 0.1
