"""Real-time sKTS: a cascade of forward Kalman filters whose support comes
from exponentially forgotten score statistics.

Stage 1 always runs with every entry active. Stage ``k`` runs under the
support found from stage ``k-1``'s running statistics; the last stage
produces the output. Statistics are updated from the previous snapshot's
filtered estimates, so the support used at step ``n`` depends on data up to
``n-1`` only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .em import greedy_tree_search, snapshot_statistics
from .kalman import predict, update
from .model import EmStatistics, MeasurementBlock, SignalEstimate, StateSpaceModel, SupportVector


@dataclass(frozen=True)
class RtConfig:
    sparsity: int
    tree_width: int = 5
    forgetting_factor: float = 0.4
    num_stages: int = 2
    warmup_len: int = 10
    stride: int = 1

    def __post_init__(self):
        # 0 freezes the statistics; only useful for testing
        if not 0 <= self.forgetting_factor <= 1:
            raise ValueError("forgetting_factor must lie in [0, 1]")
        if self.num_stages < 2:
            raise ValueError("num_stages must be at least 2")
        if self.stride < 1:
            raise ValueError("stride must be positive")
        if self.warmup_len < 0 or self.sparsity < 0:
            raise ValueError("warmup_len and sparsity must be nonnegative")


@dataclass
class _Stage:
    mean: np.ndarray
    cov: np.ndarray
    support: SupportVector
    stats: EmStatistics
    # filtered stats of the previous snapshot, consumed at the next step
    pending: EmStatistics | None = None


class RtState:
    """Mutable state of one real-time stream (single owner)."""

    def __init__(self, model: StateSpaceModel, cfg: RtConfig):
        M = model.dim
        if cfg.sparsity > M:
            raise ValueError(f"sparsity {cfg.sparsity} exceeds dimension {M}")
        self.stages = [
            _Stage(model.prior_mean.copy(), model.prior_cov.copy(), SupportVector.full(M), EmStatistics.zeros(M))
            for _ in range(cfg.num_stages)
        ]
        self.step = 0

    @property
    def support(self) -> SupportVector:
        return self.stages[-1].support

    @property
    def running_stats(self) -> EmStatistics:
        """Running statistics feeding the second stage."""
        return self.stages[0].stats


def rt_step(state: RtState, y: np.ndarray, B: np.ndarray, model: StateSpaceModel, cfg: RtConfig):
    """Consume one snapshot ``(y_n, B_n)``; return ``(state, h_hat_n)``."""
    y = np.asarray(y, dtype=np.complex128).reshape(-1)
    B = np.asarray(B, dtype=np.complex128)
    if B.shape != (y.size, model.dim):
        raise ValueError(f"B has shape {B.shape}, expected ({y.size}, {model.dim})")
    t = state.step
    a = cfg.forgetting_factor
    search = t % cfg.stride == 0
    # fold in last step's snapshot statistics before anything else runs
    for stage in state.stages:
        if stage.pending is not None:
            stage.stats = EmStatistics(
                (1 - a) * stage.stats.d + a * stage.pending.d,
                (1 - a) * stage.stats.Phi + a * stage.pending.Phi,
            )
            stage.pending = None
    for k, stage in enumerate(state.stages):
        if k > 0:
            prev = state.stages[k - 1]
            if search or t == 0:
                stage.support = greedy_tree_search(prev.stats, cfg.sparsity, cfg.tree_width)
        mean, cov = predict(stage.mean, stage.cov, model.A(t), model.V(t))
        stage.mean, stage.cov, _ = update(mean, cov, y, B, stage.support.bits, model.noise_var)
        if k < len(state.stages) - 1:
            stage.pending = snapshot_statistics(y, B, stage.mean, stage.cov)
    state.step += 1
    last = state.stages[-1]
    return state, np.where(last.support.bits, last.mean, 0.0)


def run_rt_skts(model: StateSpaceModel, block: MeasurementBlock, cfg: RtConfig, state: RtState | None = None) -> SignalEstimate:
    """Stream every snapshot of ``block`` through :func:`rt_step`.

    The returned support is the one in force at the last step; per-step
    supports are kept in ``diagnostics["supports"]``.
    """
    if state is None:
        state = RtState(model, cfg)
    out = np.zeros((block.length, model.dim), dtype=np.complex128)
    supports = []
    for t in range(block.length):
        state, out[t] = rt_step(state, block.y[t], block.B[t], model, cfg)
        supports.append(state.support.indices)
    support = state.support
    # earlier steps may have used other supports
    union = SupportVector(np.any(np.abs(out) > 0, axis=0) | support.bits)
    return SignalEstimate(out, union, {"supports": supports, "final_support": support})
