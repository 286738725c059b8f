"""Block sKTS: EM over the binary support with a greedy tree-search M-step."""

from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass, field
from math import comb
from typing import Sequence

import numpy as np

from .kalman import kalman_smoother
from .model import (
    EmStatistics,
    MeasurementBlock,
    PosteriorStats,
    SignalEstimate,
    StateSpaceModel,
    SupportVector,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SktsConfig:
    """Iteration control for :func:`run_skts`.

    ``schedule`` lists the sparsity used by each M-step and must be
    nonincreasing; it defaults to ``[2K, K]`` (clipped to M). When
    ``max_iterations`` exceeds the schedule length the last entry is reused.
    ``m_step`` is ``"greedy"`` (tree search) or ``"exhaustive"`` (exact, small
    M only).
    """

    sparsity: int
    tree_width: int = 5
    schedule: tuple[int, ...] | None = None
    max_iterations: int | None = None
    m_step: str = "greedy"
    stop_on_convergence: bool = True
    refine_variance: bool = False
    drop_fraction: float | None = None

    def __post_init__(self):
        if self.sparsity < 0:
            raise ValueError("sparsity must be nonnegative")
        if self.tree_width < 1:
            raise ValueError("tree_width must be positive")
        if self.schedule is not None:
            sched = tuple(int(k) for k in self.schedule)
            if not sched:
                raise ValueError("schedule must not be empty")
            if any(a < b for a, b in zip(sched, sched[1:])):
                raise ValueError(f"schedule must be nonincreasing, got {sched}")
            if sched[-1] != self.sparsity:
                raise ValueError("schedule must end at the target sparsity")
            object.__setattr__(self, "schedule", sched)
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if self.m_step not in ("greedy", "exhaustive"):
            raise ValueError(f"unknown m_step {self.m_step!r}")

    def resolved_schedule(self, dim: int) -> list[int]:
        if self.schedule is None:
            sched = [min(2 * self.sparsity, dim), self.sparsity]
        else:
            sched = list(self.schedule)
        if max(sched) > dim:
            raise ValueError(f"schedule entry {max(sched)} exceeds dimension {dim}")
        n = self.max_iterations or len(sched)
        sched = sched[:n] + [sched[-1]] * (n - len(sched))
        if sched[-1] != self.sparsity:
            raise ValueError("max_iterations truncates the schedule before the target sparsity")
        return sched


def accumulate_statistics(block: MeasurementBlock, post: PosteriorStats) -> EmStatistics:
    """Sum the per-snapshot score coefficients over the block.

    ``d_j = sum_n 2 Re((y_n^H B_n)_j s_hat_{n,j})`` and
    ``Phi = sum_n Re(conj(B_n^H B_n) * (Sigma_n + s_hat_n s_hat_n^H))``.
    """
    if post.means.shape != (block.length, block.dim):
        raise ValueError(f"posterior shape {post.means.shape} does not match block ({block.length}, {block.dim})")
    corr = np.einsum("tn,tnm->tm", block.y.conj(), block.B)
    d = 2.0 * np.real(corr * post.means).sum(axis=0)
    second = post.covs + post.means[:, :, None] * post.means[:, None, :].conj()
    if block.B.strides[0] == 0:
        gram = block.B[0].conj().T @ block.B[0]
        phi = np.real(gram.conj() * second.sum(axis=0))
    else:
        phi = np.zeros((block.dim, block.dim))
        for t in range(block.length):
            gram = block.B[t].conj().T @ block.B[t]
            phi += np.real(gram.conj() * second[t])
    return EmStatistics(d, 0.5 * (phi + phi.T))


def snapshot_statistics(y: np.ndarray, B: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> EmStatistics:
    """Score coefficients contributed by a single snapshot."""
    d = 2.0 * np.real((y.conj() @ B) * mean)
    gram = B.conj().T @ B
    phi = np.real(gram.conj() * (cov + np.outer(mean, mean.conj())))
    return EmStatistics(d, 0.5 * (phi + phi.T))


def q_score(stats: EmStatistics, c) -> float:
    """``d^T c - c^T Phi c`` (the scale 1/sigma_w^2 and constants dropped)."""
    c = np.asarray(c.bits if isinstance(c, SupportVector) else c, dtype=float)
    if c.shape != stats.d.shape:
        raise ValueError(f"support length {c.size} does not match statistics dimension {stats.dim}")
    return float(stats.d @ c - c @ stats.Phi @ c)


def _rank(scored: dict[tuple[int, ...], float], width: int) -> list[tuple[tuple[int, ...], float]]:
    # score descending, then lexicographic support
    return sorted(scored.items(), key=lambda kv: (-kv[1], kv[0]))[:width]


def greedy_tree_search(stats: EmStatistics, K: int, R: int, drop_fraction: float | None = None) -> SupportVector:
    """Layered beam search over supports, asserting one bit per layer.

    Starting from the empty support, every survivor spawns one child per
    inactive entry; children that coincide as sets are merged and the ``R``
    best (ties broken by the lexicographically smallest index tuple) survive.
    After layer ``K`` the best survivor is returned.

    With ``drop_fraction`` set, the descent stops early once the best score
    gain of a layer falls below that fraction of the mean gain of the earlier
    layers (sparsity order unknown; ``K`` is then an upper bound).
    """
    M = stats.dim
    if K > M:
        raise ValueError(f"K={K} exceeds dimension M={M}")
    if R < 1:
        raise ValueError("R must be positive")
    if K <= 0:
        return SupportVector(np.zeros(M, dtype=bool), 0)
    d, phi = stats.d, stats.Phi
    base = d - np.diag(phi)
    survivors: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
    gains: list[float] = []
    for layer in range(K):
        children: dict[tuple[int, ...], float] = {}
        for support, score in survivors:
            idx = list(support)
            # score(S + m) = score(S) + d_m - Phi_mm - 2 sum_{j in S} Phi_jm
            inc = base - 2.0 * phi[idx].sum(axis=0) if idx else base.copy()
            inc[idx] = -np.inf
            # children of one parent are distinct sets, so only its R best
            # (plus ties) can reach the global top R
            free = M - len(idx)
            cut = -np.partition(-inc, min(R, free) - 1)[min(R, free) - 1]
            for m in np.flatnonzero(inc >= cut):
                m = int(m)
                key = tuple(sorted(support + (m,)))
                if key not in children:
                    children[key] = score + float(inc[m])
        ranked = _rank(children, R)
        best_gain = ranked[0][1] - survivors[0][1]
        if drop_fraction is not None and gains and best_gain < drop_fraction * float(np.mean(gains)):
            break
        gains.append(best_gain)
        survivors = ranked
    # final choice re-scored exactly
    exact = {s: q_score(stats, _bits(s, M)) for s, _ in survivors}
    best = _rank(exact, 1)[0][0]
    return SupportVector.from_indices(best, M)


def _bits(indices: Sequence[int], M: int) -> np.ndarray:
    b = np.zeros(M)
    b[list(indices)] = 1.0
    return b


def exhaustive_support_search(stats: EmStatistics, K: int, limit: int = 2_000_000) -> SupportVector:
    """Exact maximizer of the score over all size-``K`` supports."""
    M = stats.dim
    if K > M:
        raise ValueError(f"K={K} exceeds dimension M={M}")
    if comb(M, K) > limit:
        raise ValueError(f"C({M},{K}) supports exceed the exhaustive-search limit")
    best_key, best_score = None, -np.inf
    for key in itertools.combinations(range(M), K):
        s = q_score(stats, _bits(key, M))
        if s > best_score:  # combinations are lexicographic, keep the first maximum
            best_key, best_score = key, s
    return SupportVector.from_indices(best_key, M)


def estimate_sparsity_order(block: MeasurementBlock, threshold: float) -> int:
    """Count columns whose block-averaged normalized correlation
    ``(1/T) sum_n |b_{n,j}^H y_n| / ||b_{n,j}||^2`` exceeds ``threshold``."""
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    stat = _normalized_correlation(block)
    return int(np.count_nonzero(stat > threshold))


def _normalized_correlation(block: MeasurementBlock) -> np.ndarray:
    corr = np.einsum("tnm,tn->tm", block.B.conj(), block.y)
    norms = np.einsum("tnm,tnm->tm", block.B.conj(), block.B).real
    dead = norms <= 0
    if dead.any():
        cols = sorted(set(np.flatnonzero(dead.any(axis=0)).tolist()))
        warnings.warn(f"zero-norm columns skipped: {cols}", RuntimeWarning, stacklevel=3)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(dead, 0.0, np.abs(corr) / np.where(dead, 1.0, norms))
    return ratio.mean(axis=0)


def estimate_amplitude_variances(block: MeasurementBlock, mode: str = "snapshot") -> np.ndarray:
    """Rough per-entry amplitude variance from matched-filter outputs.

    ``mode="snapshot"`` averages ``|b_{n,j}^H y_n / ||b_{n,j}||^2|^2`` over the
    block; ``mode="coherent"`` takes ``|(1/T) sum_n b_{n,j}^H y_n / ||b_{n,j}||^2|^2``.
    """
    corr = np.einsum("tnm,tn->tm", block.B.conj(), block.y)
    norms = np.einsum("tnm,tnm->tm", block.B.conj(), block.B).real
    if np.any(norms <= 0):
        raise ValueError("zero-norm column in system matrix")
    ratio = corr / norms
    if mode == "snapshot":
        return np.mean(np.abs(ratio) ** 2, axis=0)
    if mode == "coherent":
        return np.abs(ratio.mean(axis=0)) ** 2
    raise ValueError(f"unknown mode {mode!r}")


def _refined_model(model: StateSpaceModel, post: PosteriorStats, bits: np.ndarray) -> StateSpaceModel:
    """Diagonal model whose variances come from the smoothed estimates."""
    if model.time_varying or not model.is_diagonal:
        log.warning("variance refinement needs a constant diagonal model; skipped")
        return model
    alpha = np.diag(model.transition)
    var = np.mean(np.abs(post.means) ** 2, axis=0)
    var = np.where(bits, var, np.real(np.diag(model.prior_cov)))
    return StateSpaceModel.diagonal(alpha, var, model.noise_var)


@dataclass
class IterationRecord:
    iteration: int
    sparsity: int
    support: tuple[int, ...]
    score: float


@dataclass
class SktsDiagnostics:
    iterations: list[IterationRecord] = field(default_factory=list)
    converged: bool = False

    @property
    def supports(self) -> list[tuple[int, ...]]:
        return [r.support for r in self.iterations]


def run_skts(model: StateSpaceModel, block: MeasurementBlock, cfg: SktsConfig, initial_support: SupportVector | None = None) -> SignalEstimate:
    """Recover the block's signals: alternate Kalman smoothing and support
    search until the support stops changing or the schedule runs out, then
    smooth once more on the final support.

    The returned estimate carries an :class:`SktsDiagnostics` record under
    ``diagnostics["skts"]``.
    """
    M = model.dim
    schedule = cfg.resolved_schedule(M)
    support = initial_support if initial_support is not None else SupportVector.full(M)
    diag = SktsDiagnostics()
    for it, k in enumerate(schedule, start=1):
        post = kalman_smoother(model, block, support)
        stats = accumulate_statistics(block, post)
        if cfg.m_step == "exhaustive":
            new = exhaustive_support_search(stats, k)
        else:
            new = greedy_tree_search(stats, k, cfg.tree_width, cfg.drop_fraction)
        diag.iterations.append(IterationRecord(it, new.sparsity, new.indices, q_score(stats, new)))
        # only stop once the schedule has reached the target order
        done = cfg.stop_on_convergence and k == schedule[-1] and new == support
        support = new
        if done:
            diag.converged = True
            break
    final_model = model
    if cfg.refine_variance:
        final_model = _refined_model(model, kalman_smoother(model, block, support), support.bits)
    post = kalman_smoother(final_model, block, support)
    return SignalEstimate(post.means * support.bits[None, :], support, {"skts": diag})
