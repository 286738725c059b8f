"""Reference estimators: full-support and true-support Kalman smoothers and
per-snapshot orthogonal matching pursuit."""

from __future__ import annotations

import warnings

import numpy as np

from .kalman import kalman_smoother
from .model import MeasurementBlock, SignalEstimate, StateSpaceModel, SupportVector

OMP_RIDGE = 1e-12


def conventional_ks(model: StateSpaceModel, block: MeasurementBlock) -> SignalEstimate:
    """Kalman smoother with every entry assumed active."""
    support = SupportVector.full(model.dim)
    post = kalman_smoother(model, block, support)
    return SignalEstimate(post.means, support)


def oracle_ks(model: StateSpaceModel, block: MeasurementBlock, true_support: SupportVector) -> SignalEstimate:
    """Kalman smoother given the true support."""
    post = kalman_smoother(model, block, true_support)
    return SignalEstimate(post.means * true_support.bits[None, :], true_support)


def omp_per_snapshot(y: np.ndarray, B: np.ndarray, K: int):
    """Orthogonal matching pursuit on one snapshot.

    Selects the column with the largest normalized correlation with the
    residual, refits all selected amplitudes by (ridge) least squares and
    repeats ``K`` times. Returns ``(support, x_hat, residual_norms)``.
    """
    y = np.asarray(y, dtype=np.complex128).reshape(-1)
    B = np.asarray(B, dtype=np.complex128)
    N, M = B.shape
    if y.size != N:
        raise ValueError(f"y has length {y.size}, B has {N} rows")
    if K > min(N, M):
        raise ValueError(f"K={K} exceeds min(N, M)={min(N, M)}")
    norms = np.linalg.norm(B, axis=0)
    safe = np.where(norms > 0, norms, np.inf)
    selected: list[int] = []
    x = np.zeros(M, dtype=np.complex128)
    residual = y.copy()
    history = [float(np.linalg.norm(residual))]
    coef = np.zeros(0, dtype=np.complex128)
    for _ in range(K):
        score = np.abs(B.conj().T @ residual) / safe
        score[selected] = -1.0
        selected.append(int(np.argmax(score)))
        sub = B[:, selected]
        gram = sub.conj().T @ sub
        if np.linalg.matrix_rank(gram) < len(selected):
            warnings.warn(f"selected columns {selected} are rank deficient", RuntimeWarning, stacklevel=2)
        coef = np.linalg.solve(gram + OMP_RIDGE * np.eye(len(selected)), sub.conj().T @ y)
        residual = y - sub @ coef
        history.append(float(np.linalg.norm(residual)))
    x[selected] = coef
    return SupportVector.from_indices(sorted(selected), M), x, history


def omp_block(block: MeasurementBlock, K: int) -> SignalEstimate:
    """Run :func:`omp_per_snapshot` independently on every snapshot."""
    out = np.zeros((block.length, block.dim), dtype=np.complex128)
    supports = []
    for t in range(block.length):
        s, out[t], _ = omp_per_snapshot(block.y[t], block.B[t], K)
        supports.append(s)
    union = np.zeros(block.dim, dtype=bool)
    for s in supports:
        union |= s.bits
    return SignalEstimate(out, SupportVector(union), {"supports": supports})
