"""Fixed-interval Kalman smoothing under a masked system matrix ``B_n diag(c)``.

The forward pass and the backward (RTS) pass are exposed separately so the
real-time estimator can reuse the single-step update. ``batch_lmmse_oracle``
conditions the stacked joint Gaussian directly and is only meant for
checking the recursions on small problems.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .model import (
    MeasurementBlock,
    PosteriorStats,
    StateSpaceModel,
    SupportVector,
    hermitianize,
)

log = logging.getLogger(__name__)

REG_TRIGGER = 1e-12
REG_EPS = 1e-10


@dataclass(frozen=True)
class FilterState:
    filtered_means: np.ndarray
    filtered_covs: np.ndarray
    predicted_means: np.ndarray
    predicted_covs: np.ndarray
    gains: np.ndarray

    @property
    def length(self) -> int:
        return self.filtered_means.shape[0]


def _support_bits(support, dim: int) -> np.ndarray:
    if support is None:
        return np.ones(dim, dtype=bool)
    bits = support.bits if isinstance(support, SupportVector) else np.asarray(support, dtype=bool)
    if bits.shape != (dim,):
        raise ValueError(f"support has length {bits.size}, expected {dim}")
    return bits


def _check_dims(model: StateSpaceModel, block: MeasurementBlock):
    if block.dim != model.dim:
        raise ValueError(f"block has M={block.dim} columns but model dimension is {model.dim}")
    for name, arr in (("transition", model.transition), ("process_noise", model.process_noise)):
        if arr.ndim == 3 and arr.shape[0] < block.length:
            raise ValueError(f"time-varying {name} covers {arr.shape[0]} steps, block has {block.length}")


def predict(mean: np.ndarray, cov: np.ndarray, A: np.ndarray, V: np.ndarray):
    """One-step prediction ``(A m, A P A^H + V)``."""
    a = np.diagonal(A)
    if np.count_nonzero(A) == np.count_nonzero(a):
        # diagonal transition: elementwise scaling instead of two products
        return a * mean, hermitianize(a[:, None] * cov * a.conj()[None, :] + V)
    return A @ mean, hermitianize(A @ cov @ A.conj().T + V)


def update(mean: np.ndarray, cov: np.ndarray, y: np.ndarray, B: np.ndarray, bits: np.ndarray, noise_var: float):
    """Measurement update with the masked matrix ``B diag(bits)``.

    Returns ``(filtered_mean, filtered_cov, gain)``. The gain is obtained by
    solving the innovation system instead of inverting it.
    """
    Bm = B * bits[None, :]
    BP = Bm @ cov  # = (P Bm^H)^H since P is Hermitian
    S = hermitianize(BP @ Bm.conj().T) + noise_var * np.eye(B.shape[0])
    gain = scipy.linalg.solve(S, BP, assume_a="her").conj().T
    new_mean = mean + gain @ (y - Bm @ mean)
    new_cov = hermitianize(cov - gain @ BP)
    return new_mean, new_cov, gain


def forward_filter(model: StateSpaceModel, block: MeasurementBlock, support=None) -> FilterState:
    """Forward Kalman recursion over one block, starting from the model prior."""
    _check_dims(model, block)
    bits = _support_bits(support, model.dim)
    T, N, M = block.length, block.n_obs, model.dim
    fm = np.empty((T, M), dtype=np.complex128)
    fP = np.empty((T, M, M), dtype=np.complex128)
    pm = np.empty_like(fm)
    pP = np.empty_like(fP)
    gains = np.empty((T, M, N), dtype=np.complex128)
    mean, cov = model.prior_mean, model.prior_cov
    for t in range(T):
        mean, cov = predict(mean, cov, model.A(t), model.V(t))
        pm[t], pP[t] = mean, cov
        mean, cov, gains[t] = update(mean, cov, block.y[t], block.B[t], bits, model.noise_var)
        fm[t], fP[t] = mean, cov
    return FilterState(fm, fP, pm, pP, gains)


def _factor_predicted(P: np.ndarray):
    """Cholesky factor of a predicted covariance, Tikhonov-regularized when
    it is (near) singular."""
    m = P.shape[0]
    scale = max(float(np.real(np.trace(P))) / m, np.finfo(float).tiny)
    try:
        c = scipy.linalg.cho_factor(P, lower=True, check_finite=False)
        pivots = np.abs(np.diag(c[0])) ** 2
        if pivots.min() >= REG_TRIGGER * scale:
            return c
    except np.linalg.LinAlgError:
        pass
    log.debug("regularizing singular predicted covariance (eps=%g)", REG_EPS * scale)
    return scipy.linalg.cho_factor(P + REG_EPS * scale * np.eye(m), lower=True, check_finite=False)


def backward_smooth(model: StateSpaceModel, fwd: FilterState) -> PosteriorStats:
    """Rauch-Tung-Striebel backward pass over a completed forward pass."""
    T = fwd.length
    means = fwd.filtered_means.copy()
    covs = fwd.filtered_covs.copy()
    for t in range(T - 2, -1, -1):
        A = model.A(t + 1)
        fac = _factor_predicted(fwd.predicted_covs[t + 1])
        # gain = P_f A^H P_pred^{-1}, computed as (P_pred^{-1} A P_f)^H
        gain = scipy.linalg.cho_solve(fac, A @ fwd.filtered_covs[t], check_finite=False).conj().T
        means[t] = fwd.filtered_means[t] + gain @ (means[t + 1] - fwd.predicted_means[t + 1])
        covs[t] = hermitianize(
            fwd.filtered_covs[t] + gain @ (covs[t + 1] - fwd.predicted_covs[t + 1]) @ gain.conj().T
        )
    return PosteriorStats(means, covs)


def _prior_marginals(model: StateSpaceModel, T: int):
    """Prior means and covariances of s_1..s_T (no observations)."""
    M = model.dim
    means = np.empty((T, M), dtype=np.complex128)
    covs = np.empty((T, M, M), dtype=np.complex128)
    mean, cov = model.prior_mean, model.prior_cov
    for t in range(T):
        mean, cov = predict(mean, cov, model.A(t), model.V(t))
        means[t], covs[t] = mean, cov
    return means, covs


def _restrict(model: StateSpaceModel, idx: np.ndarray) -> StateSpaceModel:
    sub = np.ix_(idx, idx)
    a = model.transition[(...,) + sub]
    v = model.process_noise[(...,) + sub]
    return StateSpaceModel(a, v, model.noise_var, model.prior_mean[idx], model.prior_cov[sub])


def kalman_smoother(model: StateSpaceModel, block: MeasurementBlock, support=None, *, exploit_structure=True) -> PosteriorStats:
    """Smoothed means/covariances of every state in the block.

    With a diagonal model, inactive entries never interact with the
    observations or the active ones, so the recursion runs on the active
    entries only and the rest keep their prior marginals. The result is the
    same as the full recursion.
    """
    _check_dims(model, block)
    bits = _support_bits(support, model.dim)
    if not exploit_structure or bits.all() or not model.is_diagonal:
        return backward_smooth(model, forward_filter(model, block, bits))
    T, M = block.length, model.dim
    diag = np.einsum("...ii->...i", np.stack([model.A(t) for t in range(T)]))
    qdiag = np.einsum("...ii->...i", np.stack([model.V(t) for t in range(T)]))
    mean = model.prior_mean.copy()
    var = np.real(np.diag(model.prior_cov)).copy()
    means = np.empty((T, M), dtype=np.complex128)
    covs = np.zeros((T, M, M), dtype=np.complex128)
    for t in range(T):
        mean = diag[t] * mean
        var = np.abs(diag[t]) ** 2 * var + np.real(qdiag[t])
        means[t] = mean
        covs[t][np.diag_indices(M)] = var
    idx = np.flatnonzero(bits)
    if idx.size:
        sub_block = MeasurementBlock(block.y, block.B[:, :, idx], block.index)
        post = backward_smooth(_restrict(model, idx), forward_filter(_restrict(model, idx), sub_block))
        means[:, idx] = post.means
        covs[(slice(None),) + np.ix_(idx, idx)] = post.covs
    return PosteriorStats(means, covs)


def _stacked_prior(model: StateSpaceModel, T: int):
    """Mean and full covariance of the stacked vector (s_1, ..., s_T)."""
    M = model.dim
    means, covs = _prior_marginals(model, T)
    P = np.zeros((T * M, T * M), dtype=np.complex128)
    for t in range(T):
        P[t * M:(t + 1) * M, t * M:(t + 1) * M] = covs[t]
        cross = covs[t]
        for u in range(t + 1, T):
            cross = model.A(u) @ cross  # Cov(s_u, s_t)
            P[u * M:(u + 1) * M, t * M:(t + 1) * M] = cross
            P[t * M:(t + 1) * M, u * M:(u + 1) * M] = cross.conj().T
    return means.reshape(-1), P


def _stacked_observation(block: MeasurementBlock, bits: np.ndarray):
    T, N, M = block.length, block.n_obs, block.dim
    H = np.zeros((T * N, T * M), dtype=np.complex128)
    for t in range(T):
        H[t * N:(t + 1) * N, t * M:(t + 1) * M] = block.B[t] * bits[None, :]
    return H


def batch_lmmse_oracle(model: StateSpaceModel, block: MeasurementBlock, support=None, max_dim: int = 600) -> PosteriorStats:
    """Posterior marginals from direct conditioning of the joint Gaussian.

    Dense in the stacked dimension ``T*M``; refuses problems larger than
    ``max_dim``.
    """
    _check_dims(model, block)
    bits = _support_bits(support, model.dim)
    T, N, M = block.length, block.n_obs, model.dim
    if T * max(M, N) > max_dim:
        raise MemoryError(f"stacked dimension {T * max(M, N)} exceeds oracle limit {max_dim}")
    mu, P = _stacked_prior(model, T)
    H = _stacked_observation(block, bits)
    S = H @ P @ H.conj().T + model.noise_var * np.eye(T * N)
    G = np.linalg.solve(S, H @ P).conj().T
    post_mean = mu + G @ (block.y.reshape(-1) - H @ mu)
    post_cov = hermitianize(P - G @ H @ P)
    means = post_mean.reshape(T, M)
    covs = np.stack([post_cov[t * M:(t + 1) * M, t * M:(t + 1) * M] for t in range(T)])
    return PosteriorStats(means, covs)


def log_likelihood(model: StateSpaceModel, block: MeasurementBlock, support=None) -> float:
    """Observed-data log-likelihood ``ln Pr(y_1..y_T; c)`` (circular complex
    Gaussian), by the prediction-error decomposition."""
    _check_dims(model, block)
    bits = _support_bits(support, model.dim)
    N = block.n_obs
    mean, cov = model.prior_mean, model.prior_cov
    total = 0.0
    for t in range(block.length):
        mean, cov = predict(mean, cov, model.A(t), model.V(t))
        Bm = block.B[t] * bits[None, :]
        S = hermitianize(Bm @ cov @ Bm.conj().T) + model.noise_var * np.eye(N)
        e = block.y[t] - Bm @ mean
        fac = scipy.linalg.cho_factor(S, lower=True)
        logdet = 2.0 * np.sum(np.log(np.abs(np.diag(fac[0]))))
        total -= N * np.log(np.pi) + logdet + float(np.real(e.conj() @ scipy.linalg.cho_solve(fac, e)))
        mean, cov, _ = update(mean, cov, block.y[t], block.B[t], bits, model.noise_var)
    return total


def dense_log_likelihood(model: StateSpaceModel, block: MeasurementBlock, support=None) -> float:
    """Same quantity as :func:`log_likelihood`, from the stacked covariance."""
    bits = _support_bits(support, model.dim)
    mu, P = _stacked_prior(model, block.length)
    H = _stacked_observation(block, bits)
    S = H @ P @ H.conj().T + model.noise_var * np.eye(H.shape[0])
    r = block.y.reshape(-1) - H @ mu
    _, logdet = np.linalg.slogdet(S)
    return float(-H.shape[0] * np.log(np.pi) - logdet - np.real(r.conj() @ np.linalg.solve(S, r)))
