"""Shared data types: state-space model, measurement blocks, supports and
posterior statistics.

All arrays are stored as complex128 (real scenarios carry zero imaginary
parts) except the support bits and the EM statistics, which are real.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

PSD_RTOL = 1e-9
HERMITIAN_ATOL = 1e-9


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def hermitianize(x: np.ndarray) -> np.ndarray:
    """Return (X + X^H) / 2 over the last two axes."""
    return 0.5 * (x + np.swapaxes(x, -1, -2).conj())


def is_hermitian(x: np.ndarray, atol: float = HERMITIAN_ATOL) -> bool:
    scale = max(1.0, float(np.max(np.abs(x))) if x.size else 1.0)
    return bool(np.allclose(x, np.swapaxes(x, -1, -2).conj(), rtol=0.0, atol=atol * scale))


def is_psd(x: np.ndarray, rtol: float = PSD_RTOL) -> bool:
    """Hermitian PSD check: eigenvalues >= -rtol * largest eigenvalue."""
    if not is_hermitian(x):
        return False
    w = np.linalg.eigvalsh(hermitianize(x))
    top = max(float(np.max(np.abs(w))), 0.0) if w.size else 0.0
    return bool(np.all(w >= -rtol * top)) if top > 0 else True


def _as_matrix_or_stack(x, name: str, dim: int | None = None) -> np.ndarray:
    arr = np.asarray(x, dtype=np.complex128)
    if arr.ndim not in (2, 3) or arr.shape[-1] != arr.shape[-2]:
        raise ValueError(f"{name} must be a square matrix or a stack of square matrices, got shape {arr.shape}")
    if dim is not None and arr.shape[-1] != dim:
        raise ValueError(f"{name} has dimension {arr.shape[-1]}, expected {dim}")
    return arr


@dataclass(frozen=True)
class StateSpaceModel:
    """Gauss-Markov amplitude dynamics ``s_{n+1} = A_n s_n + v_n``.

    ``transition`` and ``process_noise`` are either one ``(M, M)`` matrix used
    for every step or a ``(T, M, M)`` stack where entry ``t`` drives the
    transition *into* step ``t`` (entry 0 maps the prior state ``s_0`` to the
    first observed state). ``prior_mean``/``prior_cov`` describe ``s_0``.
    """

    transition: np.ndarray
    process_noise: np.ndarray
    noise_var: float
    prior_mean: np.ndarray
    prior_cov: np.ndarray

    def __post_init__(self):
        a = _as_matrix_or_stack(self.transition, "transition")
        m = a.shape[-1]
        v = _as_matrix_or_stack(self.process_noise, "process_noise", m)
        mu = np.asarray(self.prior_mean, dtype=np.complex128).reshape(-1)
        p0 = _as_matrix_or_stack(self.prior_cov, "prior_cov", m)
        if p0.ndim != 2:
            raise ValueError("prior_cov must be a single matrix")
        if mu.shape != (m,):
            raise ValueError(f"prior_mean has shape {mu.shape}, expected ({m},)")
        for name, arr in (("transition", a), ("process_noise", v), ("prior_mean", mu), ("prior_cov", p0)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
        object.__setattr__(self, "transition", _freeze(a))
        object.__setattr__(self, "process_noise", _freeze(v))
        object.__setattr__(self, "prior_mean", _freeze(mu))
        object.__setattr__(self, "prior_cov", _freeze(p0))
        object.__setattr__(self, "noise_var", float(self.noise_var))

    @classmethod
    def diagonal(cls, alpha, amplitude_var, noise_var: float) -> "StateSpaceModel":
        """Diagonal model with ``A = diag(alpha)``, ``V = diag((1-|alpha|^2) var)``.

        The prior is the stationary distribution: zero mean, covariance
        ``diag(amplitude_var)``.
        """
        var = np.asarray(amplitude_var, dtype=float).reshape(-1)
        a = np.broadcast_to(np.asarray(alpha, dtype=np.complex128), var.shape)
        if np.any(np.abs(a) > 1 + 1e-12):
            raise ValueError("|alpha| must not exceed 1")
        q = np.clip(1.0 - np.abs(a) ** 2, 0.0, None) * var
        return cls(
            transition=np.diag(a),
            process_noise=np.diag(q),
            noise_var=noise_var,
            prior_mean=np.zeros(var.size),
            prior_cov=np.diag(var),
        )

    @property
    def dim(self) -> int:
        return self.transition.shape[-1]

    @property
    def time_varying(self) -> bool:
        return self.transition.ndim == 3 or self.process_noise.ndim == 3

    def A(self, t: int) -> np.ndarray:
        """Transition into step ``t`` (0-based)."""
        return self.transition[t] if self.transition.ndim == 3 else self.transition

    def V(self, t: int) -> np.ndarray:
        return self.process_noise[t] if self.process_noise.ndim == 3 else self.process_noise

    @property
    def is_diagonal(self) -> bool:
        """True when A, V and the prior covariance are all diagonal."""
        def diag_only(x):
            return not np.any(x - np.einsum("...ii->...i", x)[..., None] * np.eye(x.shape[-1]))
        return diag_only(self.transition) and diag_only(self.process_noise) and diag_only(self.prior_cov)

    def with_noise_var(self, noise_var: float) -> "StateSpaceModel":
        return StateSpaceModel(self.transition, self.process_noise, noise_var, self.prior_mean, self.prior_cov)


def validate_model(model: StateSpaceModel) -> list[str]:
    """Return the list of violated model invariants (empty when valid)."""
    problems = []
    if not model.noise_var > 0:
        problems.append("meas_noise_var must be positive")
    v = model.process_noise if model.process_noise.ndim == 3 else model.process_noise[None]
    if not all(is_hermitian(x) for x in v):
        problems.append("process_noise_cov not Hermitian")
    elif not all(is_psd(x) for x in v):
        problems.append("process_noise_cov not PSD")
    if not is_hermitian(model.prior_cov):
        problems.append("prior_cov not Hermitian")
    elif not is_psd(model.prior_cov):
        problems.append("prior_cov not PSD")
    return problems


@dataclass(frozen=True)
class MeasurementBlock:
    """Observations ``y`` of shape ``(T, N)`` and system matrices ``(T, N, M)``.

    A single ``(N, M)`` matrix is accepted and shared across the block without
    copying.
    """

    y: np.ndarray
    B: np.ndarray
    index: int = 0

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.complex128)
        if y.ndim == 1:
            y = y[:, None]
        if y.ndim != 2 or y.shape[0] < 1 or y.shape[1] < 1:
            raise ValueError(f"y must have shape (T, N), got {y.shape}")
        b = np.asarray(self.B, dtype=np.complex128)
        t, n = y.shape
        if b.ndim == 2:
            b = np.broadcast_to(b, (t,) + b.shape)
        if b.ndim != 3 or b.shape[0] != t or b.shape[1] != n or b.shape[2] < 1:
            raise ValueError(f"B has shape {b.shape}, incompatible with y of shape {y.shape}")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(b))):
            raise ValueError("measurement block contains non-finite values")
        object.__setattr__(self, "y", _freeze(y))
        if b.flags.writeable:
            b = _freeze(b)
        object.__setattr__(self, "B", b)

    @property
    def length(self) -> int:
        return self.y.shape[0]

    @property
    def n_obs(self) -> int:
        return self.y.shape[1]

    @property
    def dim(self) -> int:
        return self.B.shape[2]

    def window(self, start: int, stop: int | None = None) -> "MeasurementBlock":
        return MeasurementBlock(self.y[start:stop], self.B[start:stop], self.index)


@dataclass(frozen=True)
class SupportVector:
    """Binary support indicator with an exact number of active entries."""

    bits: np.ndarray
    sparsity: int | None = None

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 1:
            raise ValueError("support bits must be a vector")
        if bits.dtype != bool:
            if not np.all((bits == 0) | (bits == 1)):
                raise ValueError("support bits must be 0/1")
            bits = bits.astype(bool)
        count = int(bits.sum())
        k = count if self.sparsity is None else int(self.sparsity)
        if count != k:
            raise ValueError(f"support has {count} active entries, expected K={k}")
        object.__setattr__(self, "bits", _freeze(bits.copy()))
        object.__setattr__(self, "sparsity", k)

    @classmethod
    def from_indices(cls, indices: Sequence[int], dim: int) -> "SupportVector":
        bits = np.zeros(dim, dtype=bool)
        idx = np.asarray(list(indices), dtype=int)
        if idx.size and (idx.min() < 0 or idx.max() >= dim):
            raise ValueError("support index out of range")
        bits[idx] = True
        if int(bits.sum()) != idx.size:
            raise ValueError("duplicate support indices")
        return cls(bits, idx.size)

    @classmethod
    def full(cls, dim: int) -> "SupportVector":
        return cls(np.ones(dim, dtype=bool), dim)

    @property
    def dim(self) -> int:
        return self.bits.size

    @property
    def indices(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.bits))

    def __eq__(self, other):
        if not isinstance(other, SupportVector):
            return NotImplemented
        return self.dim == other.dim and bool(np.array_equal(self.bits, other.bits))

    def __hash__(self):
        return hash((self.dim, self.indices))


@dataclass(frozen=True)
class PosteriorStats:
    """Per-step posterior means ``(T, M)`` and covariances ``(T, M, M)``."""

    means: np.ndarray
    covs: np.ndarray

    @property
    def length(self) -> int:
        return self.means.shape[0]


@dataclass(frozen=True)
class EmStatistics:
    """Linear (``d``) and quadratic (``Phi``) coefficients of the support score."""

    d: np.ndarray
    Phi: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.d, dtype=float).reshape(-1)
        phi = np.asarray(self.Phi, dtype=float)
        if phi.shape != (d.size, d.size):
            raise ValueError(f"Phi has shape {phi.shape}, expected {(d.size, d.size)}")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "Phi", phi)

    @property
    def dim(self) -> int:
        return self.d.size

    @classmethod
    def zeros(cls, dim: int) -> "EmStatistics":
        return cls(np.zeros(dim), np.zeros((dim, dim)))


@dataclass(frozen=True)
class SignalEstimate:
    """Recovered signals ``h_hat`` of shape ``(T, M)``, zero off the support."""

    h_hat: np.ndarray
    support: SupportVector
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        h = np.array(self.h_hat, dtype=np.complex128)
        if h.ndim == 1:
            h = h[None]
        h[:, ~self.support.bits] = 0.0
        object.__setattr__(self, "h_hat", _freeze(h))
