"""Data generators for the synthetic, OFDM and single-carrier experiments.

Every generator returns a list of :class:`ScenarioBlock` items carrying the
measurement block, the true signals and the model handed to the estimators.
SNR is defined at the observation, ``E||B_n h_n||^2 / E||w_n||^2``.
All randomness comes from the ``numpy.random.Generator`` passed in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.special

from .model import MeasurementBlock, StateSpaceModel, SupportVector

SUBCARRIER_SPACING = 15e3
PILOT_SPACING = 0.25e-3


@dataclass(frozen=True)
class TapProfile:
    name: str
    delays: tuple[float, ...]
    powers_db: tuple[float, ...]

    def __post_init__(self):
        if len(self.delays) != len(self.powers_db):
            raise ValueError("delays and powers_db must have equal length")
        if any(b < a for a, b in zip(self.delays, self.delays[1:])):
            raise ValueError("delays must be nondecreasing")


EPA = TapProfile("EPA", tuple(d * 1e-9 for d in (0, 30, 70, 90, 110, 190, 410)),
                 (0.0, -1.0, -2.0, -3.0, -8.0, -17.2, -20.8))
EVA = TapProfile("EVA", tuple(d * 1e-9 for d in (0, 30, 150, 310, 370, 710, 1090, 1730, 2510)),
                 (0.0, -1.5, -1.4, -3.6, -0.6, -9.1, -7.0, -12.0, -16.9))
ETU = TapProfile("ETU", tuple(d * 1e-9 for d in (0, 50, 120, 200, 230, 500, 1600, 2300, 5000)),
                 (-1.0, -1.0, -1.0, 0.0, 0.0, 0.0, -3.0, -5.0, -7.0))
PROFILES = {p.name: p for p in (EPA, EVA, ETU)}


@dataclass
class ScenarioBlock:
    block: MeasurementBlock
    h: np.ndarray
    model: StateSpaceModel
    true_support: SupportVector | None
    extras: dict = field(default_factory=dict)


def noise_var_for_snr(signal_power: float, snr_db: float) -> float:
    """Per-entry noise variance giving ``snr_db`` for a per-entry signal power."""
    return signal_power / 10.0 ** (snr_db / 10.0)


def complex_normal(rng: np.random.Generator, shape, var: float = 1.0) -> np.ndarray:
    return np.sqrt(var / 2.0) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def qpsk(rng: np.random.Generator, shape) -> np.ndarray:
    return np.exp(1j * (np.pi / 4 + np.pi / 2 * rng.integers(0, 4, size=shape)))


def bessel_j0(x, terms: int | None = None):
    """Zeroth-order Bessel function of the first kind from its power series.

    ``terms=None`` sums until the terms vanish; the series loses accuracy to
    cancellation for large arguments, so ``|x| > 20`` is delegated to
    ``scipy.special.j0``.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    flat, res = x.reshape(-1), out.reshape(-1)
    for i, v in enumerate(flat):
        if terms is None and abs(v) > 20.0:
            res[i] = scipy.special.j0(v)
            continue
        q = (v / 2.0) ** 2
        term, acc, m = 1.0, [1.0], 0
        while True:
            m += 1
            if terms is not None and m >= terms:
                break
            term *= -q / (m * m)
            acc.append(term)
            if terms is None and abs(term) < 1e-18 * max(1.0, abs(acc[0])) and m > q:
                break
        res[i] = math.fsum(acc)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# synthetic Gauss-Markov data


@dataclass(frozen=True)
class SyntheticConfig:
    M: int = 200
    N: int = 40
    K: int = 15
    T: int = 30
    num_blocks: int = 1
    alpha: float = 0.8
    amplitude_var: float = 1.0
    b_mode: str = "fresh"  # "fresh" per snapshot or "fixed" per block

    def __post_init__(self):
        if not 0 <= self.K <= self.M:
            raise ValueError("need 0 <= K <= M")
        if not 0 <= self.alpha < 1:
            raise ValueError("alpha must lie in [0, 1)")
        if self.b_mode not in ("fresh", "fixed"):
            raise ValueError(f"unknown b_mode {self.b_mode!r}")
        if min(self.M, self.N, self.T, self.num_blocks) < 1:
            raise ValueError("M, N, T and num_blocks must be positive")


@dataclass
class SyntheticTrace:
    """Realization of the simultaneously sparse model, blocks stacked along
    axis 0: ``s``/``h``/``v`` are ``(blocks, T, M)``, ``y``/``w`` are
    ``(blocks, T, N)`` and ``B`` is ``(blocks, T, N, M)``."""

    supports: list[SupportVector]
    s: np.ndarray
    h: np.ndarray
    y: np.ndarray
    B: np.ndarray
    v: np.ndarray
    w: np.ndarray
    model: StateSpaceModel

    def blocks(self) -> list[ScenarioBlock]:
        return [
            ScenarioBlock(MeasurementBlock(self.y[i], self.B[i], i), self.h[i], self.model, self.supports[i])
            for i in range(len(self.supports))
        ]


def generate_synthetic(cfg: SyntheticConfig, snr_db: float, rng: np.random.Generator) -> SyntheticTrace:
    """Draw blocks of ``y_n = B_n diag(c) s_n + w_n`` with ``s`` an AR(1)
    process (``A = alpha I``, ``V = sigma_s^2 (1 - alpha^2) I``) and ``B``
    entries i.i.d. ``N(0, 1/M)``."""
    M, N, K, T, L = cfg.M, cfg.N, cfg.K, cfg.T, cfg.num_blocks
    a, var = cfg.alpha, cfg.amplitude_var
    noise_var = noise_var_for_snr(K * var / M, snr_db)
    supports = [SupportVector.from_indices(np.sort(rng.choice(M, K, replace=False)), M) for _ in range(L)]
    s = np.empty((L, T, M), dtype=np.complex128)
    v = complex_normal(rng, (L, T, M), var * (1 - a * a))
    state = complex_normal(rng, M, var)
    for i in range(L):
        for t in range(T):
            state = a * state + v[i, t]
            s[i, t] = state
    bits = np.stack([c.bits for c in supports])
    h = s * bits[:, None, :]
    if cfg.b_mode == "fresh":
        B = rng.standard_normal((L, T, N, M)) / np.sqrt(M)
    else:
        B = np.repeat((rng.standard_normal((L, 1, N, M)) / np.sqrt(M)), T, axis=1)
    B = B.astype(np.complex128)
    w = complex_normal(rng, (L, T, N), noise_var)
    y = np.einsum("btnm,btm->btn", B, h) + w
    model = StateSpaceModel.diagonal(np.full(M, a), np.full(M, var), noise_var)
    return SyntheticTrace(supports, s, h, y, B, v, w, model)


# ---------------------------------------------------------------------------
# fading channels


def jakes_correlation(doppler_rate: float, lags) -> np.ndarray:
    return bessel_j0(2.0 * np.pi * doppler_rate * np.asarray(lags, dtype=float))


def jakes_process(doppler_rate: float, T: int, n_taps: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-variance complex Gaussian processes, shape ``(T, n_taps)``, with
    lag-``r`` correlation ``J0(2 pi D_r r)``.

    Exact for the block length: the ``T x T`` Toeplitz correlation matrix is
    factored by eigendecomposition (clipping round-off negatives).
    """
    r = jakes_correlation(doppler_rate, np.arange(T))
    C = scipy.linalg.toeplitz(r)
    w, U = np.linalg.eigh(C)
    factor = U * np.sqrt(np.clip(w, 0.0, None))[None, :]
    return factor @ complex_normal(rng, (T, n_taps))


def tap_bins(profile: TapProfile, sample_period: float, M: int) -> np.ndarray:
    bins = np.rint(np.asarray(profile.delays) / sample_period).astype(int)
    if bins.size and bins.max() >= M:
        raise ValueError(f"{profile.name}: delay {max(profile.delays):g}s exceeds the {M}-tap CIR window")
    return bins


@dataclass
class FadingTrace:
    h: np.ndarray  # (T, M)
    tap_power: np.ndarray  # (M,), sums to one
    alpha: float
    transition: np.ndarray
    process_noise: np.ndarray

    @property
    def support(self) -> SupportVector:
        return SupportVector(self.tap_power > 0)


def fade_channel(profile: TapProfile, doppler_rate: float, T: int, M: int, sample_period: float,
                 rng: np.random.Generator) -> FadingTrace:
    """Rayleigh-faded CIR over ``T`` pilot instants plus a fitted first-order
    model (lag-1 match ``alpha = J0(2 pi D_r)``, per-tap variance = tap power)."""
    bins = tap_bins(profile, sample_period, M)
    power = 10.0 ** (np.asarray(profile.powers_db) / 10.0)
    power = power / power.sum()
    proc = jakes_process(doppler_rate, T, bins.size, rng) * np.sqrt(power)[None, :]
    h = np.zeros((T, M), dtype=np.complex128)
    tap_power = np.zeros(M)
    for j, b in enumerate(bins):
        h[:, b] += proc[:, j]
        tap_power[b] += power[j]
    alpha = float(jakes_correlation(doppler_rate, 1))
    return FadingTrace(h, tap_power, alpha, alpha * np.eye(M), np.diag((1 - alpha ** 2) * tap_power))


def k_sparse_profile(K: int, M: int, sample_period: float, rng: np.random.Generator) -> TapProfile:
    """Equal-power profile on ``K`` distinct random bins."""
    bins = np.sort(rng.choice(M, K, replace=False))
    return TapProfile(f"{K}-sparse", tuple(float(b) * sample_period for b in bins), (0.0,) * K)


def _estimator_model(fade: FadingTrace, K: int, noise_var: float, variance_model: str,
                     block: MeasurementBlock) -> StateSpaceModel:
    M = fade.h.shape[1]
    if variance_model == "uniform":
        var = np.full(M, 1.0 / max(K, 1))
    elif variance_model == "estimated":
        from .em import estimate_amplitude_variances

        var = np.maximum(estimate_amplitude_variances(block), 1e-12)
    elif variance_model == "known":
        var = np.maximum(fade.tap_power, 1e-12)
    else:
        raise ValueError(f"unknown variance_model {variance_model!r}")
    return StateSpaceModel.diagonal(np.full(M, fade.alpha), var, noise_var)


# ---------------------------------------------------------------------------
# OFDM


@dataclass(frozen=True)
class OfdmScenario:
    """Pilot layout of ``T`` pilot-bearing OFDM symbols: ``pilot_indices``
    and ``pilot_values`` are ``(T, N)`` arrays."""

    P: int
    M: int
    pilot_indices: np.ndarray
    pilot_values: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.pilot_indices)
        if idx.ndim != 2 or np.asarray(self.pilot_values).shape != idx.shape:
            raise ValueError("pilot_indices and pilot_values must be matching (T, N) arrays")
        if idx.min() < 0 or idx.max() >= self.P:
            raise ValueError("pilot index out of range")
        if any(np.unique(row).size != row.size for row in idx):
            raise ValueError("pilot indices must be distinct within a symbol")
        if self.M > self.P:
            raise ValueError("CIR length exceeds the number of subcarriers")

    @property
    def N(self) -> int:
        return self.pilot_indices.shape[1]

    @property
    def T(self) -> int:
        return self.pilot_indices.shape[0]

    @property
    def sample_period(self) -> float:
        return 1.0 / (self.P * SUBCARRIER_SPACING)

    @classmethod
    def random(cls, P: int, N: int, M: int, T: int, rng: np.random.Generator) -> "OfdmScenario":
        idx = np.stack([np.sort(rng.choice(P, N, replace=False)) for _ in range(T)])
        return cls(P, M, idx, qpsk(rng, (T, N)))


def build_ofdm_matrix(scn: OfdmScenario, symbol_index: int) -> np.ndarray:
    """``diag(p_n) Pi_n F_P Phi``: pilot rows of the DFT, first ``M`` columns."""
    if not 0 <= symbol_index < scn.T:
        raise IndexError(f"symbol index {symbol_index} out of range")
    rows = np.asarray(scn.pilot_indices[symbol_index])
    k = np.arange(scn.M)
    F = np.exp(-2j * np.pi * np.outer(rows, k) / scn.P)
    return np.asarray(scn.pilot_values[symbol_index])[:, None] * F


@dataclass(frozen=True)
class OfdmConfig:
    P: int = 1024
    N: int = 32
    M: int = 200
    K: int = 8
    T: int = 30
    num_blocks: int = 1
    doppler_rate: float = 0.05
    channel: str = "k-sparse"  # or a 3GPP profile name
    variance_model: str = "uniform"

    def __post_init__(self):
        if self.channel != "k-sparse" and self.channel not in PROFILES:
            raise ValueError(f"unknown channel {self.channel!r}")
        if self.N > self.P or self.K > self.M:
            raise ValueError("need N <= P and K <= M")


def generate_ofdm(cfg: OfdmConfig, snr_db: float, rng: np.random.Generator) -> list[ScenarioBlock]:
    noise_var = noise_var_for_snr(1.0, snr_db)
    out = []
    for i in range(cfg.num_blocks):
        scn = OfdmScenario.random(cfg.P, cfg.N, cfg.M, cfg.T, rng)
        if cfg.channel == "k-sparse":
            profile = k_sparse_profile(cfg.K, cfg.M, scn.sample_period, rng)
        else:
            profile = PROFILES[cfg.channel]
        fade = fade_channel(profile, cfg.doppler_rate, cfg.T, cfg.M, scn.sample_period, rng)
        B = np.stack([build_ofdm_matrix(scn, t) for t in range(cfg.T)])
        w = complex_normal(rng, (cfg.T, cfg.N), noise_var)
        y = np.einsum("tnm,tm->tn", B, fade.h) + w
        block = MeasurementBlock(y, B, i)
        model = _estimator_model(fade, cfg.K, noise_var, cfg.variance_model, block)
        truth = fade.support if cfg.channel == "k-sparse" else None
        out.append(ScenarioBlock(block, fade.h, model, truth, {"fade": fade}))
    return out


# ---------------------------------------------------------------------------
# single carrier


@dataclass(frozen=True)
class ScScenario:
    """Training sequence ``t_0 .. t_{L-1}`` sent through an ``M``-tap channel."""

    training: np.ndarray
    M: int

    def regressor(self, n: int) -> np.ndarray:
        """Row ``t_n^H = [t_n, t_{n-1}, ..., t_{n-M+1}]`` (zeros before the start)."""
        row = np.zeros(self.M, dtype=np.complex128)
        lo = max(0, n - self.M + 1)
        seg = np.asarray(self.training[lo:n + 1])[::-1]
        row[:seg.size] = seg
        return row


def build_sc_block(scn: ScScenario, h: np.ndarray, noise: np.ndarray | None = None, index: int = 0) -> MeasurementBlock:
    """Scalar observations ``y_n = t_n^H h_n + w_n`` for every training instant."""
    h = np.asarray(h, dtype=np.complex128)
    L = len(scn.training)
    if L < scn.M:
        raise ValueError(f"training length {L} shorter than channel length {scn.M}")
    if h.shape != (L, scn.M):
        raise ValueError(f"h must have shape ({L}, {scn.M})")
    B = np.stack([scn.regressor(n) for n in range(L)])[:, None, :]
    y = np.einsum("tnm,tm->tn", B, h)
    if noise is not None:
        y = y + np.asarray(noise).reshape(L, 1)
    return MeasurementBlock(y, B, index)


@dataclass(frozen=True)
class ScConfig:
    M: int = 64
    K: int = 4
    training_len: int = 128
    num_blocks: int = 1
    doppler_rate: float = 0.005
    variance_model: str = "uniform"

    def __post_init__(self):
        if self.training_len < self.M:
            raise ValueError("training_len must be at least M")
        if self.K > self.M:
            raise ValueError("K must not exceed M")


def generate_sc(cfg: ScConfig, snr_db: float, rng: np.random.Generator) -> list[ScenarioBlock]:
    noise_var = noise_var_for_snr(1.0, snr_db)
    out = []
    for i in range(cfg.num_blocks):
        scn = ScScenario(qpsk(rng, cfg.training_len), cfg.M)
        profile = k_sparse_profile(cfg.K, cfg.M, 1.0, rng)
        fade = fade_channel(profile, cfg.doppler_rate, cfg.training_len, cfg.M, 1.0, rng)
        w = complex_normal(rng, cfg.training_len, noise_var)
        block = build_sc_block(scn, fade.h, w, i)
        model = _estimator_model(fade, cfg.K, noise_var, cfg.variance_model, block)
        out.append(ScenarioBlock(block, fade.h, model, fade.support, {"fade": fade}))
    return out
