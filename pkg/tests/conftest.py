import sys

import numpy as np
import pytest

from skts.model import MeasurementBlock, StateSpaceModel


def random_psd(rng, m, rank=None, scale=1.0):
    rank = m if rank is None else rank
    x = rng.standard_normal((m, rank)) + 1j * rng.standard_normal((m, rank))
    return scale * (x @ x.conj().T) / rank + (1e-3 * np.eye(m) if rank == m else 0)


def random_instance(rng, M, N, T, support=None, time_varying=False):
    """Small random complex state-space problem with a random support."""
    def trans():
        a = rng.standard_normal((M, M)) + 1j * rng.standard_normal((M, M))
        return 0.9 * a / np.max(np.abs(np.linalg.eigvals(a)))

    if time_varying:
        A = np.stack([trans() for _ in range(T)])
        V = np.stack([random_psd(rng, M) for _ in range(T)])
    else:
        A, V = trans(), random_psd(rng, M)
    model = StateSpaceModel(
        A, V, float(rng.uniform(0.1, 1.0)),
        rng.standard_normal(M) + 1j * rng.standard_normal(M), random_psd(rng, M),
    )
    B = rng.standard_normal((T, N, M)) + 1j * rng.standard_normal((T, N, M))
    y = rng.standard_normal((T, N)) + 1j * rng.standard_normal((T, N))
    if support is None:
        support = rng.random(M) < 0.6
    return model, MeasurementBlock(y, B), np.asarray(support, dtype=bool)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    mod = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
