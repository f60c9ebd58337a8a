import numpy as np
import pytest

from debicluster import ExpressionMatrix
from debicluster.binarization import BinarizedFeature


def make_matrix(values, prefix_f="g", prefix_s="s"):
    values = np.asarray(values, dtype=float)
    f, n = values.shape
    return ExpressionMatrix([f"{prefix_f}{i}" for i in range(f)], [f"{prefix_s}{j}" for j in range(n)], values)


def feat(index, minority, direction="up", snr=1.0, pvalue=0.001):
    return BinarizedFeature(index, frozenset(minority), direction, snr, pvalue)


def planted(n_features=60, n_samples=200, blocks=((range(0, 20), range(0, 20)),), shift=4.0, seed=0):
    """Noise matrix with +shift blocks given as (feature range, sample range) pairs."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n_features, n_samples))
    for feats, samples in blocks:
        x[np.ix_(list(feats), list(samples))] += shift
    return make_matrix(x)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
