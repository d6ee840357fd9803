import numpy as np
import pytest

from imts_mixer.data import ImtsInstance


def random_instance(rng, n_channels=3, max_obs=6, max_queries=3, empty=()):
    """Random valid instance; observations in [0, 1], queries in [1, 1.5]."""
    times, values, queries, answers = [], [], [], []
    for c in range(n_channels):
        n = 0 if c in empty else int(rng.integers(1, max_obs + 1))
        k = int(rng.integers(1, max_queries + 1))
        times.append(np.sort(rng.uniform(0.0, 1.0, n)))
        values.append(rng.normal(size=n))
        queries.append(np.sort(rng.uniform(1.0, 1.5, k)))
        answers.append(rng.normal(size=k))
    return ImtsInstance(times, values, queries, answers)


def random_dataset(seed, n, n_channels=3):
    rng = np.random.default_rng(seed)
    return [random_instance(rng, n_channels) for _ in range(n)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
