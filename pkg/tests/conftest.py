import numpy as np
import pytest

from fannkit.core import AttributedDataset


@pytest.fixture(scope="session")
def small_uniform():
    """500 uniform points in 16-D with uniform integer attributes."""
    rng = np.random.default_rng(11)
    vectors = rng.random((500, 16), dtype=np.float32)
    attrs = rng.integers(0, 100_001, 500)
    return AttributedDataset(vectors, attrs)


@pytest.fixture(scope="session")
def labeled_ds():
    """1500 points where half carry label 1 and a tenth carry label 2;
    everything else gets label 0."""
    rng = np.random.default_rng(23)
    vectors = rng.random((1500, 16), dtype=np.float32)
    labels = []
    for i in range(1500):
        s = set()
        if rng.random() < 0.5:
            s.add(1)
        if rng.random() < 0.1:
            s.add(2)
        if not s:
            s.add(0)
        labels.append(frozenset(s))
    return AttributedDataset(vectors, rng.integers(0, 100_001, 1500), labels)


@pytest.fixture
def fixture_5pt():
    """The 1-D five-point fixture: vectors [0..4], attrs 10..50."""
    vectors = np.array([[0.0], [1.0], [2.0], [3.0], [4.0]], dtype=np.float32)
    return AttributedDataset(vectors, [10, 20, 30, 40, 50])
