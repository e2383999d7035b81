import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from farelens.features import FeatureMatrix


def make_matrix(values: np.ndarray, stations: list[str] | None = None) -> FeatureMatrix:
    """Wrap a raw array as a feature matrix for detector-level tests."""
    values = np.asarray(values, dtype=np.float64)
    n, d = values.shape
    stations = stations or [f"S{i:03d}" for i in range(n)]
    return FeatureMatrix(
        stations=stations,
        feature_names=[f"f{j}" for j in range(d)],
        values=values,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
