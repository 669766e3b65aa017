from __future__ import annotations

import hypothesis
import numpy as np
import pytest

from src.config import EstimationConfig, ForestConfig, RunConfig, SgdConfig
from src.core.dataset import Example
from src.services.pipeline import run_hedgeclipper

hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.register_profile("dev", deadline=None)
hypothesis.settings.load_profile("dev")

# Six unlabeled points, three "A" rules (error 1/3) and three identical "B" rules
# (error 1/6) under the all-'+' labeling.
SIX_POINT_F = np.array(
    [
        [-1, -1, +1, +1, +1, +1],
        [+1, +1, -1, -1, +1, +1],
        [+1, +1, +1, +1, -1, -1],
        [+1, +1, +1, +1, +1, -1],
        [+1, +1, +1, +1, +1, -1],
        [+1, +1, +1, +1, +1, -1],
    ],
    dtype=np.float64,
)
SIX_POINT_B = np.array([1 / 3, 1 / 3, 1 / 3, 2 / 3, 2 / 3, 2 / 3])


@pytest.fixture
def six_point() -> tuple[np.ndarray, np.ndarray]:
    return SIX_POINT_F.copy(), SIX_POINT_B.copy()


def two_blobs(n: int, seed: int, dims: int = 5, shift: float = 0.8) -> list[Example]:
    """Labeled Gaussian blobs centred at ±shift in every dimension."""
    rng = np.random.default_rng(seed)
    labels = np.where(rng.random(n) < 0.5, 1, -1)
    X = rng.normal(size=(n, dims)) + shift * labels[:, None]
    return [
        Example(features={k + 1: float(x[k]) for k in range(dims)}, label=int(y))
        for x, y in zip(X, labels)
    ]


@pytest.fixture
def blobs() -> list[Example]:
    return two_blobs(240, seed=11)


@pytest.fixture
def small_config() -> RunConfig:
    """A fast end-to-end configuration: few trees, short SGD."""
    return RunConfig(
        forest=ForestConfig(num_trees=8, min_leaf=4),
        estimation=EstimationConfig(resamples=30),
        sgd=SgdConfig(batch_size=32, epochs=20),
        alpha=1.0,
    )


def random_instance(
    rng: np.random.Generator, n: int, p: int, flip: float = 0.3
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    ±1 rule matrix F built around a hidden labeling z, with b strictly below F z / n so
    that z itself stays feasible. Returns (F, b, z).
    """
    z = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    F = np.where(rng.random((p, n)) < flip, -z, z)
    b = F @ z / n - rng.uniform(0.0, 0.1, size=p)
    return F, b, z


@pytest.fixture
def split(blobs) -> tuple[list[Example], list[Example]]:
    """First 60 blobs labeled, the remaining 180 unlabeled (labels kept for scoring)."""
    return blobs[:60], blobs[60:]


@pytest.fixture
def fitted(split, small_config):
    labeled, unlabeled = split
    return run_hedgeclipper(labeled, unlabeled, small_config)
