"""
Shared fixtures
"""

import numpy as np
import pytest

from app.schemas.config import EngineSection, ProblemSection, RunConfig, WeightBound
from app.services.gp_service import GaussianProcessService, GpHyperparameters, standardize


def small_engine(**overrides) -> EngineSection:
    values = dict(warm_start_count=4, total_iterations=3, scan=64, restarts=1, seed=3)
    values.update(overrides)
    return EngineSection(**values)


@pytest.fixture
def toy_config() -> RunConfig:
    """toy_tradeoff with a tiny budget"""
    return RunConfig(problem=ProblemSection(name="toy_tradeoff"), engine=small_engine())


@pytest.fixture
def zdt_config() -> RunConfig:
    return RunConfig(problem=ProblemSection(name="zdt1", dim=2), engine=small_engine())


@pytest.fixture
def small_problem() -> ProblemSection:
    """Restoration bench small enough for unit tests"""
    return ProblemSection(image_count=4, image_size=16, scale=2, filter_size=3, steps_per_eval=3)


@pytest.fixture
def small_restoration_config(small_problem) -> RunConfig:
    return RunConfig(
        problem=small_problem,
        weights={"l1": WeightBound(low=0.0, high=1.0), "gradient": WeightBound(low=0.0, high=0.5)},
        engine=small_engine(warm_start_count=3, total_iterations=2, scan=32),
    )


@pytest.fixture
def toy_models():
    """Two frozen-hyperparameter GPs on three 1-D points, standardized targets"""
    x = np.array([[0.1], [0.5], [0.9]])
    raw = np.column_stack([x[:, 0], 1.0 - x[:, 0] ** 2])
    h = GpHyperparameters(lengthscales=np.array([0.3]), signal_variance=1.0, noise_variance=1e-4)
    service = GaussianProcessService()
    models, targets = [], []
    for j in range(2):
        z, _, _ = standardize(raw[:, j])
        models.append(service.fit(x, z, hyperparameters=h))
        targets.append(z)
    return models, np.column_stack(targets)
