"""
Gaussian-process surrogate tests
"""

import numpy as np
import pytest

from app.core.exceptions import ValidationError
from app.services.bench_service import check_gp, dense_posterior
from app.services.gp_service import (
    GaussianProcessService,
    GpHyperparameters,
    _factorize,
    fit,
    kernel,
    log_marginal_likelihood,
    matern52,
    predict,
    standardize,
)


@pytest.fixture
def frozen():
    return GpHyperparameters(lengthscales=np.array([0.4]), signal_variance=1.3, noise_variance=1e-3, constant_mean=0.2)


def test_kernel_at_zero_distance(frozen):
    assert kernel([0.3], [0.3], frozen) == pytest.approx(1.3)


def test_kernel_symmetric():
    rng = np.random.default_rng(0)
    h = GpHyperparameters(lengthscales=rng.uniform(0.1, 1.0, size=3), signal_variance=0.7, noise_variance=1e-4)
    for _ in range(20):
        a, b = rng.uniform(size=3), rng.uniform(size=3)
        assert kernel(a, b, h) == kernel(b, a, h)


def test_kernel_decays_with_distance():
    h = GpHyperparameters(lengthscales=np.array([0.5, 0.5]), signal_variance=1.0, noise_variance=1e-4)
    values = [kernel([0.0, 0.0], [t, 0.0], h) for t in np.linspace(0.0, 3.0, 30)]
    assert all(b < a for a, b in zip(values, values[1:]))


def test_kernel_rejects_bad_hyperparameters():
    with pytest.raises(ValidationError):
        kernel([0.0], [1.0], GpHyperparameters(np.array([-1.0]), 1.0, 1e-3))
    with pytest.raises(ValidationError):
        kernel([0.0, 0.0], [1.0, 1.0], GpHyperparameters(np.array([1.0]), 1.0, 1e-3))


def test_factorization_reconstructs_matrix(frozen):
    x = np.random.default_rng(1).uniform(size=(8, 1))
    factor, jitter = _factorize(x, frozen)
    target = matern52(x, x, frozen.lengthscales, frozen.signal_variance) + (frozen.noise_variance + jitter) * np.eye(8)
    error = np.linalg.norm(factor @ factor.T - target) / np.linalg.norm(target)
    assert error <= 1e-8


def test_posterior_matches_dense_solve(frozen):
    """Fixed five-point 1-D dataset, frozen hyperparameters"""
    x = np.array([[0.0], [0.2], [0.45], [0.7], [1.0]])
    y = np.array([0.3, -0.5, 1.1, 0.4, -0.9])
    model = GaussianProcessService().fit(x, y, hyperparameters=frozen)
    xs = np.linspace(-0.2, 1.2, 15)[:, None]
    mean, variance = model.posterior(xs)
    dense_mean, dense_variance = dense_posterior(frozen, x, y, xs, model.jitter)
    np.testing.assert_allclose(mean, dense_mean, atol=1e-8)
    np.testing.assert_allclose(variance, dense_variance, atol=1e-8)


def test_posterior_matches_dense_solve_on_random_sets():
    assert check_gp(seed=4).passed


def test_interpolates_at_noise_floor():
    x = np.array([[0.0], [0.5], [1.0]])
    y = np.array([-1.0, 0.0, 1.0])
    h = GpHyperparameters(lengthscales=np.array([0.5]), signal_variance=1.0, noise_variance=1e-6)
    model = GaussianProcessService().fit(x, y, hyperparameters=h)
    mean, variance = model.posterior(x)
    np.testing.assert_allclose(mean, y, atol=1e-3)
    assert np.all(variance <= 1e-4 * h.signal_variance)


def test_far_field_recovers_prior():
    h = GpHyperparameters(lengthscales=np.array([0.1]), signal_variance=2.0, noise_variance=1e-4, constant_mean=0.5)
    x = np.array([[0.0], [0.1], [0.3]])
    model = GaussianProcessService().fit(x, np.array([1.0, -1.0, 2.0]), hyperparameters=h)
    prediction = predict(model, [5.0])
    assert prediction.mean == pytest.approx(0.5, rel=0.01)
    assert prediction.variance == pytest.approx(2.0, rel=0.01)


def test_conflicting_duplicates_raise_noise():
    """Identical inputs with different targets are explained as noise"""
    x = np.array([[0.2], [0.2], [0.6], [0.9]])
    y, _, _ = standardize([1.0, -1.0, 0.3, 0.5])
    model = GaussianProcessService().fit(x, y, seed=0)
    assert model.hyperparameters.noise_variance > 1e-6
    assert np.isfinite(model.log_marginal_likelihood)


def test_fit_is_deterministic():
    rng = np.random.default_rng(3)
    x = rng.uniform(size=(10, 2))
    y, _, _ = standardize(np.sin(4.0 * x[:, 0]) + x[:, 1])
    a = GaussianProcessService().fit(x, y, seed=7)
    b = GaussianProcessService().fit(x, y, seed=7)
    np.testing.assert_array_equal(a.hyperparameters.lengthscales, b.hyperparameters.lengthscales)
    assert a.log_marginal_likelihood == b.log_marginal_likelihood


def test_fitted_hyperparameters_within_bounds():
    rng = np.random.default_rng(8)
    x = rng.uniform(size=(12, 3))
    y, _, _ = standardize(x @ np.array([1.0, -2.0, 0.1]))
    h = GaussianProcessService().fit(x, y).hyperparameters
    assert np.all((h.lengthscales >= 1e-2 - 1e-12) & (h.lengthscales <= 10.0 + 1e-9))
    assert 1e-3 - 1e-12 <= h.signal_variance <= 1e3 + 1e-6
    assert 1e-6 - 1e-15 <= h.noise_variance <= 1.0 + 1e-9


def test_lml_permutation_invariant(frozen):
    rng = np.random.default_rng(4)
    x = rng.uniform(size=(9, 1))
    y = rng.normal(size=9)
    order = rng.permutation(9)
    assert log_marginal_likelihood(frozen, x, y) == pytest.approx(log_marginal_likelihood(frozen, x[order], y[order]), abs=1e-9)


def test_lml_rises_toward_residual_variance():
    """Pure-noise data: likelihood grows as the noise approaches the sample variance"""
    rng = np.random.default_rng(6)
    x = rng.uniform(size=(200, 1))
    y = rng.normal(scale=0.5, size=200)
    values = [
        log_marginal_likelihood(
            GpHyperparameters(lengthscales=np.array([0.1]), signal_variance=1e-3, noise_variance=noise), x, y
        )
        for noise in (0.02, 0.05, 0.1, 0.15)
    ]
    assert all(b > a for a, b in zip(values, values[1:]))


def test_fit_needs_two_observations():
    with pytest.raises(ValidationError):
        fit([([0.5], 0.0)])


def test_module_level_fit_and_predict():
    model = fit([([0.0], -1.0), ([0.5], 0.0), ([1.0], 1.0)], seed=1)
    assert predict(model, [0.5]).variance >= 0.0


def test_standardize_degenerate_column():
    z, center, scale = standardize([2.0, 2.0, 2.0])
    assert scale == 1.0 and center == 2.0
    assert z.tolist() == [0.0, 0.0, 0.0]


def test_posterior_variance_shrinks_as_data_grows():
    h = GpHyperparameters(lengthscales=np.array([0.3, 0.3]), signal_variance=1.0, noise_variance=1e-3)
    rng = np.random.default_rng(11)
    x = rng.uniform(size=(12, 2))
    y = np.sin(3.0 * x[:, 0]) - x[:, 1]
    xs = rng.uniform(size=(25, 2))
    previous = None
    for n in range(2, 13):
        _, variance = GaussianProcessService().fit(x[:n], y[:n], hyperparameters=h).posterior(xs)
        if previous is not None:
            assert np.all(variance <= previous + 1e-8)
        previous = variance


def test_posterior_independent_of_training_order():
    h = GpHyperparameters(lengthscales=np.array([0.3, 0.5]), signal_variance=1.0, noise_variance=1e-3)
    rng = np.random.default_rng(12)
    x = rng.uniform(size=(10, 2))
    y = rng.normal(size=10)
    order = rng.permutation(10)
    xs = rng.uniform(size=(15, 2))
    mean, variance = GaussianProcessService().fit(x, y, hyperparameters=h).posterior(xs)
    mean_p, variance_p = GaussianProcessService().fit(x[order], y[order], hyperparameters=h).posterior(xs)
    np.testing.assert_allclose(mean_p, mean, atol=1e-10)
    np.testing.assert_allclose(variance_p, variance, atol=1e-10)
