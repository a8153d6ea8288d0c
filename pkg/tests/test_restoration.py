"""
Restoration bench tests
"""

import numpy as np
import pytest

from app.core.exceptions import ValidationError
from app.schemas.config import ProblemSection
from app.schemas.restoration import MetricVector
from app.services.bench_service import finite_difference_gradient
from app.services.pareto_service import extract_front
from app.services.restoration_service import (
    ANALYTIC_KINDS,
    SSIM_C1,
    SSIM_C2,
    ImagePair,
    PreparedBatch,
    RestorationEvaluator,
    RestorerParams,
    combined_gradient,
    combined_loss,
    compute_metrics,
    cubic_kernel,
    downsample,
    evaluate_metrics,
    export_pgm,
    loss_gradient,
    loss_value,
    resize_matrix,
    restore,
    ssim_map,
    synthesize_dataset,
    train_epoch,
    upsample,
)


@pytest.fixture
def dataset():
    return synthesize_dataset(seed=3, count=4, size=16, scale=2)


@pytest.fixture
def batch(dataset):
    return PreparedBatch.from_pairs(dataset.train, 2, 3)


def _mirror(j: int, n: int) -> int:
    while j < 0 or j >= n:
        j = -j - 1 if j < 0 else 2 * n - 1 - j
    return j


def _dense_bicubic(in_len: int, out_len: int) -> np.ndarray:
    """Resampling matrix built point by point from the kernel definition"""
    ratio = out_len / in_len
    stretch = min(ratio, 1.0)
    out = np.zeros((out_len, in_len))
    for i in range(out_len):
        center = (i + 0.5) / ratio - 0.5
        for j in range(-3 * in_len, 4 * in_len):
            t = abs(center - j) * stretch
            if t < 1.0:
                w = 1.5 * t ** 3 - 2.5 * t ** 2 + 1.0
            elif t < 2.0:
                w = -0.5 * t ** 3 + 2.5 * t ** 2 - 4.0 * t + 2.0
            else:
                w = 0.0
            out[i, _mirror(j, in_len)] += w * stretch
        out[i] /= out[i].sum()
    return out


def test_cubic_kernel_partition_of_unity():
    t = np.linspace(0.0, 1.0, 11)
    total = sum(cubic_kernel(t + k) for k in range(-2, 3))
    np.testing.assert_allclose(total, 1.0, atol=1e-12)


@pytest.mark.parametrize("in_len, out_len", [(16, 8), (8, 16), (12, 4)])
def test_resize_matrix_matches_dense_construction(in_len, out_len):
    np.testing.assert_allclose(resize_matrix(in_len, out_len), _dense_bicubic(in_len, out_len), atol=1e-12)


def test_impulse_round_trip_matches_dense_oracle():
    image = np.full((8, 8), 0.25)
    image[3, 5] = 1.0
    expected = _dense_bicubic(16, 8) @ (_dense_bicubic(8, 16) @ image @ _dense_bicubic(8, 16).T) @ _dense_bicubic(16, 8).T
    np.testing.assert_allclose(downsample(upsample(image, 2), 2), expected, atol=1e-12)


def test_constant_image_survives_downsampling():
    np.testing.assert_allclose(downsample(np.full((16, 16), 0.37), 2), 0.37, atol=1e-12)


def test_dataset_is_deterministic(dataset):
    again = synthesize_dataset(seed=3, count=4, size=16, scale=2)
    for a, b in zip(dataset.train + dataset.validation, again.train + again.validation):
        np.testing.assert_array_equal(a.hr, b.hr)
        np.testing.assert_array_equal(a.lr, b.lr)
    assert len(dataset.train) == 3 and len(dataset.validation) == 1


def test_dataset_rejects_tiny_images():
    with pytest.raises(ValidationError):
        synthesize_dataset(seed=0, count=4, size=8, scale=2)


def test_identity_restorer_is_bicubic(dataset):
    lr = dataset.train[0].lr
    np.testing.assert_allclose(restore(RestorerParams.identity(5), lr, 2), upsample(lr, 2), rtol=0, atol=1e-15)


def test_zero_input_gives_bias():
    params = RestorerParams(filter=3.0 * RestorerParams.identity(3).filter, bias=0.25)
    np.testing.assert_allclose(restore(params, np.zeros((8, 8)), 2), 0.25)


def test_restorer_is_linear_in_filter(dataset):
    rng = np.random.default_rng(1)
    lr = dataset.train[1].lr
    f1, f2 = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
    combined = restore(RestorerParams(filter=2.0 * f1 - 0.5 * f2), lr, 2)
    separate = 2.0 * restore(RestorerParams(filter=f1), lr, 2) - 0.5 * restore(RestorerParams(filter=f2), lr, 2)
    np.testing.assert_allclose(combined, separate, atol=1e-12)


def test_restorer_parameter_limit():
    with pytest.raises(ValidationError):
        RestorerParams(filter=np.zeros((13, 13)))


@pytest.mark.parametrize("kind", ["l1", "l2", "fft", "gradient", "cycle", "ssim"])
def test_losses_vanish_on_perfect_restoration(dataset, kind):
    pair = dataset.train[0]
    assert loss_value(kind, pair.hr, pair.hr, pair.lr, 2) == pytest.approx(0.0, abs=1e-12)


def test_constant_offset_losses(dataset):
    hr = dataset.train[0].hr
    sr = hr + 0.1
    assert loss_value("l1", sr, hr) == pytest.approx(0.1)
    assert loss_value("l2", sr, hr) == pytest.approx(0.01)
    assert loss_value("gradient", sr, hr) == pytest.approx(0.0, abs=1e-12)


def test_fft_loss_matches_naive_dft():
    rng = np.random.default_rng(2)
    sr, hr = rng.uniform(size=(8, 8)), rng.uniform(size=(8, 8))
    delta = sr - hr
    total = 0.0
    for u in range(8):
        for v in range(8):
            coefficient = sum(
                delta[x, y] * np.exp(-2j * np.pi * (u * x + v * y) / 8.0) for x in range(8) for y in range(8)
            )
            total += abs(coefficient.real) + abs(coefficient.imag)
    assert loss_value("fft", sr, hr) == pytest.approx(total / 64.0, abs=1e-6)


def test_loss_rejects_size_mismatch():
    with pytest.raises(ValidationError):
        loss_value("l1", np.zeros((8, 8)), np.zeros((8, 9)))


def test_combined_loss_selector_and_homogeneity(dataset):
    pair = dataset.train[0]
    sr = upsample(pair.lr, 2)
    enabled = ["l1", "l2", "gradient"]
    assert combined_loss([1.0, 0.0, 0.0], enabled, sr, pair.hr) == pytest.approx(loss_value("l1", sr, pair.hr))
    weights = [0.3, 0.2, 0.7]
    assert combined_loss([2.0 * w for w in weights], enabled, sr, pair.hr) == pytest.approx(
        2.0 * combined_loss(weights, enabled, sr, pair.hr)
    )


@pytest.mark.parametrize("kind", ANALYTIC_KINDS)
def test_analytic_gradients_match_finite_differences(batch, kind):
    rng = np.random.default_rng(sum(map(ord, kind)))
    for _ in range(3):
        theta = RestorerParams.identity(3).as_vector() + rng.normal(scale=0.05, size=10)
        weights = [float(rng.uniform(0.1, 1.0))]
        analytic = combined_gradient(theta, weights, [kind], batch)
        numeric = finite_difference_gradient(theta, weights, [kind], batch)
        assert np.linalg.norm(analytic - numeric) <= 1e-4 * np.linalg.norm(numeric)


def test_combined_gradient_is_weighted_sum(batch):
    theta = RestorerParams.identity(3).as_vector() + 0.01
    enabled = ["l1", "l2", "cycle"]
    weights = [0.2, 0.5, 0.9]
    expected = sum(w * loss_gradient(k, theta, batch) for w, k in zip(weights, enabled))
    np.testing.assert_allclose(combined_gradient(theta, weights, enabled, batch), expected, atol=1e-14)


def test_ssim_gradient_matches_finite_differences(batch):
    theta = RestorerParams.identity(3).as_vector() + np.random.default_rng(4).normal(scale=0.05, size=10)
    analytic = loss_gradient("ssim", theta, batch)
    numeric = finite_difference_gradient(theta, [1.0], ["ssim"], batch)
    np.testing.assert_allclose(analytic, numeric, rtol=1e-3, atol=1e-6)


def test_zero_weights_leave_params_unchanged(batch):
    start = RestorerParams.identity(3)
    trained = train_epoch(start, [0.0, 0.0], ["l1", "ssim"], batch, 0.1, 5)
    np.testing.assert_array_equal(trained.as_vector(), start.as_vector())


def test_l2_descent_shrinks_constant_residual(dataset):
    """hr = bicubic(lr) + 0.2: the bias climbs and the l2 loss falls every epoch"""
    pairs = [ImagePair(hr=upsample(p.lr, 2) + 0.2, lr=p.lr) for p in dataset.train]
    batch = PreparedBatch.from_pairs(pairs, 2, 1)
    params = RestorerParams.identity(1)
    losses, biases = [], []
    for _ in range(5):
        params = train_epoch(params, [1.0], ["l2"], batch, 0.1, 1)
        losses.append(loss_value("l2", batch.predict(params.as_vector()), batch.hr))
        biases.append(params.bias)
    assert all(b < a for a, b in zip(losses, losses[1:]))
    assert all(b > a for a, b in zip(biases, biases[1:]))


def test_perfect_metrics(dataset):
    pair = dataset.validation[0]
    metrics = compute_metrics(pair.hr, pair.hr, pair.lr, 2)
    assert metrics.psnr == 100.0
    assert metrics.ssim == pytest.approx(1.0)
    assert metrics.hf_proxy == pytest.approx(0.0, abs=1e-12)


def test_psnr_of_constant_offset():
    hr = np.linspace(0.0, 0.5, 256).reshape(16, 16)
    metrics = compute_metrics(hr + 1.0 / 16.0, hr, downsample(hr, 2), 2)
    assert metrics.psnr == pytest.approx(10.0 * np.log10(256.0), abs=1e-9)
    assert metrics.psnr == pytest.approx(24.082, abs=1e-3)


def test_ssim_center_window_matches_direct_formula():
    """On an 11×11 image the Gaussian window at the centre covers every pixel"""
    rng = np.random.default_rng(7)
    a = rng.uniform(0.2, 0.8, size=(11, 11))
    b = a + 0.05
    g = np.exp(-((np.arange(11) - 5.0) ** 2) / (2.0 * 1.5 ** 2))
    w = np.outer(g, g) / np.outer(g, g).sum()
    mu_a, mu_b = (w * a).sum(), (w * b).sum()
    var_a = (w * (a - mu_a) ** 2).sum()
    var_b = (w * (b - mu_b) ** 2).sum()
    cov = (w * (a - mu_a) * (b - mu_b)).sum()
    expected = ((2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)) / (
        (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    )
    assert ssim_map(a, b)[5, 5] == pytest.approx(expected, abs=1e-10)


def test_evaluate_metrics_scores_validation_restorations(dataset):
    hr = np.stack([p.hr for p in dataset.validation])
    lr = np.stack([p.lr for p in dataset.validation])
    metrics = evaluate_metrics(RestorerParams.identity(3), dataset.validation, 2)
    assert metrics.model_dump() == pytest.approx(compute_metrics(upsample(lr, 2), hr, lr, 2).model_dump(), rel=1e-12)
    assert metrics.psnr < 100.0
    with pytest.raises(ValidationError):
        evaluate_metrics(RestorerParams.identity(3), [], 2)


def test_metrics_independent_of_image_order(dataset):
    pairs = list(dataset.train) + list(dataset.validation)
    params = RestorerParams.identity(3)
    forward = evaluate_metrics(params, pairs, 2)
    backward = evaluate_metrics(params, pairs[::-1], 2)
    assert backward.psnr == pytest.approx(forward.psnr, rel=1e-12)
    assert backward.lr_psnr == pytest.approx(forward.lr_psnr, rel=1e-12)
    assert backward.model_dump() == pytest.approx(forward.model_dump(), rel=1e-12)


@pytest.mark.slow
def test_weight_grid_exposes_psnr_hf_tradeoff():
    """Fresh restorers over an L1 x SSIM grid: no single weighting wins both objectives"""
    evaluator = RestorationEvaluator(ProblemSection(mode="fresh"), ["l1", "ssim"], ["psnr", "hf_proxy"])
    levels = [0.0, 0.1, 0.25, 0.5, 0.75, 1.0]
    scores = np.array([evaluator.train_and_eval([a, b]) for a in levels for b in levels])
    assert np.all(np.isfinite(scores))
    front = np.unique(extract_front(np.column_stack([scores[:, 0], -scores[:, 1]])), axis=0)
    assert len(front) >= 3


def test_fresh_evaluator_is_deterministic(small_problem):
    problem = small_problem.model_copy(update={"mode": "fresh"})
    evaluator = RestorationEvaluator(problem, ["l1", "ssim"], ["psnr", "hf_proxy"])
    first = evaluator.train_and_eval([0.5, 0.5])
    second = evaluator.train_and_eval([0.5, 0.5])
    np.testing.assert_array_equal(first, second)
    assert evaluator.stateful is False


def test_stateful_evaluator_remembers_history(small_problem):
    a = RestorationEvaluator(small_problem, ["l1", "gradient"], ["psnr", "hf_proxy"])
    b = RestorationEvaluator(small_problem, ["l1", "gradient"], ["psnr", "hf_proxy"])
    a.train_and_eval([1.0, 0.0])
    b.train_and_eval([0.0, 0.5])
    assert not np.array_equal(a.train_and_eval([0.5, 0.1]), b.train_and_eval([0.5, 0.1]))


def test_replay_reproduces_state(small_problem):
    a = RestorationEvaluator(small_problem, ["l1", "cycle"], ["psnr", "ssim"])
    b = RestorationEvaluator(small_problem, ["l1", "cycle"], ["psnr", "ssim"])
    a.train_and_eval([0.3, 0.6])
    b.replay([0.3, 0.6])
    np.testing.assert_array_equal(a.train_and_eval([0.9, 0.1]), b.train_and_eval([0.9, 0.1]))


def test_evaluator_rejects_wrong_weight_count(small_problem):
    from app.core.exceptions import EvaluatorError

    evaluator = RestorationEvaluator(small_problem, ["l1"], ["psnr", "hf_proxy"])
    with pytest.raises(EvaluatorError):
        evaluator.train_and_eval([0.1, 0.2])


def test_export_pgm(tmp_path, dataset):
    path = export_pgm(dataset.train[0].hr, tmp_path / "hr.pgm")
    data = path.read_bytes()
    assert data.startswith(b"P5\n16 16\n255\n")
    assert len(data) == len(b"P5\n16 16\n255\n") + 256


def test_problem_section_rejects_even_filter():
    with pytest.raises(ValueError):
        ProblemSection(filter_size=4)


def test_metric_vector_selects_in_requested_order():
    metrics = MetricVector(psnr=24.5, ssim=0.8, lr_psnr=30.0, hf_proxy=0.06)
    assert metrics.select(["hf_proxy", "psnr"]) == [0.06, 24.5]
    assert metrics.select([]) == []
