"""
Validation suite behind `mobo-sr bench`

Each check returns a BenchResult; `run_bench` runs the quick set and, with
`full=True`, the restoration end-to-end checks as well.
"""

import itertools
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog

from app.schemas.config import EngineSection, ProblemSection, RunConfig, WeightBound
from app.schemas.observation import Observation
from app.services.engine_service import (
    STREAM_WARM,
    MoboEngine,
    ParetoArchive,
    build_evaluator,
    derive_seed,
)
from app.services.gp_service import GaussianProcessService, GpHyperparameters, matern52, standardize
from app.services.acquisition_service import _ehvi_2d_from_moments
from app.services.pareto_service import dominates, extract_front, hypervolume, single_point_improvements
from app.services.problem_service import get_problem
from app.services.report_service import pareto_front, spearman
from app.services.restoration_service import (
    ANALYTIC_KINDS,
    PreparedBatch,
    RestorerParams,
    combined_gradient,
    combined_loss,
    synthesize_dataset,
)

logger = structlog.get_logger(__name__)

# desk-scale stand-ins for the pixel, perceptual and adversarial terms
ABLATION_LOSSES = ("l1", "ssim", "gradient")
ABLATION_WARM_WEIGHTS = (1e-2, 1.0, 5e-3)

ZDT1_REFERENCE = np.array([-1.1, -11.0])
EHVI_MC_SAMPLES = 2 ** 16
GRADIENT_FD_STEP = 1e-8


@dataclass
class BenchResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def lebesgue_oracle(front: np.ndarray, reference: np.ndarray) -> float:
    """Dominated volume by summing the cells of the grid spanned by the point coordinates"""
    front = np.atleast_2d(front)
    axes = [np.unique(np.concatenate([[reference[j]], front[:, j]])) for j in range(front.shape[1])]
    volume = 0.0
    for cell in itertools.product(*[range(len(a) - 1) for a in axes]):
        upper = np.array([axes[j][i + 1] for j, i in enumerate(cell)])
        if np.any(np.all(front >= upper, axis=1)):
            volume += float(np.prod([axes[j][i + 1] - axes[j][i] for j, i in enumerate(cell)]))
    return volume


def check_geometry(seed: int = 0) -> BenchResult:
    """Exact HV against the grid oracle on random 2-D and 3-D fronts"""
    rng = np.random.default_rng(seed)
    worst = 0.0
    cases = [(2, 10, 500), (3, 8, 100)]
    for m, max_points, count in cases:
        reference = np.zeros(m)
        for _ in range(count):
            points = rng.uniform(0.01, 1.0, size=(int(rng.integers(1, max_points + 1)), m))
            exact = hypervolume(points, reference)
            oracle = lebesgue_oracle(points, reference)
            worst = max(worst, abs(exact - oracle) / oracle)
    return BenchResult("hypervolume vs grid oracle", worst <= 0.01, f"max relative error {worst:.2e}")


def dense_posterior(
    h: GpHyperparameters, x: np.ndarray, y: np.ndarray, xs: np.ndarray, jitter: float
) -> Tuple[np.ndarray, np.ndarray]:
    """Posterior by direct linear solves, no factorization"""
    gram = matern52(x, x, h.lengthscales, h.signal_variance) + (h.noise_variance + jitter) * np.eye(x.shape[0])
    cross = matern52(xs, x, h.lengthscales, h.signal_variance)
    mean = h.constant_mean + cross @ np.linalg.solve(gram, y - h.constant_mean)
    variance = h.signal_variance - np.sum(cross * np.linalg.solve(gram, cross.T).T, axis=1)
    return mean, np.maximum(variance, 0.0)


def check_gp(seed: int = 0) -> BenchResult:
    """Cholesky posterior against dense solves, and interpolation at the noise floor"""
    rng = np.random.default_rng(seed)
    service = GaussianProcessService()
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 9))
        d = int(rng.integers(1, 4))
        x = rng.uniform(size=(n, d))
        y, _, _ = standardize(rng.normal(size=n))
        h = GpHyperparameters(
            lengthscales=rng.uniform(0.2, 1.0, size=d),
            signal_variance=float(rng.uniform(0.5, 2.0)),
            noise_variance=float(rng.uniform(1e-4, 1e-2)),
            constant_mean=float(rng.normal(scale=0.1)),
        )
        model = service.fit(x, y, hyperparameters=h)
        xs = rng.uniform(size=(5, d))
        mean, variance = model.posterior(xs)
        dense_mean, dense_variance = dense_posterior(h, x, y, xs, model.jitter)
        worst = max(worst, float(np.max(np.abs(mean - dense_mean))), float(np.max(np.abs(variance - dense_variance))))

    x = np.linspace(0.0, 1.0, 6)[:, None]
    y, _, _ = standardize(np.sin(3.0 * x[:, 0]))
    floor = GpHyperparameters(lengthscales=np.array([0.3]), signal_variance=1.0, noise_variance=1e-6)
    fitted, _ = service.fit(x, y, hyperparameters=floor).posterior(x)
    interpolation = float(np.max(np.abs(fitted - y)))

    passed = worst <= 1e-8 and interpolation <= 1e-3
    return BenchResult(
        "GP posterior vs dense solve",
        passed,
        f"max deviation {worst:.2e}, interpolation error {interpolation:.2e}",
    )


def check_ehvi(seed: int = 0, contexts: int = 50) -> BenchResult:
    """Exact bi-objective EHVI against 2^16-sample Monte Carlo

    Passes when at least 94% of contexts agree within three standard errors.
    """
    rng = np.random.default_rng(seed)
    reference = np.zeros(2)
    within = 0
    for _ in range(contexts):
        front = extract_front(rng.uniform(0.05, 1.0, size=(int(rng.integers(1, 6)), 2)))
        mean = rng.uniform(0.0, 1.2, size=(1, 2))
        std = rng.uniform(0.05, 0.5, size=(1, 2))
        exact = float(_ehvi_2d_from_moments(mean, std, front, reference)[0])
        samples = mean + std * rng.standard_normal((EHVI_MC_SAMPLES, 2))
        gains = single_point_improvements(samples, front, reference)
        estimate = float(gains.mean())
        error = float(gains.std(ddof=1) / np.sqrt(gains.shape[0]))
        if abs(exact - estimate) <= 3.0 * error + 1e-12:
            within += 1
    passed = within >= int(np.ceil(0.94 * contexts))
    return BenchResult("exact EHVI vs Monte Carlo", passed, f"{within}/{contexts} within 3 SE")


def zdt1_config(seed: int, warm: int = 10, steps: int = 50) -> RunConfig:
    return RunConfig(
        problem=ProblemSection(name="zdt1", dim=6),
        engine=EngineSection(warm_start_count=warm, total_iterations=steps, seed=seed, scan=256, restarts=2),
    )


def random_search_hypervolume(seed: int, count: int = 60, dim: int = 6) -> float:
    problem = get_problem("zdt1", dim)
    rng = np.random.default_rng(derive_seed(seed, 0, STREAM_WARM))
    points = np.array([problem.evaluate(x) for x in rng.uniform(size=(count, dim))])
    return hypervolume(extract_front(points), ZDT1_REFERENCE)


def zdt1_run(seed: int) -> ParetoArchive:
    config = zdt1_config(seed)
    return MoboEngine(config, build_evaluator(config)).run()


def check_optimizer(seeds: int = 10, runs: Optional[Dict[int, ParetoArchive]] = None) -> BenchResult:
    """MOBO on zdt1 against pure random search with the same evaluation count"""
    wins = 0
    for seed in range(seeds):
        archive = runs[seed] if runs and seed in runs else zdt1_run(seed)
        if runs is not None:
            runs[seed] = archive
        mobo = archive.hypervolume(reference=ZDT1_REFERENCE)
        baseline = random_search_hypervolume(seed, count=len(archive))
        wins += int(mobo > baseline)
        logger.info("zdt1 seed compared", seed=seed, mobo=mobo, random=baseline)
    return BenchResult("zdt1 MOBO vs random search", wins >= int(np.ceil(0.8 * seeds)), f"{wins}/{seeds} seeds better")


def check_gradients(seed: int = 0, draws: int = 20) -> BenchResult:
    """Analytic combined-loss gradients against central finite differences"""
    dataset = synthesize_dataset(seed, 4, 16, 2)
    rng = np.random.default_rng(seed)
    size = 3
    batch = PreparedBatch.from_pairs(dataset.train, 2, size)
    worst = 0.0
    for kind in ANALYTIC_KINDS:
        for _ in range(draws):
            theta = RestorerParams.identity(size).as_vector() + rng.normal(scale=0.05, size=size * size + 1)
            weights = [float(rng.uniform(0.1, 1.0))]
            analytic = combined_gradient(theta, weights, [kind], batch)
            numeric = finite_difference_gradient(theta, weights, [kind], batch)
            scale = max(float(np.linalg.norm(numeric)), 1e-12)
            worst = max(worst, float(np.linalg.norm(analytic - numeric)) / scale)
    return BenchResult("loss gradients vs finite differences", worst <= 1e-4, f"max relative error {worst:.2e}")


def finite_difference_gradient(
    theta: np.ndarray, weights: Sequence[float], enabled: Sequence[str], batch: PreparedBatch
) -> np.ndarray:
    def loss(t: np.ndarray) -> float:
        return combined_loss(weights, enabled, batch.predict(t), batch.hr, batch.lr, batch.scale)

    grad = np.zeros_like(theta)
    for k in range(theta.shape[0]):
        step = np.zeros_like(theta)
        step[k] = GRADIENT_FD_STEP
        grad[k] = (loss(theta + step) - loss(theta - step)) / (2.0 * GRADIENT_FD_STEP)
    return grad


def fit_seconds(n: int, dim: int = 6, seed: int = 0, repeats: int = 3) -> float:
    """Best-of-`repeats` wall time of one full GP fit on n random points"""
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=(n, dim))
    y, _, _ = standardize(np.sin(x.sum(axis=1) * 3.0) + 0.1 * rng.normal(size=n))
    service = GaussianProcessService()
    best = np.inf
    for _ in range(repeats):
        start = time.perf_counter()
        service.fit(x, y, seed=seed)
        best = min(best, time.perf_counter() - start)
    return float(best)


def check_timing(runs: Optional[Dict[int, ParetoArchive]] = None) -> BenchResult:
    """Fit time grows with the archive: rank correlation and the n=200 / n=50 ratio"""
    archive = runs[0] if runs and 0 in runs else zdt1_run(0)
    optimized = [o for o in archive.observations if o.phase == "optimized"]
    correlation = spearman([o.iteration for o in optimized], [o.fit_wall_seconds for o in optimized])
    ratio = fit_seconds(200) / fit_seconds(50)
    passed = correlation is not None and correlation > 0 and ratio >= 8.0
    corr_text = "n/a" if correlation is None else f"{correlation:.2f}"
    return BenchResult("GP fit timing", passed, f"rank correlation {corr_text}, n=200/n=50 ratio {ratio:.1f}x")


def ablation_config(seed: int) -> RunConfig:
    return RunConfig(
        problem=ProblemSection(name="restoration", mode="fresh", dataset_seed=seed),
        weights={
            "l1": WeightBound(low=0.0, high=1.0),
            "ssim": WeightBound(low=0.0, high=1.0),
            "gradient": WeightBound(low=0.0, high=0.5),
        },
        engine=EngineSection(warm_start_count=10, total_iterations=30, seed=seed, scan=256, restarts=2),
    )


def check_ablation(seeds: int = 10) -> BenchResult:
    """Optimized weights against the fixed warm-weight baseline, fresh-retrain mode"""
    wins = 0
    for seed in range(seeds):
        config = ablation_config(seed)
        baseline = build_evaluator(config).train_and_eval(list(ABLATION_WARM_WEIGHTS))
        baseline_canonical = np.where(np.array(config.orientation) == "maximize", baseline, -baseline)
        archive = MoboEngine(config, build_evaluator(config)).run()
        beaten = any(dominates(o.canonical(), baseline_canonical) for o in archive.observations)
        wins += int(beaten)
        logger.info("ablation seed compared", seed=seed, dominated=beaten)
    return BenchResult("optimized vs fixed loss weights", wins >= int(np.ceil(0.7 * seeds)), f"{wins}/{seeds} seeds dominate")


def tradeoff_points(observations: Sequence[Observation], objective_names: Sequence[str]) -> List[Tuple[float, float]]:
    """Distinct (psnr, hf_proxy) pairs of the front, PSNR descending"""
    psnr_index = list(objective_names).index("psnr")
    hf_index = list(objective_names).index("hf_proxy")
    pairs = {(o.objectives_raw[psnr_index], o.objectives_raw[hf_index]) for o in pareto_front(observations)}
    return sorted(pairs, key=lambda p: (-p[0], -p[1]))


def is_tradeoff_curve(points: Sequence[Tuple[float, float]]) -> bool:
    """At least three points, and hf_proxy strictly falls as PSNR falls

    hf_proxy is minimized, so along a non-dominated set ordered by PSNR descending
    each step gives up distortion for sharper high frequencies.
    """
    if len(points) < 3:
        return False
    return all(b[0] < a[0] and b[1] < a[1] for a, b in zip(points, points[1:]))


def check_tradeoff() -> BenchResult:
    """Default restoration run yields a genuine PSNR / hf_proxy trade-off curve"""
    config = RunConfig()
    archive = MoboEngine(config, build_evaluator(config)).run()
    points = tradeoff_points(archive.observations, config.objective_names)
    passed = is_tradeoff_curve(points)
    curve = " ".join(f"({psnr:.3f}, {hf:.5f})" for psnr, hf in points)
    return BenchResult("perception-distortion trade-off", passed, f"front size {len(points)}: {curve}")


def run_bench(full: bool = False, seeds: int = 10, on_result: Optional[Callable[[BenchResult], None]] = None) -> List[BenchResult]:
    """Run every check in order, timing each"""
    runs: Dict[int, ParetoArchive] = {}
    checks: List[Callable[[], BenchResult]] = [
        check_geometry,
        check_gp,
        check_ehvi,
        check_gradients,
        lambda: check_optimizer(seeds=seeds, runs=runs),
        lambda: check_timing(runs=runs),
    ]
    if full:
        checks += [lambda: check_ablation(seeds=seeds), check_tradeoff]

    results = []
    for check in checks:
        start = time.perf_counter()
        result = check()
        result.seconds = time.perf_counter() - start
        logger.info("Bench check finished", check=result.name, passed=result.passed, seconds=result.seconds)
        results.append(result)
        if on_result is not None:
            on_result(result)
    return results
