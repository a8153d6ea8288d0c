"""
Multi-objective Bayesian optimization loop over loss-weight vectors

Schedule of iteration indices for one run:
    [0, P)          fixed warm weights, P = pretrain_epochs (only with warm_weights)
    [P, P + C)      scrambled-Sobol warm-start samples, C = warm_start_count
    [P + C, ...)    model-guided proposals, total_iterations of them

Every random decision is seeded from `derive_seed(master, iteration, stream)`, so a
resumed run reproduces the uninterrupted one.
"""

import time
from typing import Callable, List, Optional, Protocol, Sequence, Tuple

import numpy as np
import structlog
from scipy.stats.qmc import Sobol

from app.core.exceptions import ArchiveError, EvaluatorError, FittingError, MoboException, ValidationError
from app.schemas.config import RunConfig
from app.schemas.observation import Observation, Phase
from app.services.acquisition_service import (
    AcquisitionBudget,
    AcquisitionContext,
    CandidateProposal,
    propose_next,
)
from app.services.archive_service import ArchiveService, validate_sequence
from app.services.gp_service import GaussianProcessService, GpModel, standardize
from app.services.pareto_service import front_indices, hypervolume

logger = structlog.get_logger(__name__)

STREAM_OBSERVATION = 0
STREAM_WARM = 1
STREAM_ACQUISITION = 2
STREAM_SCAN = 3
STREAM_GP = 16  # + objective index

RETRY_JITTER_START = 1e-4
RETRY_JITTER_MAX = 1e-1
HV_MC_SAMPLES = 100_000


class Evaluator(Protocol):
    """Black box mapping a weight vector to raw objective values"""

    stateful: bool

    def train_and_eval(self, weights: Sequence[float]) -> np.ndarray:
        ...

    def replay(self, weights: Sequence[float]) -> None:
        ...


def derive_seed(master: int, iteration: int, stream: int) -> int:
    """Counter-based seed: SeedSequence([master, iteration, stream]) → 32 bits"""
    state = np.random.SeedSequence([master, iteration, stream]).generate_state(1, dtype=np.uint32)
    return int(state[0])


def reference_point(canonical: np.ndarray, slack: float = 0.1) -> np.ndarray:
    """Per-objective minimum minus `slack` of the observed range (at least 1e-6)"""
    y = np.atleast_2d(np.asarray(canonical, dtype=float))
    if y.shape[0] == 0:
        raise ValidationError("reference point needs at least one observation")
    low = y.min(axis=0)
    spread = y.max(axis=0) - low
    return low - np.maximum(slack * spread, 1e-6)


def archive_hypervolume(canonical: np.ndarray, reference: np.ndarray) -> float:
    """HV of the non-dominated subset of `canonical`; Monte Carlo beyond three objectives"""
    if canonical.shape[0] == 0:
        return 0.0
    front = canonical[front_indices(canonical)]
    return hypervolume(front, reference, mc_samples=HV_MC_SAMPLES, seed=0)


class ParetoArchive:
    """Observation history with its current non-dominated subset"""

    def __init__(self, observations: Optional[List[Observation]] = None, store: Optional[ArchiveService] = None):
        self.observations: List[Observation] = []
        self.store = store
        for observation in observations or []:
            self._add(observation)

    def __len__(self) -> int:
        return len(self.observations)

    def _add(self, observation: Observation) -> None:
        if self.observations and observation.iteration <= self.observations[-1].iteration:
            raise ArchiveError(
                f"iteration {observation.iteration} does not follow {self.observations[-1].iteration}"
            )
        self.observations.append(observation)

    def append(self, observation: Observation) -> None:
        self._add(observation)
        if self.store is not None:
            self.store.append(observation)

    @property
    def next_iteration(self) -> int:
        return self.observations[-1].iteration + 1 if self.observations else 0

    def canonical(self) -> np.ndarray:
        if not self.observations:
            return np.zeros((0, 0))
        return np.array([o.canonical() for o in self.observations])

    def weights(self) -> np.ndarray:
        return np.array([o.weights for o in self.observations])

    @property
    def front_indices(self) -> List[int]:
        if not self.observations:
            return []
        return front_indices(self.canonical())

    def front(self) -> List[Observation]:
        return [self.observations[i] for i in self.front_indices]

    def hypervolume(self, reference: Optional[np.ndarray] = None, slack: float = 0.1) -> float:
        if not self.observations:
            return 0.0
        y = self.canonical()
        r = reference_point(y, slack) if reference is None else np.asarray(reference, dtype=float)
        return archive_hypervolume(y, r)


ObservationCallback = Callable[[Observation, ParetoArchive], None]


class MoboEngine:
    """Warm start, then fit → propose → evaluate → archive"""

    def __init__(
        self,
        config: RunConfig,
        evaluator: Evaluator,
        on_observation: Optional[ObservationCallback] = None,
    ):
        self.config = config
        self.evaluator = evaluator
        self.on_observation = on_observation
        lows, highs = config.bounds()
        self.lows = np.asarray(lows, dtype=float)
        self.highs = np.asarray(highs, dtype=float)
        self.span = self.highs - self.lows
        self.dim = int(self.lows.shape[0])
        self.budget = AcquisitionBudget(scan=config.engine.scan, restarts=config.engine.restarts)

    # -- schedule -----------------------------------------------------------

    @property
    def pretrain_count(self) -> int:
        engine = self.config.engine
        return engine.pretrain_epochs if engine.warm_weights is not None else 0

    @property
    def warm_count(self) -> int:
        return self.pretrain_count + self.config.engine.warm_start_count

    @property
    def total_count(self) -> int:
        return self.warm_count + self.config.engine.total_iterations

    def warm_weights(self) -> np.ndarray:
        """The full warm-start schedule, fixed weights first"""
        engine = self.config.engine
        rows = []
        if self.pretrain_count:
            rows.extend([list(engine.warm_weights)] * self.pretrain_count)
        if engine.warm_start_count:
            m = int(np.ceil(np.log2(engine.warm_start_count))) if engine.warm_start_count > 1 else 0
            sampler = Sobol(d=self.dim, scramble=True, seed=derive_seed(engine.seed, 0, STREAM_WARM))
            unit = sampler.random_base2(m=m)[: engine.warm_start_count]
            rows.extend(self.to_weights(unit).tolist())
        return np.array(rows, dtype=float).reshape(-1, self.dim)

    # -- unit-cube mapping --------------------------------------------------

    def to_unit(self, weights: np.ndarray) -> np.ndarray:
        safe = np.where(self.span > 0, self.span, 1.0)
        return np.where(self.span > 0, (np.asarray(weights) - self.lows) / safe, 0.0)

    def to_weights(self, unit: np.ndarray) -> np.ndarray:
        return self.lows + np.clip(unit, 0.0, 1.0) * self.span

    # -- evaluation ---------------------------------------------------------

    def _evaluate(
        self,
        archive: ParetoArchive,
        weights: np.ndarray,
        phase: Phase,
        fit_seconds: float = 0.0,
        propose_seconds: float = 0.0,
        reference: Optional[np.ndarray] = None,
    ) -> Observation:
        iteration = archive.next_iteration
        weight_list = [float(w) for w in weights]
        start = time.perf_counter()
        try:
            raw = np.asarray(self.evaluator.train_and_eval(weight_list), dtype=float)
        except MoboException as e:
            if e.details.get("weights") is None:
                e.details["weights"] = weight_list
            logger.error("Evaluator failed", iteration=iteration, weights=weight_list)
            raise
        except Exception as e:
            logger.error("Evaluator failed", iteration=iteration, weights=weight_list, exc_info=True)
            raise EvaluatorError(f"evaluator raised {type(e).__name__}: {e}", weights=weight_list) from e
        elapsed = time.perf_counter() - start

        if raw.shape != (len(self.config.objectives),) or not np.all(np.isfinite(raw)):
            raise EvaluatorError(f"evaluator returned invalid objectives {raw.tolist()}", weights=weight_list)

        observation = Observation(
            iteration=iteration,
            phase=phase,
            weights=weight_list,
            objectives_raw=[float(v) for v in raw],
            orientation=self.config.orientation,
            eval_wall_seconds=elapsed,
            fit_wall_seconds=fit_seconds,
            propose_wall_seconds=propose_seconds,
            seed=derive_seed(self.config.engine.seed, iteration, STREAM_OBSERVATION),
            reference=None if reference is None else [float(v) for v in reference],
        )
        archive.append(observation)
        logger.info(
            "Observation recorded",
            iteration=iteration,
            phase=phase,
            objectives=observation.objectives_raw,
            eval_seconds=elapsed,
        )
        if self.on_observation is not None:
            self.on_observation(observation, archive)
        return observation

    def warm_start(self, archive: ParetoArchive) -> ParetoArchive:
        """Evaluate the warm-start schedule from where the archive stops"""
        schedule = self.warm_weights()
        if schedule.shape[0] < 2:
            raise ValidationError("warm start must produce at least 2 observations")
        for index in range(archive.next_iteration, schedule.shape[0]):
            self._evaluate(archive, schedule[index], "warm-start")
        return archive

    def fit_models(self, archive: ParetoArchive, iteration: int) -> Tuple[List[GpModel], np.ndarray, np.ndarray]:
        """One GP per objective on the windowed, standardized history"""
        window = self.config.engine.window
        observations = archive.observations[-window:] if window else archive.observations
        x = self.to_unit(np.array([o.weights for o in observations]))
        y = np.array([o.canonical() for o in observations])
        centers, scales, models = [], [], []
        for j in range(y.shape[1]):
            z, center, scale = standardize(y[:, j])
            seed = derive_seed(self.config.engine.seed, iteration, STREAM_GP + j)
            models.append(self._fit_one(x, z, seed, objective=j))
            centers.append(center)
            scales.append(scale)
        return models, np.array(centers), np.array(scales)

    def _fit_one(self, x: np.ndarray, z: np.ndarray, seed: int, objective: int) -> GpModel:
        service = GaussianProcessService(n_starts=self.config.engine.gp_starts)
        try:
            return service.fit(x, z, seed=seed)
        except FittingError as e:
            logger.warning(
                "GP fit failed, retrying with escalated jitter",
                objective=objective,
                condition_number=e.condition_number,
            )
            retry = GaussianProcessService(
                n_starts=self.config.engine.gp_starts,
                jitter_start=RETRY_JITTER_START,
                jitter_max=RETRY_JITTER_MAX,
            )
            return retry.fit(x, z, seed=seed)

    def step(self, archive: ParetoArchive) -> Observation:
        """Fit surrogates, maximize EHVI, evaluate the proposal, archive it"""
        if len(archive) < 2:
            raise ValidationError("a model-guided step needs at least two observations")
        iteration = archive.next_iteration
        engine = self.config.engine

        fit_start = time.perf_counter()
        models, centers, scales = self.fit_models(archive, iteration)
        fit_seconds = time.perf_counter() - fit_start

        propose_start = time.perf_counter()
        canonical = archive.canonical()
        reference = reference_point(canonical, engine.reference_slack)
        front = canonical[front_indices(canonical)]
        ctx = AcquisitionContext(
            models=models,
            front=(front - centers) / scales,
            reference=(reference - centers) / scales,
            mc_samples=engine.mc_samples,
            seed=derive_seed(engine.seed, iteration, STREAM_ACQUISITION),
        )
        proposal: CandidateProposal = propose_next(
            ctx, self.dim, self.budget, seed=derive_seed(engine.seed, iteration, STREAM_SCAN)
        )
        propose_seconds = time.perf_counter() - propose_start
        logger.info(
            "Weights proposed",
            iteration=iteration,
            acquisition=proposal.acquisition_value,
            method=proposal.method,
            exploration=proposal.exploration,
            fit_seconds=fit_seconds,
            propose_seconds=propose_seconds,
        )

        weights = self.to_weights(proposal.weight_vector)
        return self._evaluate(
            archive,
            weights,
            "optimized",
            fit_seconds=fit_seconds,
            propose_seconds=propose_seconds,
            reference=reference,
        )

    def restore(self, archive: ParetoArchive) -> None:
        """Bring a stateful evaluator back to where the archive left it"""
        if not archive.observations:
            return
        validate_sequence(archive.observations)
        expected = derive_seed(self.config.engine.seed, 0, STREAM_OBSERVATION)
        if archive.observations[0].seed != expected:
            raise ArchiveError("archive was produced with a different master seed")
        if len(archive) > self.total_count:
            raise ArchiveError(f"archive holds {len(archive)} observations, run plans {self.total_count}")
        if self.evaluator.stateful:
            logger.info("Replaying evaluator state", observations=len(archive))
            for observation in archive.observations:
                self.evaluator.replay(observation.weights)

    def run(self, archive: Optional[ParetoArchive] = None) -> ParetoArchive:
        """Warm start then model-guided steps, resuming from a partial archive"""
        archive = archive if archive is not None else ParetoArchive()
        self.restore(archive)
        self.warm_start(archive)
        while len(archive) < self.total_count:
            self.step(archive)
        logger.info(
            "Run complete",
            observations=len(archive),
            front_size=len(archive.front_indices),
            hypervolume=archive.hypervolume(slack=self.config.engine.reference_slack),
        )
        return archive


def warm_start(config: RunConfig, evaluator: Evaluator, archive: ParetoArchive) -> ParetoArchive:
    return MoboEngine(config, evaluator).warm_start(archive)


def step(config: RunConfig, evaluator: Evaluator, archive: ParetoArchive) -> Observation:
    return MoboEngine(config, evaluator).step(archive)


def run(config: RunConfig, evaluator: Evaluator, archive: Optional[ParetoArchive] = None) -> ParetoArchive:
    return MoboEngine(config, evaluator).run(archive)


def build_evaluator(config: RunConfig) -> Evaluator:
    """Evaluator for the configured problem"""
    from app.services.problem_service import AnalyticEvaluator, get_problem
    from app.services.restoration_service import RestorationEvaluator

    if config.problem.name == "restoration":
        return RestorationEvaluator(config.problem, config.weight_names, config.objective_names)
    return AnalyticEvaluator(get_problem(config.problem.name, config.problem.dim))
