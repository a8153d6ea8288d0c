"""
Expected Improvement / Expected Hypervolume Improvement and their maximization
over the unit cube
"""

from dataclasses import dataclass
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
import structlog
from scipy.stats import norm
from scipy.stats.qmc import Sobol

from app.core.exceptions import ValidationError
from app.services.gp_service import GpModel
from app.services.pareto_service import extract_front, single_point_improvements

logger = structlog.get_logger(__name__)

Method = Literal["exact-2d", "monte-carlo"]


@dataclass(frozen=True)
class AcquisitionContext:
    """Everything the acquisition needs, in standardized objective units"""
    models: List[GpModel]
    front: np.ndarray
    reference: np.ndarray
    mc_samples: int = 128
    seed: int = 0

    def __post_init__(self) -> None:
        front = np.atleast_2d(np.asarray(self.front, dtype=float))
        reference = np.asarray(self.reference, dtype=float)
        if len(self.models) != reference.shape[0]:
            raise ValidationError("one model per objective is required")
        if front.size and front.shape[1] != reference.shape[0]:
            raise ValidationError("front dimension does not match the reference point")
        if front.size and not np.all(front > reference):
            raise ValidationError("reference point must be strictly dominated by the front")
        if front.size:
            front = extract_front(front)
        else:
            front = front.reshape(0, reference.shape[0])
        object.__setattr__(self, "front", front)
        object.__setattr__(self, "reference", reference)

    @property
    def n_objectives(self) -> int:
        return int(self.reference.shape[0])

    def posterior(self, inputs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Stacked (n, M) posterior means and standard deviations"""
        means, stds = [], []
        for model in self.models:
            mean, variance = model.posterior(inputs)
            means.append(mean)
            stds.append(np.sqrt(variance))
        return np.stack(means, axis=1), np.stack(stds, axis=1)


@dataclass(frozen=True)
class AcquisitionBudget:
    scan: int = 512
    restarts: int = 4
    initial_step: float = 0.1
    min_step: float = 1e-4
    max_polls: int = 200


@dataclass(frozen=True)
class CandidateProposal:
    weight_vector: np.ndarray
    acquisition_value: float
    method: Method
    exploration: bool = False


def _improvement(mean: np.ndarray, std: np.ndarray, threshold: np.ndarray) -> np.ndarray:
    """E[max(0, Y − threshold)] for Y ~ N(mean, std²), elementwise"""
    mean, std, threshold = np.broadcast_arrays(
        np.asarray(mean, dtype=float), np.asarray(std, dtype=float), np.asarray(threshold, dtype=float)
    )
    out = np.maximum(mean - threshold, 0.0)
    positive = std > 0
    if np.any(positive):
        gap = mean[positive] - threshold[positive]
        z = gap / std[positive]
        value = std[positive] * norm.pdf(z) + gap * norm.cdf(z)
        out = out.copy()
        out[positive] = np.maximum(value, 0.0)
    return out


def expected_improvement(model: GpModel, x: Sequence[float], best: float) -> float:
    """Closed-form EI of one model at x against the incumbent `best` (maximization)"""
    mean, variance = model.posterior(np.asarray(x, dtype=float)[None, :])
    return float(_improvement(mean, np.sqrt(variance), best)[0])


def _ehvi_2d_from_moments(
    mean: np.ndarray,
    std: np.ndarray,
    front: np.ndarray,
    reference: np.ndarray,
) -> np.ndarray:
    """Exact bi-objective EHVI for independent Gaussians, vectorized over rows

    The improvement region is cut into vertical strips at the sorted front's first
    coordinates; in strip i the front covers the second objective up to h_i, so
    EHVI = Σ_i (ψ1(a_i) − ψ1(a_{i+1})) · ψ2(h_i) with ψ(t) = E[(Y − t)⁺].
    """
    if front.shape[0]:
        order = np.argsort(front[:, 0], kind="stable")
        sorted_front = front[order]
        edges = np.concatenate([[reference[0]], sorted_front[:, 0], [np.inf]])
        heights = np.concatenate([sorted_front[:, 1], [reference[1]]])
    else:
        edges = np.array([reference[0], np.inf])
        heights = np.array([reference[1]])

    m1, s1 = mean[:, 0:1], std[:, 0:1]
    m2, s2 = mean[:, 1:2], std[:, 1:2]
    psi_lower = _improvement(m1, s1, edges[None, :-1])
    upper_edges = edges[1:]
    finite = np.isfinite(upper_edges)
    psi_upper = np.zeros_like(psi_lower)
    psi_upper[:, finite] = _improvement(m1, s1, upper_edges[finite][None, :])
    width = np.maximum(psi_lower - psi_upper, 0.0)
    depth = _improvement(m2, s2, heights[None, :])
    return np.maximum(np.sum(width * depth, axis=1), 0.0)


def ehvi_exact_2d(ctx: AcquisitionContext, x: Sequence[float]) -> float:
    """Exact EHVI at x for two objectives"""
    if ctx.n_objectives != 2:
        raise ValidationError("exact EHVI is only available for two objectives")
    mean, std = ctx.posterior(np.asarray(x, dtype=float)[None, :])
    return float(_ehvi_2d_from_moments(mean, std, ctx.front, ctx.reference)[0])


def _normal_draws(ctx: AcquisitionContext) -> np.ndarray:
    if ctx.mc_samples <= 0:
        raise ValidationError("mc_samples must be positive")
    rng = np.random.default_rng(ctx.seed)
    return rng.standard_normal((ctx.mc_samples, ctx.n_objectives))


def _ehvi_mc_from_moments(
    mean: np.ndarray,
    std: np.ndarray,
    ctx: AcquisitionContext,
    draws: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    estimates = np.empty(mean.shape[0])
    errors = np.empty(mean.shape[0])
    for i in range(mean.shape[0]):
        samples = mean[i] + std[i] * draws
        gains = single_point_improvements(samples, ctx.front, ctx.reference, seed=ctx.seed)
        estimates[i] = gains.mean()
        errors[i] = gains.std(ddof=1) / np.sqrt(gains.shape[0]) if gains.shape[0] > 1 else 0.0
    return estimates, errors


def ehvi_monte_carlo(ctx: AcquisitionContext, x: Sequence[float]) -> Tuple[float, float]:
    """Monte Carlo EHVI at x: (estimate, standard error)"""
    draws = _normal_draws(ctx)
    mean, std = ctx.posterior(np.asarray(x, dtype=float)[None, :])
    estimates, errors = _ehvi_mc_from_moments(mean, std, ctx, draws)
    return float(estimates[0]), float(errors[0])


class AcquisitionService:
    """Maximizes EHVI over the unit cube: Sobol scan, then pattern-search refinement"""

    def __init__(self, ctx: AcquisitionContext, budget: Optional[AcquisitionBudget] = None):
        self.ctx = ctx
        self.budget = budget or AcquisitionBudget()
        self.method: Method = "exact-2d" if ctx.n_objectives == 2 else "monte-carlo"
        self._draws = _normal_draws(ctx) if self.method == "monte-carlo" else None

    def evaluate(self, inputs: np.ndarray) -> np.ndarray:
        """Acquisition values at the rows of `inputs`"""
        x = np.atleast_2d(inputs)
        mean, std = self.ctx.posterior(x)
        if self.method == "exact-2d":
            return _ehvi_2d_from_moments(mean, std, self.ctx.front, self.ctx.reference)
        estimates, _ = _ehvi_mc_from_moments(mean, std, self.ctx, self._draws)
        return estimates

    def propose_next(self, dim: int, seed: int) -> CandidateProposal:
        scan = self._scan_points(dim, seed)
        values = self.evaluate(scan)

        if not np.any(values > 0.0):
            _, std = self.ctx.posterior(scan)
            spread = np.sum(std ** 2, axis=1)
            best = _argmax_lexicographic(scan, spread)
            logger.info("acquisition flat, exploring", variance_sum=float(spread[best]))
            return CandidateProposal(
                weight_vector=scan[best].copy(),
                acquisition_value=0.0,
                method=self.method,
                exploration=True,
            )

        candidates: List[np.ndarray] = [scan]
        candidate_values: List[np.ndarray] = [values]
        for index in self._restart_indices(scan, values):
            point, value = self._pattern_search(scan[index], float(values[index]))
            candidates.append(point[None, :])
            candidate_values.append(np.array([value]))

        pool = np.vstack(candidates)
        pool_values = np.concatenate(candidate_values)
        best = _argmax_lexicographic(pool, pool_values)
        return CandidateProposal(
            weight_vector=pool[best].copy(),
            acquisition_value=float(pool_values[best]),
            method=self.method,
        )

    def _scan_points(self, dim: int, seed: int) -> np.ndarray:
        m = max(0, int(np.ceil(np.log2(self.budget.scan))))
        sampler = Sobol(d=dim, scramble=True, seed=seed)
        return sampler.random_base2(m=m)

    def _restart_indices(self, scan: np.ndarray, values: np.ndarray) -> List[int]:
        # highest value first, lexicographic coordinates break ties
        keys = [scan[:, j] for j in reversed(range(scan.shape[1]))] + [-values]
        order = np.lexsort(keys)
        return [int(i) for i in order[: self.budget.restarts]]

    def _pattern_search(self, start: np.ndarray, value: float) -> Tuple[np.ndarray, float]:
        """Compass search with step halving, confined to the unit cube"""
        dim = start.shape[0]
        point = start.copy()
        step = self.budget.initial_step
        directions = np.vstack([np.eye(dim), -np.eye(dim)])
        polls = 0
        while step >= self.budget.min_step and polls < self.budget.max_polls:
            trial = np.clip(point + step * directions, 0.0, 1.0)
            trial_values = self.evaluate(trial)
            polls += 1
            best = _argmax_lexicographic(trial, trial_values)
            if trial_values[best] > value:
                point, value = trial[best], float(trial_values[best])
            else:
                step *= 0.5
        return point, value


def _argmax_lexicographic(points: np.ndarray, values: np.ndarray) -> int:
    """Index of the maximal value; ties go to the lexicographically smallest point"""
    top = np.max(values)
    tied = np.flatnonzero(values == top)
    if tied.shape[0] == 1:
        return int(tied[0])
    subset = points[tied]
    order = np.lexsort([subset[:, j] for j in reversed(range(subset.shape[1]))])
    return int(tied[order[0]])


def propose_next(
    ctx: AcquisitionContext,
    dim: int,
    budget: Optional[AcquisitionBudget] = None,
    seed: int = 0,
) -> CandidateProposal:
    """argmax of EHVI over the unit cube; deterministic given `seed`"""
    return AcquisitionService(ctx, budget).propose_next(dim, seed)
