"""
Pareto listings, timing traces and hypervolume traces computed from an archive
"""

import csv
import io
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import structlog
from scipy.stats import spearmanr

from app.schemas.observation import Observation
from app.services.archive_service import ArchiveService
from app.services.engine_service import archive_hypervolume, reference_point
from app.services.pareto_service import front_indices
from app.services.problem_service import AnalyticProblem

logger = structlog.get_logger(__name__)

PARETO_CSV_DOC = "iteration, one column per weight (w_<i>), one column per objective (obj_<j>); raw units"
TIMING_CSV_DOC = (
    "iteration, phase, eval_seconds, fit_seconds, propose_seconds, "
    "cumulative_eval_seconds, cumulative_bo_seconds"
)
HV_CSV_DOC = "iteration, hypervolume (final reference point, canonical orientation)"


@dataclass
class TimingRow:
    iteration: int
    phase: str
    eval_seconds: float
    fit_seconds: float
    propose_seconds: float
    cumulative_eval_seconds: float
    cumulative_bo_seconds: float


@dataclass
class ArchiveReport:
    """Everything `report` prints, in one place"""
    observations: List[Observation]
    errors: List[Tuple[int, str]] = field(default_factory=list)
    timing: List[TimingRow] = field(default_factory=list)
    hypervolume: List[Tuple[int, float]] = field(default_factory=list)
    reference: Optional[List[float]] = None
    fit_rank_correlation: Optional[float] = None
    true_front_gap: Optional[float] = None

    @property
    def total_eval_seconds(self) -> float:
        return self.timing[-1].cumulative_eval_seconds if self.timing else 0.0

    @property
    def total_bo_seconds(self) -> float:
        return self.timing[-1].cumulative_bo_seconds if self.timing else 0.0

    @property
    def time_ratio(self) -> Optional[float]:
        """Cumulative evaluator time over cumulative fit + propose time"""
        if self.total_bo_seconds <= 0.0:
            return None
        return self.total_eval_seconds / self.total_bo_seconds


def pareto_front(observations: Sequence[Observation]) -> List[Observation]:
    """Non-dominated observations sorted by first raw objective, descending"""
    if not observations:
        return []
    canonical = np.array([o.canonical() for o in observations])
    front = [observations[i] for i in front_indices(canonical)]
    return sorted(front, key=lambda o: (-o.objectives_raw[0], o.iteration))


def pareto_csv(observations: Sequence[Observation]) -> str:
    """CSV rows of `observations`: 1 + d + M columns"""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    if observations:
        d = len(observations[0].weights)
        m = len(observations[0].objectives_raw)
        writer.writerow(["iteration"] + [f"w_{i}" for i in range(d)] + [f"obj_{j}" for j in range(m)])
        for o in observations:
            writer.writerow([o.iteration] + [repr(w) for w in o.weights] + [repr(v) for v in o.objectives_raw])
    return buffer.getvalue()


def timing_trace(observations: Sequence[Observation]) -> List[TimingRow]:
    rows = []
    cumulative_eval = 0.0
    cumulative_bo = 0.0
    for o in observations:
        cumulative_eval += o.eval_wall_seconds
        cumulative_bo += o.fit_wall_seconds + o.propose_wall_seconds
        rows.append(
            TimingRow(
                iteration=o.iteration,
                phase=o.phase,
                eval_seconds=o.eval_wall_seconds,
                fit_seconds=o.fit_wall_seconds,
                propose_seconds=o.propose_wall_seconds,
                cumulative_eval_seconds=cumulative_eval,
                cumulative_bo_seconds=cumulative_bo,
            )
        )
    return rows


def hypervolume_trace(
    observations: Sequence[Observation], slack: float = 0.1
) -> Tuple[List[Tuple[int, float]], Optional[np.ndarray]]:
    """HV of every archive prefix against the reference point of the full archive"""
    if not observations:
        return [], None
    canonical = np.array([o.canonical() for o in observations])
    reference = reference_point(canonical, slack)
    trace = [
        (o.iteration, archive_hypervolume(canonical[: k + 1], reference))
        for k, o in enumerate(observations)
    ]
    return trace, reference


def true_front_gap(
    observations: Sequence[Observation], problem: AnalyticProblem, reference: np.ndarray, samples: int = 200
) -> Optional[float]:
    """HV of a dense true-front sample minus the archive HV, both against `reference`

    Only true-front points that dominate the reference count; None if none do.
    """
    if not observations:
        return None
    sample = problem.true_front(samples)
    sample = sample[np.all(sample > reference, axis=1)]
    if sample.shape[0] == 0:
        return None
    canonical = np.array([o.canonical() for o in observations])
    return archive_hypervolume(sample, reference) - archive_hypervolume(canonical, reference)


def spearman(x: Sequence[float], y: Sequence[float]) -> Optional[float]:
    """Rank correlation; None when either series is constant or too short"""
    if len(x) < 3 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return None
    return float(spearmanr(x, y)[0])


def build_report(
    archive: ArchiveService, slack: float = 0.1, problem: Optional[AnalyticProblem] = None
) -> ArchiveReport:
    """Read an archive tolerantly and compute every report section"""
    result = archive.read()
    observations = result.observations
    report = ArchiveReport(observations=observations, errors=result.errors)
    report.timing = timing_trace(observations)
    report.hypervolume, reference = hypervolume_trace(observations, slack)
    report.reference = None if reference is None else reference.tolist()
    if problem is not None and reference is not None:
        report.true_front_gap = true_front_gap(observations, problem, reference)

    optimized = [o for o in observations if o.phase == "optimized"]
    report.fit_rank_correlation = spearman(
        [o.iteration for o in optimized], [o.fit_wall_seconds for o in optimized]
    )
    logger.info(
        "Report built",
        observations=len(observations),
        errors=len(result.errors),
        time_ratio=report.time_ratio,
    )
    return report


def timing_csv(rows: Sequence[TimingRow]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(
        [
            "iteration",
            "phase",
            "eval_seconds",
            "fit_seconds",
            "propose_seconds",
            "cumulative_eval_seconds",
            "cumulative_bo_seconds",
        ]
    )
    for r in rows:
        writer.writerow(
            [
                r.iteration,
                r.phase,
                repr(r.eval_seconds),
                repr(r.fit_seconds),
                repr(r.propose_seconds),
                repr(r.cumulative_eval_seconds),
                repr(r.cumulative_bo_seconds),
            ]
        )
    return buffer.getvalue()


def hypervolume_csv(trace: Sequence[Tuple[int, float]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["iteration", "hypervolume"])
    for iteration, value in trace:
        writer.writerow([iteration, repr(value)])
    return buffer.getvalue()
