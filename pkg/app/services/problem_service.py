"""
Analytic multi-objective test problems
"""

from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence

import numpy as np

from app.core.exceptions import NotFoundError, ValidationError
from app.services.pareto_service import decanonicalize


def _check_unit_cube(x: Sequence[float], min_dim: int = 1) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] < min_dim:
        raise ValidationError(f"input needs at least {min_dim} coordinates")
    if not np.all(np.isfinite(x)) or np.any(x < 0.0) or np.any(x > 1.0):
        raise ValidationError("input outside the unit cube", details={"x": x.tolist()})
    return x


def _zdt_g(x: np.ndarray) -> float:
    return 1.0 + 9.0 * float(np.mean(x[1:]))


def zdt1(x: Sequence[float]) -> np.ndarray:
    """ZDT1 in maximize orientation: returns (−f1, −f2)"""
    x = _check_unit_cube(x, min_dim=2)
    f1 = x[0]
    g = _zdt_g(x)
    f2 = g * (1.0 - np.sqrt(f1 / g))
    return -np.array([f1, f2])


def zdt2(x: Sequence[float]) -> np.ndarray:
    """ZDT2 (concave front) in maximize orientation"""
    x = _check_unit_cube(x, min_dim=2)
    f1 = x[0]
    g = _zdt_g(x)
    f2 = g * (1.0 - (f1 / g) ** 2)
    return -np.array([f1, f2])


def zdt3(x: Sequence[float]) -> np.ndarray:
    """ZDT3 (disconnected front) in maximize orientation"""
    x = _check_unit_cube(x, min_dim=2)
    f1 = x[0]
    g = _zdt_g(x)
    h = 1.0 - np.sqrt(f1 / g) - (f1 / g) * np.sin(10.0 * np.pi * f1)
    return -np.array([f1, g * h])


def toy_tradeoff(x: Sequence[float]) -> np.ndarray:
    """(x, 1 − x²), both maximized: every input is Pareto optimal"""
    x = _check_unit_cube(x, min_dim=1)
    if x.shape[0] != 1:
        raise ValidationError("toy_tradeoff takes a single input")
    return np.array([x[0], 1.0 - x[0] ** 2])


def _zdt_front(shape: Callable[[np.ndarray], np.ndarray]) -> Callable[[int], np.ndarray]:
    def sample(n: int) -> np.ndarray:
        f1 = np.linspace(0.0, 1.0, n)
        return -np.column_stack([f1, shape(f1)])
    return sample


def _zdt3_front(n: int) -> np.ndarray:
    f1 = np.linspace(0.0, 1.0, max(n, 2) * 20)
    f2 = 1.0 - np.sqrt(f1) - f1 * np.sin(10.0 * np.pi * f1)
    points = -np.column_stack([f1, f2])
    # the disconnected front is the non-dominated part of the g = 1 curve
    keep = np.ones(points.shape[0], dtype=bool)
    for i, p in enumerate(points):
        keep[i] = not np.any(np.all(points >= p, axis=1) & np.any(points > p, axis=1))
    front = points[keep]
    pick = np.linspace(0, front.shape[0] - 1, min(n, front.shape[0])).round().astype(int)
    return front[pick]


@dataclass(frozen=True)
class AnalyticProblem:
    """A closed-form black box over the unit cube, canonical (maximize) output"""
    name: str
    dim: int
    n_objectives: int
    objective: Callable[[Sequence[float]], np.ndarray]
    orientation: List[str]
    true_front: Callable[[int], np.ndarray]

    def evaluate(self, x: Sequence[float]) -> np.ndarray:
        x = np.asarray(x, dtype=float).ravel()
        if x.shape[0] != self.dim:
            raise ValidationError(f"{self.name} expects {self.dim} inputs, got {x.shape[0]}")
        return self.objective(x)

    def evaluate_raw(self, x: Sequence[float]) -> np.ndarray:
        """Objectives in their natural orientation"""
        return decanonicalize(self.evaluate(x), self.orientation)


def get_problem(name: str, dim: int) -> AnalyticProblem:
    """Look up an analytic problem by configuration name"""
    builders: Dict[str, Callable[[], AnalyticProblem]] = {
        "zdt1": lambda: AnalyticProblem(
            "zdt1", dim, 2, zdt1, ["minimize", "minimize"], _zdt_front(lambda f: 1.0 - np.sqrt(f))
        ),
        "zdt2": lambda: AnalyticProblem(
            "zdt2", dim, 2, zdt2, ["minimize", "minimize"], _zdt_front(lambda f: 1.0 - f ** 2)
        ),
        "zdt3": lambda: AnalyticProblem(
            "zdt3", dim, 2, zdt3, ["minimize", "minimize"], _zdt3_front
        ),
        "toy_tradeoff": lambda: AnalyticProblem(
            "toy_tradeoff",
            1,
            2,
            toy_tradeoff,
            ["maximize", "maximize"],
            lambda n: np.column_stack([np.linspace(0, 1, n), 1.0 - np.linspace(0, 1, n) ** 2]),
        ),
    }
    if name not in builders:
        raise NotFoundError("Problem", name)
    problem = builders[name]()
    if name.startswith("zdt") and dim < 2:
        raise ValidationError(f"{name} needs at least two inputs")
    return problem


class AnalyticEvaluator:
    """Evaluator adapter: weight vector = problem input, returns raw objectives"""

    stateful = False

    def __init__(self, problem: AnalyticProblem):
        self.problem = problem

    def train_and_eval(self, weights: Sequence[float]) -> np.ndarray:
        return self.problem.evaluate_raw(weights)

    def replay(self, weights: Sequence[float]) -> None:
        return None
