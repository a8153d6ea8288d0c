"""
Run configuration schemas
"""

from typing import Dict, List, Literal, Optional, Tuple
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


Orientation = Literal["maximize", "minimize"]
LossKind = Literal["l1", "l2", "fft", "gradient", "cycle", "ssim"]
ProblemName = Literal["restoration", "zdt1", "zdt2", "zdt3", "toy_tradeoff"]

LOSS_KINDS: Tuple[str, ...] = ("l1", "l2", "fft", "gradient", "cycle", "ssim")
METRIC_NAMES: Tuple[str, ...] = ("psnr", "ssim", "lr_psnr", "hf_proxy")

# Input dimension and objective orientation of the analytic problems
ANALYTIC_DEFAULT_DIM: Dict[str, int] = {"zdt1": 6, "zdt2": 6, "zdt3": 6, "toy_tradeoff": 1}
ANALYTIC_OBJECTIVES: Dict[str, Dict[str, str]] = {
    "zdt1": {"f1": "minimize", "f2": "minimize"},
    "zdt2": {"f1": "minimize", "f2": "minimize"},
    "zdt3": {"f1": "minimize", "f2": "minimize"},
    "toy_tradeoff": {"f1": "maximize", "f2": "maximize"},
}

DEFAULT_OBJECTIVES: Dict[str, str] = {"psnr": "maximize", "hf_proxy": "minimize"}


class ProblemSection(BaseModel):
    """Black-box problem selection and restoration bench parameters"""
    model_config = ConfigDict(extra="forbid")

    name: ProblemName = "restoration"
    dim: Optional[int] = Field(default=None, ge=1)
    mode: Literal["stateful", "fresh"] = "stateful"
    dataset_seed: int = 7
    image_count: int = Field(default=10, ge=2)
    image_size: int = Field(default=32, ge=8)
    scale: int = Field(default=2, ge=1)
    filter_size: int = Field(default=5, ge=1)
    learning_rate: float = Field(default=0.05, gt=0)
    steps_per_eval: int = Field(default=20, ge=1)

    @field_validator("filter_size")
    @classmethod
    def check_filter_size(cls, v: int) -> int:
        if v % 2 == 0:
            raise ValueError("filter_size must be odd")
        if v * v + 1 > 128:
            raise ValueError("filter_size too large: k*k + 1 must not exceed 128")
        return v

    @model_validator(mode="after")
    def check_geometry(self) -> "ProblemSection":
        if self.image_size % self.scale != 0:
            raise ValueError("image_size must be divisible by scale")
        if self.image_size // self.scale < 8:
            raise ValueError("low-resolution images must be at least 8 pixels wide")
        return self


class WeightBound(BaseModel):
    """Search bounds for one loss weight (or one analytic input)"""
    model_config = ConfigDict(extra="forbid")

    low: float = Field(default=0.0, ge=0.0)
    high: float = Field(default=1.0, ge=0.0)

    @model_validator(mode="after")
    def check_order(self) -> "WeightBound":
        if self.high < self.low:
            raise ValueError("high must be >= low")
        return self


class EngineSection(BaseModel):
    """Optimization loop parameters"""
    model_config = ConfigDict(extra="forbid")

    warm_start_count: int = Field(default=8, ge=0)
    warm_weights: Optional[List[float]] = None
    pretrain_epochs: int = Field(default=0, ge=0)
    total_iterations: int = Field(default=40, ge=0)
    mc_samples: int = Field(default=128, ge=1)
    scan: int = Field(default=512, ge=1)
    restarts: int = Field(default=4, ge=1)
    window: int = Field(default=0, ge=0)
    reference_slack: float = Field(default=0.1, ge=0.0)
    gp_starts: int = Field(default=5, ge=5)
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def check_warm_start(self) -> "EngineSection":
        fixed = self.pretrain_epochs if self.warm_weights is not None else 0
        if self.warm_start_count + fixed < 2:
            raise ValueError("warm start must produce at least 2 observations")
        if self.window == 1:
            raise ValueError("window must be 0 (all history) or at least 2")
        return self


def _default_weights() -> Dict[str, WeightBound]:
    return {
        "l1": WeightBound(low=0.0, high=1.0),
        "l2": WeightBound(low=0.0, high=1.0),
        "fft": WeightBound(low=0.0, high=0.05),
        "gradient": WeightBound(low=0.0, high=0.5),
        "cycle": WeightBound(low=0.0, high=1.0),
        "ssim": WeightBound(low=0.0, high=1.0),
    }


class RunConfig(BaseModel):
    """Complete description of one optimization run"""
    model_config = ConfigDict(extra="forbid")

    problem: ProblemSection = Field(default_factory=ProblemSection)
    objectives: Optional[Dict[str, Orientation]] = None
    weights: Optional[Dict[str, WeightBound]] = None
    engine: EngineSection = Field(default_factory=EngineSection)

    @model_validator(mode="after")
    def resolve_problem(self) -> "RunConfig":
        if self.problem.name == "restoration":
            self._resolve_restoration()
        else:
            self._resolve_analytic()

        if len(self.objectives) < 2:
            raise ValueError("at least two objectives are required")

        warm = self.engine.warm_weights
        if warm is not None:
            if len(warm) != len(self.weights):
                raise ValueError(
                    f"warm_weights has {len(warm)} entries, expected {len(self.weights)}"
                )
            for (name, bound), value in zip(self.weights.items(), warm):
                if not bound.low <= value <= bound.high:
                    raise ValueError(f"warm weight for {name} outside [{bound.low}, {bound.high}]")
        return self

    def _resolve_restoration(self) -> None:
        if self.objectives is None:
            self.objectives = dict(DEFAULT_OBJECTIVES)
        unknown = [name for name in self.objectives if name not in METRIC_NAMES]
        if unknown:
            raise ValueError(f"unknown restoration objectives: {unknown}")

        if self.weights is None:
            self.weights = _default_weights()
        unknown = [name for name in self.weights if name not in LOSS_KINDS]
        if unknown:
            raise ValueError(f"unknown loss terms: {unknown}")
        if not self.weights:
            raise ValueError("at least one loss term must be enabled")

    def _resolve_analytic(self) -> None:
        name = self.problem.name
        if self.problem.dim is None:
            self.problem.dim = ANALYTIC_DEFAULT_DIM[name]
        dim = self.problem.dim
        if name.startswith("zdt") and dim < 2:
            raise ValueError(f"{name} needs dim >= 2")
        if name == "toy_tradeoff" and dim != 1:
            raise ValueError("toy_tradeoff has exactly one input")

        expected = ANALYTIC_OBJECTIVES[name]
        if self.objectives is None:
            self.objectives = dict(expected)
        elif dict(self.objectives) != expected:
            raise ValueError(f"{name} objectives are fixed to {expected}")

        names = [f"x{i + 1}" for i in range(dim)]
        if self.weights is None:
            self.weights = {n: WeightBound() for n in names}
        if list(self.weights) != names:
            raise ValueError(f"{name} weights must be named {names}")
        for bound in self.weights.values():
            if bound.high > 1.0:
                raise ValueError("analytic inputs must stay within the unit cube")

    @property
    def weight_names(self) -> List[str]:
        return list(self.weights)

    @property
    def objective_names(self) -> List[str]:
        return list(self.objectives)

    @property
    def orientation(self) -> List[str]:
        return list(self.objectives.values())

    def bounds(self) -> Tuple[List[float], List[float]]:
        """Lower and upper weight bounds in configuration order"""
        lows = [b.low for b in self.weights.values()]
        highs = [b.high for b in self.weights.values()]
        return lows, highs
