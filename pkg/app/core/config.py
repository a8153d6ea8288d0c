"""
Application settings and run configuration loading
"""

import tomllib
from pathlib import Path
from typing import Union

from pydantic import ValidationError as PydanticValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.core.exceptions import ConfigurationError, NotFoundError
from app.schemas.config import RunConfig


APP_NAME = "mobo-sr"
APP_VERSION = "1.0.0"


class Settings(BaseSettings):
    """Process settings; experiment parameters live in the run config file"""

    LOG_LEVEL: str = "INFO"

    model_config = SettingsConfigDict(
        env_prefix="MOBO_",
        env_file=".env",
        case_sensitive=True,
        extra="ignore",
    )


settings = Settings()


DEFAULT_CONFIG_TEMPLATE = """\
# mobo-sr run configuration
#
# Sections are flat key = value tables. Unknown keys are rejected.

[problem]
# Black box to optimize: "restoration", "zdt1", "zdt2", "zdt3" or "toy_tradeoff".
name = "restoration"
# "stateful" keeps training one restorer across evaluations; "fresh" retrains
# from the identity filter on every evaluation.
mode = "stateful"
# Procedural dataset; never stored, regenerated from these values.
dataset_seed = 7
image_count = 10
image_size = 32
scale = 2
# Odd filter width of the linear restorer.
filter_size = 5
learning_rate = 0.05
# Gradient-descent steps per evaluation.
steps_per_eval = 20

[objectives]
# Ordered objectives with their orientation (psnr, ssim, lr_psnr, hf_proxy).
psnr = "maximize"
hf_proxy = "minimize"

# One table per enabled loss term: l1, l2, fft, gradient, cycle, ssim.
[weights.l1]
low = 0.0
high = 1.0

[weights.l2]
low = 0.0
high = 1.0

[weights.fft]
low = 0.0
high = 0.05

[weights.gradient]
low = 0.0
high = 0.5

[weights.cycle]
low = 0.0
high = 1.0

[weights.ssim]
low = 0.0
high = 1.0

[engine]
# Quasi-random weight vectors evaluated before model-guided proposals.
warm_start_count = 8
# Optional fixed warm weights (one per loss term) driven pretrain_epochs times first.
# warm_weights = [0.01, 0.01, 0.0, 0.0, 0.0, 1.0]
pretrain_epochs = 0
total_iterations = 40
# Monte Carlo draws for EHVI when there are more than two objectives.
mc_samples = 128
# Sobol scan size and number of pattern-search restarts for the acquisition.
scan = 512
restarts = 4
# Fit surrogates on the most recent observations only (0 = all history).
window = 0
# Reference point = per-objective minimum minus this fraction of the range.
reference_slack = 0.1
gp_starts = 5
seed = 0
"""


def render_default_config() -> str:
    """Return the commented default configuration file"""
    return DEFAULT_CONFIG_TEMPLATE


def parse_run_config(text: str, source: str = "<string>") -> RunConfig:
    """Parse TOML text into a validated RunConfig"""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(f"{source}: {e}")

    try:
        return RunConfig.model_validate(data)
    except PydanticValidationError as e:
        errors = [
            {"loc": ".".join(str(part) for part in err["loc"]), "msg": err["msg"]}
            for err in e.errors()
        ]
        raise ConfigurationError(f"{source}: invalid configuration", details={"errors": errors})


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """Load and validate a run configuration file"""
    path = Path(path)
    if not path.is_file():
        raise NotFoundError("Config file", str(path))
    return parse_run_config(path.read_text(encoding="utf-8"), source=str(path))
