"""
Restoration bench schemas
"""

from typing import List, Sequence

from pydantic import BaseModel, ConfigDict, Field


class MetricVector(BaseModel):
    """Validation-set image quality of one restorer"""
    model_config = ConfigDict(frozen=True)

    psnr: float
    ssim: float = Field(ge=-1.0, le=1.0)
    lr_psnr: float
    hf_proxy: float = Field(ge=0.0)  # lower is better

    def select(self, names: Sequence[str]) -> List[float]:
        """Values of the named metrics, in the given order"""
        return [float(getattr(self, name)) for name in names]
