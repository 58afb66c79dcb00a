"""Request bodies for the HTTP surface."""
from typing import Any, Dict, List, Optional, Union

from pydantic import BaseModel, Field, model_validator

from app.harness.evaluation import ALL_MODES, EvalMode
from app.steering.config import Optimizer

ConfigValue = Union[bool, int, float, str]


class SteerRequest(BaseModel):
    sample: Optional[Dict[str, Any]] = Field(default=None, description="Inline sample in dataset JSON form")
    seed: Optional[int] = Field(default=None, description="Generate the sample from this dataset seed")
    index: int = Field(default=0, ge=0, le=10_000)
    prompt: Optional[Dict[str, Any]] = None
    optimizer: Optimizer = Optimizer.ADAM
    config: Dict[str, ConfigValue] = Field(default_factory=dict)
    debias: bool = False

    @model_validator(mode="after")
    def _one_source(self) -> "SteerRequest":
        if (self.sample is None) == (self.seed is None):
            raise ValueError("provide exactly one of 'sample' or 'seed'")
        return self


class EvalRequest(BaseModel):
    n: int = Field(default=20, ge=1, le=1000)
    seed: int = 0
    modes: List[EvalMode] = Field(default_factory=lambda: list(ALL_MODES))
    gd_config: Dict[str, ConfigValue] = Field(default_factory=dict)
    adam_config: Dict[str, ConfigValue] = Field(default_factory=dict)
    eta: float = 10.0


def flat_entries(values: Dict[str, ConfigValue]) -> Dict[str, str]:
    """JSON config overrides as the string entries a flat config file would hold."""

    return {key: str(value).lower() if isinstance(value, bool) else str(value) for key, value in values.items()}


__all__ = ["EvalRequest", "SteerRequest", "flat_entries"]
