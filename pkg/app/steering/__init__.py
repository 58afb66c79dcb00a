"""Visual prompts, attention energies and the test-time steering loops."""
from app.steering.config import (
    AggregationMode,
    AggregationSpec,
    EarlyStopConfig,
    EnergyMode,
    Optimizer,
    SteeringConfig,
)
from app.steering.energy import (
    EnergyTarget,
    EnergyValue,
    aggregate,
    build_target,
    energy_gradient,
    hard_energy,
    soft_energy,
)
from app.steering.optimizers import (
    AdamState,
    LatentModifier,
    SteeringResult,
    SteeringTrace,
    StopReason,
    adam_update,
    steer,
    steer_adam,
    steer_gd,
)

__all__ = [
    "AggregationMode",
    "AggregationSpec",
    "EarlyStopConfig",
    "EnergyMode",
    "Optimizer",
    "SteeringConfig",
    "EnergyTarget",
    "EnergyValue",
    "aggregate",
    "build_target",
    "energy_gradient",
    "hard_energy",
    "soft_energy",
    "AdamState",
    "LatentModifier",
    "SteeringResult",
    "SteeringTrace",
    "StopReason",
    "adam_update",
    "steer",
    "steer_adam",
    "steer_gd",
]
