"""Calibrated discrete-time simulator of battery-exhaustion attacks on mobile devices."""

from .core import (
    DRAIN_PCT,
    BatteryState,
    ComponentSpec,
    DeviceProfile,
    PowerModel,
    drain_time_from_rate,
    rate_from_drain_time,
    validate,
)
from .errors import (
    CalibrationError,
    DrainSimError,
    InfeasiblePlan,
    InvalidArgument,
    StealthNotConfigured,
    UnsupportedGoal,
    ValidationError,
)

__version__ = "0.1.0"
