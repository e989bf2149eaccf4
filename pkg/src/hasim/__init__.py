"""Fluid-model simulator for HTTP adaptive streaming clients on a shared link."""

__version__ = "0.1.0"

from .adaptation import (  # noqa: E402
    DEFAULT_LADDER,
    BitrateLadder,
    ConfigError,
    ConventionalParams,
    PandaParams,
    StabilityWarning,
)
from .client_engine import ClientSpec, SimulationError, StepRecord, ThinParams, run_clients  # noqa: E402
from .fluid_link import BandwidthSchedule, FluidLink, LinkError  # noqa: E402
from .metrics import compute_report  # noqa: E402
from .scenario import ScenarioConfig, load_config, preset, run, serialize  # noqa: E402

__all__ = [
    "BandwidthSchedule", "BitrateLadder", "ClientSpec", "ConfigError", "ConventionalParams",
    "DEFAULT_LADDER", "FluidLink", "LinkError", "PandaParams", "ScenarioConfig",
    "SimulationError", "StabilityWarning", "StepRecord", "ThinParams", "compute_report",
    "load_config", "preset", "run", "run_clients", "serialize",
]
