"""Feedback-capacity lower bounds and recursive coding for parallel ACGN channels."""

from importlib.metadata import PackageNotFoundError, version

from .capacity import (Allocation, CapacityResult, ChannelDesign, build_design, scalar_bound,
                       solve, solve_general, solve_independent, waterfill)
from .coding import (CodingScheme, SimulationReport, VerificationRecord, simulate, spectral_rate,
                     synthesize, verify_design)
from .noise import ArmaNoiseModel, InvalidNoiseModel, validate

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # pragma: no cover
    __version__ = "0.0.0"

__all__ = [
    "Allocation", "CapacityResult", "ChannelDesign", "build_design", "scalar_bound", "solve",
    "solve_general", "solve_independent", "waterfill", "CodingScheme", "SimulationReport",
    "VerificationRecord", "simulate", "spectral_rate", "synthesize", "verify_design",
    "ArmaNoiseModel", "InvalidNoiseModel", "validate", "__version__",
]
