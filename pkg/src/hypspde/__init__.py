"""Simulation and local-measurement inference for damped second-order SPDEs."""
from ._backend import BACKEND
from .model import ModelSpec, ModeSymbol, mode_symbols, preset, validate_parameters

__version__ = "0.1.0"

__all__ = ["BACKEND", "ModelSpec", "ModeSymbol", "mode_symbols", "preset", "validate_parameters", "__version__"]
