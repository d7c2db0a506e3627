"""Forward and inverse scattering for one-dimensional structures with coupled modes."""

from .core import Layer, ModeSet
from .errors import ConfigError, IngestionError, MMStripError, NumericalError
from .forward import SpectrumGrid, WindowFn, simulate_coupled, simulate_reflection
from .inverse import InverseConfig, Situation, layer_strip

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "IngestionError",
    "InverseConfig",
    "Layer",
    "MMStripError",
    "ModeSet",
    "NumericalError",
    "Situation",
    "SpectrumGrid",
    "WindowFn",
    "layer_strip",
    "simulate_coupled",
    "simulate_reflection",
]
