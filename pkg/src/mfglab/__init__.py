"""Numerical laboratory for LQ and growth mean field games with common noise."""

from mfglab.model_core import LIMIT, LqParams, NoiseBundle, TimeGrid, make_noise

__version__ = "0.1.0"

__all__ = ["LIMIT", "LqParams", "NoiseBundle", "TimeGrid", "make_noise", "__version__"]
