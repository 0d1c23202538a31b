"""Simulator and control library for a frequency-locked NV-diamond vector magnetometer."""

__version__ = "0.1.0"

from .lockin import LockInAmplifier
from .recon import FieldReconstructor

__all__ = ["LockInAmplifier", "FieldReconstructor", "__version__"]
