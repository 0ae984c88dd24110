"""Invariant Kalman filtering of the relative state of two vehicles on SE_2(3)."""

__version__ = "0.1.0"

from . import filters, lie, models, sim, sti  # noqa: E402,F401
from .filters import Belief, CASES, IMU_ALPHA, IMU_BETA  # noqa: E402,F401
from .lie import GroupElement  # noqa: E402,F401
