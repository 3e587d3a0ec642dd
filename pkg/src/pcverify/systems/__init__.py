"""Case-study plants, references, requirements and synthetic observers."""

from .autoland import AutoLandObserver, autoland_requirement, make_autoland
from .base import ClosedLoopSystem, Requirement, Trajectory, simulate, simulate_batch
from .dronerace import DroneObserver, DroneReference, drone_requirement, make_dronerace

__all__ = [
    "AutoLandObserver",
    "ClosedLoopSystem",
    "DroneObserver",
    "DroneReference",
    "Requirement",
    "Trajectory",
    "autoland_requirement",
    "drone_requirement",
    "make_autoland",
    "make_dronerace",
    "simulate",
    "simulate_batch",
]
