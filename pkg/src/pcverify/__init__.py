"""Perception contracts, interval reachability and the DaRePC refinement loop."""

__version__ = "0.1.0"
