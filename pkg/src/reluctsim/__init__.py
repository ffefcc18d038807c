"""Simulation and identification of single-coil reluctance actuators with Preisach hysteresis."""

__version__ = "0.1.0"
