"""Helicopter-engine telemetry anomaly detection toolkit."""

__version__ = "0.1.0"
