"""Tightly coupled GNSS/IMU factor-graph estimation with fixed-lag smoothing."""

__version__ = "0.1.0"
