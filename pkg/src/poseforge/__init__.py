"""Keypoint-integrated instruction-following data generation and judge-based benchmarking."""

__version__ = "0.1.0"
