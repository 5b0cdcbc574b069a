"""Fairness-aware active learning for 3D segmentation on synthetic biased cohorts."""

__version__ = "0.1.0"
