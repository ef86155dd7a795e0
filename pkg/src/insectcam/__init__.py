"""Insect camera trap pipeline: optics, capture trigger, localization, taxonomy-aware CNN classification."""

from .pipeline import experiment_full_vs_cropped, run_pipeline

__all__ = ["experiment_full_vs_cropped", "run_pipeline"]
