"""Ensemble microaneurysm detection from preprocessing/extractor pairs."""

__version__ = "0.1.0"
