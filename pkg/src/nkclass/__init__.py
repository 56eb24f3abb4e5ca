"""Organic-compound classification from single-wavelength optical constants.

Pipeline: ingest tabulated (wavelength, n, k) databases, window them into
feature vectors, balance the spectral bins by resampling or Sellmeier-model
augmentation, train a from-scratch random forest, and report per-bin
accuracies and precision-truncation sweeps as plot-ready CSV tables.
"""

__version__ = "0.1.0"
