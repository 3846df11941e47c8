"""Deterministic Gaussian smoothing of classifiers by regularized retraining, with certification and attacks."""

__version__ = "0.1.0"

from . import attacks, autodiff, certify, data, heatsmooth, nn, oracles  # noqa: E402,F401
