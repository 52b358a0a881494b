"""Inverse chemical kinetics with hyperparameter-free maximum-likelihood
kinetics-informed neural networks (rKINNs)."""

__version__ = "0.1.0"
