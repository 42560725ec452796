"""Bayesian latent class multivariate probit models for diagnostic test accuracy."""

__version__ = "0.1.0"
