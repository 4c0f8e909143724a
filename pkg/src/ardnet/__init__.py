"""Latent-surface network simulation, ARD collection, maximum-likelihood
recovery, and graph-statistic recoverability experiments."""

__version__ = "0.1.0"
