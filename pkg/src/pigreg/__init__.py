"""Heteroscedastic regression with Gamma precision posteriors and OOD pseudo-inputs."""

__version__ = "0.1.0"
