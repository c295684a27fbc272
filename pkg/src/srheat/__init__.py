"""Relative heat content of sub-Riemannian domains: estimators and small-time asymptotics."""

__version__ = "0.1.0"
