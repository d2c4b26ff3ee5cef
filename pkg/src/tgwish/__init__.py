"""Truncated G-Wishart priors and spatial disease-mapping models."""

__version__ = "0.1.0"
