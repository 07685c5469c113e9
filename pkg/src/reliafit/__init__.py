"""Reliability growth and Weibull/Gamma cumulative-failure modelling."""

__version__ = "0.1.0"
