"""Trend and seasonality estimation for time series of point patterns."""

__version__ = "0.1.0"
