# This file initializes the peak_contribution package.
"""Coincident monthly peak contribution (CMPC) estimation from smart-meter and billing data."""

__version__ = "0.1.0"
