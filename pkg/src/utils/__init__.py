"""
Utility modules for the preprocessing toolkit.

This package contains logging, error handling, serialization, rounding
and seeded-randomness helpers used throughout the application.
"""
