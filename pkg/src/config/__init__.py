"""
Configuration for the lung-CT preprocessing toolkit.

This package contains the process settings (environment driven) and the
run configuration (file driven) used by the batch runner.
"""
