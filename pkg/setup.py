#!/usr/bin/env python3
"""
Setup script for the lungrisk-preprocess package.
Kept for tools that still invoke setup.py directly; metadata lives in pyproject.toml.
"""
from setuptools import setup

if __name__ == "__main__":
    setup()
