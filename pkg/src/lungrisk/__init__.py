"""
lungrisk-preprocess

Deterministic CT preprocessing and evaluation toolkit for lung-cancer risk models.
"""

__version__ = "0.1.0"
