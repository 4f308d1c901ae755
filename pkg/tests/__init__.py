"""
Tests package for lungrisk-preprocess.
"""
