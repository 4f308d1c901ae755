"""
Analysis layer: ranking and accuracy metrics, risk buckets, and the
train/test split used to evaluate risk scores.
"""
