"""BLER oracle, CQI-sequence clustering and the learned BLER estimator."""
