"""Euclidean-hyperbolic graph autoencoders for node anomaly detection."""
__version__ = "0.1.0"
