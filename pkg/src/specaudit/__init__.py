"""Autoencoder anomaly detection on spectrograms with explanation scoring."""

__version__ = "0.1.0"
