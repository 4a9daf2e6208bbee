"""Wavelet-sparse parallel imaging baseline."""
