"""Metrics and validation studies."""
