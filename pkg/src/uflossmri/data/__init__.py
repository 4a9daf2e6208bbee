"""Slices, phantoms, normalization, and patch extraction."""
