"""Encoding operator, sampling masks, coil maps, and CG solve."""
