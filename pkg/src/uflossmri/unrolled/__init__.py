"""Unrolled reconstructor and its training loop."""
