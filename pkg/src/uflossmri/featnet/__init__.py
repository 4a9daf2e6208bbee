"""Patch feature network and memory-bank pretraining."""
