"""Unsupervised feature loss and the combined reconstruction objective."""
