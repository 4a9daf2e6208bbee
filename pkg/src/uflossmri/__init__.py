"""Unrolled MRI reconstruction trained with an unsupervised feature loss."""
