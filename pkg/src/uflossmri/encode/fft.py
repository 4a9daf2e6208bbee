"""Centered, orthonormal 2D Fourier transforms over the last two axes.

Accept either torch tensors or numpy arrays and return the same kind.
"""
from __future__ import annotations

from typing import TypeVar

import numpy as np
import torch

ArrayT = TypeVar("ArrayT", np.ndarray, torch.Tensor)

_DIMS = (-2, -1)


def fft2c(x: ArrayT) -> ArrayT:
    if isinstance(x, torch.Tensor):
        x = torch.fft.ifftshift(x, dim=_DIMS)
        x = torch.fft.fft2(x, dim=_DIMS, norm="ortho")
        return torch.fft.fftshift(x, dim=_DIMS)
    x = np.fft.ifftshift(np.asarray(x), axes=_DIMS)
    x = np.fft.fft2(x, axes=_DIMS, norm="ortho")
    return np.fft.fftshift(x, axes=_DIMS)


def ifft2c(x: ArrayT) -> ArrayT:
    if isinstance(x, torch.Tensor):
        x = torch.fft.ifftshift(x, dim=_DIMS)
        x = torch.fft.ifft2(x, dim=_DIMS, norm="ortho")
        return torch.fft.fftshift(x, dim=_DIMS)
    x = np.fft.ifftshift(np.asarray(x), axes=_DIMS)
    x = np.fft.ifft2(x, axes=_DIMS, norm="ortho")
    return np.fft.fftshift(x, axes=_DIMS)
