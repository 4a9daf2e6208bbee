from __future__ import annotations

import numpy as np
import torch


def complex_to_channels(x: torch.Tensor) -> torch.Tensor:
    """[..., H, W] complex -> [..., 2, H, W] real (real, imaginary)."""
    return torch.stack((x.real, x.imag), dim=-3)


def channels_to_complex(x: torch.Tensor) -> torch.Tensor:
    """[..., 2, H, W] real -> [..., H, W] complex."""
    if x.shape[-3] != 2:
        raise ValueError(f"Expected 2 channels at dim -3, got shape {tuple(x.shape)}")
    return torch.complex(x[..., 0, :, :], x[..., 1, :, :])


def as_complex_tensor(
    x: np.ndarray | torch.Tensor,
    dtype: torch.dtype = torch.complex64,
    device: torch.device | str | None = None,
) -> torch.Tensor:
    tensor = x if isinstance(x, torch.Tensor) else torch.from_numpy(np.asarray(x))
    return tensor.to(dtype=dtype, device=device)


def real_dtype_for(dtype: torch.dtype) -> torch.dtype:
    return torch.float64 if dtype == torch.complex128 else torch.float32


def complex_dtype_for(dtype: torch.dtype) -> torch.dtype:
    return torch.complex128 if dtype in (torch.float64, torch.complex128) else torch.complex64


def to_numpy(x: torch.Tensor) -> np.ndarray:
    return x.detach().cpu().numpy()


def vdot(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Real part of the complex inner product over the last two axes, per batch item."""
    return (a.conj() * b).real.sum(dim=(-2, -1))


def ensure_finite(x: torch.Tensor, what: str) -> torch.Tensor:
    if not bool(torch.isfinite(x).all()):
        raise RuntimeError(f"Non-finite values in {what}")
    return x
