from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass
from typing import Iterator

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from uflossmri.config.schemas import UflossConfig
from uflossmri.shared.tensors import complex_to_channels


@dataclass(frozen=True)
class ReconLossParts:
    total: torch.Tensor
    mse_part: torch.Tensor
    ufloss_part: torch.Tensor

    def as_row(self) -> dict[str, float]:
        return {
            "total": float(self.total.detach()),
            "mse_part": float(self.mse_part.detach()),
            "ufloss_part": float(self.ufloss_part.detach()),
        }


def freeze(net: nn.Module) -> nn.Module:
    """Inference mode with every parameter excluded from optimization.

    Modifies ``net`` in place; use ``frozen`` to get the previous state back.
    """
    net.eval()
    for parameter in net.parameters():
        parameter.requires_grad_(False)
    return net


@contextmanager
def frozen(net: nn.Module) -> Iterator[nn.Module]:
    """``freeze`` for the duration of the block, then restore training mode and requires_grad."""
    was_training = net.training
    flags = [parameter.requires_grad for parameter in net.parameters()]
    try:
        yield freeze(net)
    finally:
        for parameter, flag in zip(net.parameters(), flags):
            parameter.requires_grad_(flag)
        net.train(was_training)


def _batched(x: torch.Tensor) -> torch.Tensor:
    if x.dim() == 2:
        return x.unsqueeze(0)
    if x.dim() != 3:
        raise ValueError(f"Expected an image [H, W] or a batch [B, H, W], got shape {tuple(x.shape)}")
    return x


def grid_patch_batch(
    images: torch.Tensor,
    size: int,
    stride: int,
    shift: tuple[int, int] = (0, 0),
) -> tuple[torch.Tensor, int]:
    """Grid patches of complex images [B, H, W] as [B * M, 2, P, P] (row-major per image)."""
    images = _batched(images)
    dr, dc = int(shift[0]), int(shift[1])
    if not (0 <= dr < stride and 0 <= dc < stride):
        raise ValueError(f"shift {shift} must lie in [0, {stride}) on both axes")
    height, width = images.shape[-2:]
    if height - dr < size or width - dc < size:
        raise ValueError(
            f"No patch of size {size} fits a {height}x{width} image at shift {shift} (M = 0)"
        )
    channels = complex_to_channels(images[:, dr:, dc:])
    columns = F.unfold(channels, kernel_size=size, stride=stride)
    batch, _, count = columns.shape
    patches = columns.view(batch, 2, size, size, count).permute(0, 4, 1, 2, 3)
    return patches.reshape(batch * count, 2, size, size), int(count)


def _check_patch_size(net: nn.Module, cfg: UflossConfig) -> None:
    expected = getattr(net, "patch_size", cfg.patch_size)
    if expected != cfg.patch_size:
        raise ValueError(
            f"Feature net was trained on {expected}x{expected} patches but the loss uses {cfg.patch_size}"
        )


def _paired_features(
    x: torch.Tensor,
    xhat: torch.Tensor,
    net: nn.Module,
    cfg: UflossConfig,
    shift: tuple[int, int],
) -> tuple[torch.Tensor, torch.Tensor]:
    """Features [B, M, d] of the reference and reconstruction grids."""
    if x.shape != xhat.shape:
        raise ValueError(f"Shape mismatch: {tuple(x.shape)} vs {tuple(xhat.shape)}")
    _check_patch_size(net, cfg)
    batch = _batched(x).shape[0]
    ref_patches, count = grid_patch_batch(x, cfg.patch_size, cfg.stride, shift)
    rec_patches, _ = grid_patch_batch(xhat, cfg.patch_size, cfg.stride, shift)
    ref = net(ref_patches).view(batch, count, -1)
    rec = net(rec_patches).view(batch, count, -1)
    return ref, rec


def ufloss_per_image(
    x: torch.Tensor,
    xhat: torch.Tensor,
    net: nn.Module,
    cfg: UflossConfig,
    shift: tuple[int, int] = (0, 0),
) -> torch.Tensor:
    """(1/M) sum_j (1 - <f(p_j), f(p_hat_j)>) for each image of the batch."""
    ref, rec = _paired_features(x, xhat, net, cfg, shift)
    return (1.0 - (ref * rec).sum(dim=-1)).mean(dim=-1)


def ufloss(
    x: torch.Tensor,
    xhat: torch.Tensor,
    net: nn.Module,
    cfg: UflossConfig,
    shift: tuple[int, int] = (0, 0),
) -> torch.Tensor:
    return ufloss_per_image(x, xhat, net, cfg, shift).mean()


def ufloss_mse_form(
    x: torch.Tensor,
    xhat: torch.Tensor,
    net: nn.Module,
    cfg: UflossConfig,
    shift: tuple[int, int] = (0, 0),
) -> torch.Tensor:
    """(1/2M) sum_j ||f(p_j) - f(p_hat_j)||^2, averaged over the batch."""
    ref, rec = _paired_features(x, xhat, net, cfg, shift)
    return (0.5 * ((ref - rec) ** 2).sum(dim=-1).mean(dim=-1)).mean()


def draw_shift(step_seed: int, stride: int) -> tuple[int, int]:
    """Uniform grid shift in [0, stride)^2, reproducible per step seed."""
    dr, dc = np.random.default_rng(step_seed).integers(0, stride, size=2)
    return int(dr), int(dc)


def ufloss_all_shifts(
    x: torch.Tensor,
    xhat: torch.Tensor,
    net: nn.Module,
    cfg: UflossConfig,
) -> torch.Tensor:
    """Mean of ``ufloss`` over every shift in [0, stride)^2."""
    values = [
        ufloss(x, xhat, net, cfg, (dr, dc))
        for dr in range(cfg.stride)
        for dc in range(cfg.stride)
    ]
    return torch.stack(values).mean()


def recon_loss(
    x: torch.Tensor,
    xhat: torch.Tensor,
    net: nn.Module | None,
    cfg: UflossConfig,
    step_seed: int,
) -> ReconLossParts:
    """||xhat - x||^2 + mu * (1/M) sum_j ||f(p_j) - f(p_hat_j)||^2, averaged over the batch.

    ``ufloss_part`` is the inner-product UFLoss, so total = mse_part + 2 mu ufloss_part.
    Without a feature net the objective is the pure squared error.
    """
    if x.shape != xhat.shape:
        raise ValueError(f"Shape mismatch: {tuple(x.shape)} vs {tuple(xhat.shape)}")
    diff = _batched(xhat) - _batched(x)
    mse_part = (diff.abs() ** 2).sum(dim=(-2, -1)).mean()
    if net is None:
        zero = torch.zeros((), dtype=mse_part.dtype, device=mse_part.device)
        return ReconLossParts(total=mse_part, mse_part=mse_part, ufloss_part=zero)
    shift = draw_shift(step_seed, cfg.stride)
    if cfg.mu == 0:
        # reported only
        with torch.no_grad():
            ufloss_part = ufloss(x, xhat, net, cfg, shift)
        return ReconLossParts(total=mse_part, mse_part=mse_part, ufloss_part=ufloss_part)
    ufloss_part = ufloss(x, xhat, net, cfg, shift)
    total = mse_part + 2.0 * cfg.mu * ufloss_part
    return ReconLossParts(total=total, mse_part=mse_part, ufloss_part=ufloss_part)
