from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
import torch
import torch.nn as nn

from uflossmri.config.schemas import UflossConfig
from uflossmri.encode.fft import fft2c, ifft2c
from uflossmri.eval.metrics import nrmse
from uflossmri.ufloss.loss import ufloss_per_image

MAX_NOISE_LEVEL = 0.1


@dataclass(frozen=True)
class StudyCurve:
    x_values: tuple[float, ...]
    y_values: tuple[float, ...]
    nrmse_values: tuple[float, ...] = field(default_factory=tuple)
    label: str = ""

    def __post_init__(self) -> None:
        if len(self.x_values) != len(self.y_values):
            raise ValueError(
                f"x and y lengths differ ({len(self.x_values)} vs {len(self.y_values)})"
            )
        if self.nrmse_values and len(self.nrmse_values) != len(self.x_values):
            raise ValueError("nrmse_values must match x_values in length")
        if any(b <= a for a, b in zip(self.x_values, self.x_values[1:])):
            raise ValueError("x_values must be strictly increasing")

    def rows(self) -> list[dict]:
        out = []
        for index, (x_value, y_value) in enumerate(zip(self.x_values, self.y_values)):
            row = {"label": self.label, "x": x_value, "ufloss": y_value}
            if self.nrmse_values:
                row["nrmse"] = self.nrmse_values[index]
            out.append(row)
        return out


def standard_complex_normal(shape: tuple[int, ...], seed: int) -> np.ndarray:
    """i.i.d. circular complex Gaussian with E|n|^2 = 1."""
    rng = np.random.default_rng(seed)
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def perturb_noise(x: np.ndarray, beta: float, seed: int) -> np.ndarray:
    """(1 - beta) x + beta n."""
    if not 0.0 <= beta <= MAX_NOISE_LEVEL:
        raise ValueError(f"beta must lie in [0, {MAX_NOISE_LEVEL}], got {beta}")
    x = np.asarray(x)
    return (1.0 - beta) * x + beta * standard_complex_normal(x.shape, seed)


def crop_size(length: int, rate: float) -> int:
    """length / rate rounded to the nearest even integer (at least 2)."""
    if rate == 1.0:
        return length
    size = 2 * int(np.floor(length / (2.0 * rate) + 0.5))
    return int(min(length, max(2, size)))


def blur_mask(shape: tuple[int, int], rate: float) -> np.ndarray:
    """Ideal rectangular low-pass keeping the central (H/R) x (W/R) block around DC."""
    if rate < 1.0:
        raise ValueError(f"crop rate R must be >= 1, got {rate}")
    height, width = shape
    keep_h, keep_w = crop_size(height, rate), crop_size(width, rate)
    mask = np.zeros(shape, dtype=np.float64)
    top = height // 2 - keep_h // 2
    left = width // 2 - keep_w // 2
    mask[top:top + keep_h, left:left + keep_w] = 1.0
    return mask


def perturb_blur(x: np.ndarray, rate: float) -> np.ndarray:
    """Keep the central k-space block of fft2c(x), zero elsewhere, transform back."""
    x = np.asarray(x)
    return ifft2c(fft2c(x) * blur_mask(x.shape[-2:], rate))


def _net_tensor(images: np.ndarray, net: nn.Module) -> torch.Tensor:
    parameter = next(net.parameters())
    dtype = torch.complex128 if parameter.dtype == torch.float64 else torch.complex64
    return torch.as_tensor(np.asarray(images)).to(dtype=dtype, device=parameter.device)


@torch.no_grad()
def batch_ufloss(references: np.ndarray, images: np.ndarray, net: nn.Module, cfg: UflossConfig) -> np.ndarray:
    """UFLoss at shift (0, 0) for each (reference, image) pair of [N, H, W] stacks."""
    values = ufloss_per_image(_net_tensor(references, net), _net_tensor(images, net), net, cfg, (0, 0))
    return values.cpu().numpy().astype(np.float64)


def perturbation_study(
    images: Sequence[np.ndarray],
    levels: Sequence[float],
    net: nn.Module,
    cfg: UflossConfig,
    kind: Literal["noise", "blur"] = "noise",
    seeds: int = 3,
    base_seed: int = 0,
) -> StudyCurve:
    """Mean UFLoss (and NRMSE) against the clean images at each perturbation level.

    The noise arm averages over ``seeds`` noise draws; draws are shared across
    levels so the curve reflects the level alone.
    """
    levels = [float(level) for level in levels]
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError("levels must be sorted strictly ascending")
    if kind == "noise":
        if not levels or levels[0] != 0.0:
            raise ValueError("noise levels must start at 0")
        if seeds < 3:
            raise ValueError(f"noise study needs at least 3 seeds, got {seeds}")
    elif kind == "blur":
        if not levels or levels[0] != 1.0:
            raise ValueError("blur levels must start at R = 1")
    else:
        raise ValueError(f"Unknown perturbation kind '{kind}'. Expected: noise, blur")
    stack = np.stack([np.asarray(image) for image in images])
    if stack.shape[0] == 0:
        raise ValueError("perturbation_study needs at least one image")

    draws = range(seeds) if kind == "noise" else range(1)
    means: list[float] = []
    errors: list[float] = []
    for level in levels:
        ufloss_values: list[float] = []
        nrmse_values: list[float] = []
        for draw in draws:
            if kind == "noise":
                perturbed = np.stack(
                    [
                        perturb_noise(image, level, seed=base_seed + 1000 * draw + index)
                        for index, image in enumerate(stack)
                    ]
                )
            else:
                perturbed = np.stack([perturb_blur(image, level) for image in stack])
            ufloss_values.extend(batch_ufloss(stack, perturbed, net, cfg).tolist())
            nrmse_values.extend(nrmse(p, x) for p, x in zip(perturbed, stack))
        means.append(float(np.mean(ufloss_values)))
        errors.append(float(np.mean(nrmse_values)))
    return StudyCurve(tuple(levels), tuple(means), tuple(errors), label=kind)
