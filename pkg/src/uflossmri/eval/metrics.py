from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
from scipy.ndimage import gaussian_filter

from uflossmri.config.schemas import UflossConfig

SSIM_SIGMA = 1.5
SSIM_TRUNCATE = 2.0  # radius int(2.0 * 1.5 + 0.5) = 3 -> 7x7 window
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _as_array(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        return x.detach().cpu().numpy()
    return np.asarray(x)


def nrmse(xhat, x) -> float:
    """||xhat - x||_2 / ||x||_2 over complex values."""
    xhat, x = _as_array(xhat), _as_array(x)
    if xhat.shape != x.shape:
        raise ValueError(f"Shape mismatch: {xhat.shape} vs {x.shape}")
    reference = float(np.linalg.norm(x.ravel()))
    if reference == 0.0:
        raise ValueError("nrmse reference image is all zero")
    return float(np.linalg.norm((xhat - x).ravel()) / reference)


def ssim(xhat, x, data_range: float | None = None) -> float:
    """Mean local SSIM of magnitude images (7x7 Gaussian window, sigma 1.5).

    Dynamic range defaults to the reference's max magnitude; the mean is taken
    over the interior where the full window fits.
    """
    a = np.abs(_as_array(xhat)).astype(np.float64)
    b = np.abs(_as_array(x)).astype(np.float64)
    if a.shape != b.shape:
        raise ValueError(f"Shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ValueError(f"ssim expects 2D images, got shape {a.shape}")
    if data_range is None:
        data_range = float(b.max())
    if data_range <= 0.0:
        data_range = float(a.max()) or 1.0

    radius = int(SSIM_TRUNCATE * SSIM_SIGMA + 0.5)
    window = 2 * radius + 1
    cov_norm = window * window / (window * window - 1.0)

    def smooth(image: np.ndarray) -> np.ndarray:
        return gaussian_filter(image, sigma=SSIM_SIGMA, truncate=SSIM_TRUNCATE, mode="reflect")

    ux, uy = smooth(a), smooth(b)
    vx = cov_norm * (smooth(a * a) - ux * ux)
    vy = cov_norm * (smooth(b * b) - uy * uy)
    vxy = cov_norm * (smooth(a * b) - ux * uy)

    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    numerator = (2.0 * ux * uy + c1) * (2.0 * vxy + c2)
    denominator = (ux * ux + uy * uy + c1) * (vx + vy + c2)
    local = numerator / denominator

    height, width = a.shape
    if height > 2 * radius and width > 2 * radius:
        local = local[radius:height - radius, radius:width - radius]
    return float(local.mean())


@dataclass(frozen=True)
class MetricsRow:
    method: str
    slice_id: str
    nrmse: float
    ssim: float
    ufloss: float

    def __post_init__(self) -> None:
        if self.nrmse < 0:
            raise ValueError(f"nrmse must be >= 0, got {self.nrmse}")
        if not -1.0 <= self.ssim <= 1.0 + 1e-9:
            raise ValueError(f"ssim must lie in [-1, 1], got {self.ssim}")
        if not math.isnan(self.ufloss) and not -1e-6 <= self.ufloss <= 2.0 + 1e-6:
            raise ValueError(f"ufloss must lie in [0, 2], got {self.ufloss}")

    def as_dict(self) -> dict:
        return asdict(self)


def image_ufloss(xhat, x, net: nn.Module | None, cfg: UflossConfig) -> float:
    """UFLoss at shift (0, 0) between two single images; NaN without a feature net."""
    if net is None:
        return float("nan")
    from uflossmri.ufloss.loss import ufloss

    dtype = torch.complex128 if next(net.parameters()).dtype == torch.float64 else torch.complex64
    device = next(net.parameters()).device
    with torch.no_grad():
        value = ufloss(
            torch.as_tensor(_as_array(x)).to(dtype=dtype, device=device),
            torch.as_tensor(_as_array(xhat)).to(dtype=dtype, device=device),
            net,
            cfg,
            (0, 0),
        )
    return float(value)


def evaluate_reconstruction(
    xhat,
    x,
    net: nn.Module | None,
    cfg: UflossConfig,
    method: str,
    slice_id: str = "",
) -> MetricsRow:
    return MetricsRow(
        method=method,
        slice_id=slice_id,
        nrmse=nrmse(xhat, x),
        ssim=ssim(xhat, x),
        ufloss=image_ufloss(xhat, x, net, cfg),
    )
