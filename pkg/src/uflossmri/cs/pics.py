from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pywt
import torch

from uflossmri.config.schemas import PicsConfig
from uflossmri.encode.operator import EncodingOperator, KSpaceSample, estimate_lipschitz

DIVERGENCE_PATIENCE = 5
DIVERGENCE_TOLERANCE = 1e-6
LIPSCHITZ_MARGIN = 1.01


class WaveletTransform:
    """Orthonormal 2D wavelet analysis/synthesis for complex images.

    Real and imaginary parts are transformed separately; images whose sides are
    not multiples of 2**levels are zero-padded at the bottom/right.
    """

    def __init__(self, shape: tuple[int, int], wavelet: str = "db4", levels: int = 3):
        if levels < 1:
            raise ValueError(f"levels must be >= 1, got {levels}")
        self.shape = (int(shape[0]), int(shape[1]))
        self.wavelet = pywt.Wavelet(wavelet)
        if not self.wavelet.orthogonal:
            raise ValueError(f"Wavelet '{wavelet}' is not orthogonal")
        self.levels = int(levels)
        block = 2**self.levels
        self.padded_shape = tuple(int(math.ceil(side / block) * block) for side in self.shape)
        _, self._slices = pywt.coeffs_to_array(
            pywt.wavedec2(np.zeros(self.padded_shape), self.wavelet, mode="periodization", level=self.levels)
        )

    def _pad(self, image: np.ndarray) -> np.ndarray:
        if image.shape == self.padded_shape:
            return image
        padded = np.zeros(self.padded_shape, dtype=image.dtype)
        padded[: self.shape[0], : self.shape[1]] = image
        return padded

    def _forward_real(self, image: np.ndarray) -> np.ndarray:
        coeffs = pywt.wavedec2(image, self.wavelet, mode="periodization", level=self.levels)
        array, _ = pywt.coeffs_to_array(coeffs)
        return array

    def _inverse_real(self, array: np.ndarray) -> np.ndarray:
        coeffs = pywt.array_to_coeffs(array, self._slices, output_format="wavedec2")
        return pywt.waverec2(coeffs, self.wavelet, mode="periodization")

    def forward(self, image: np.ndarray) -> np.ndarray:
        if tuple(image.shape) != self.shape:
            raise ValueError(f"Expected image of shape {self.shape}, got {image.shape}")
        padded = self._pad(np.asarray(image, dtype=np.complex128))
        return self._forward_real(padded.real) + 1j * self._forward_real(padded.imag)

    def inverse(self, coeffs: np.ndarray) -> np.ndarray:
        image = self._inverse_real(coeffs.real) + 1j * self._inverse_real(coeffs.imag)
        return image[: self.shape[0], : self.shape[1]]


def soft_threshold(coeffs: np.ndarray, threshold: float) -> np.ndarray:
    """Shrink magnitudes by ``threshold`` (floored at zero), keeping phase."""
    if threshold < 0:
        raise ValueError(f"threshold must be >= 0, got {threshold}")
    magnitude = np.abs(coeffs)
    scale = np.maximum(magnitude - threshold, 0.0) / np.where(magnitude > 0, magnitude, 1.0)
    return coeffs * scale


@dataclass
class PicsResult:
    image: np.ndarray
    objective: list[float] = field(default_factory=list)
    step: float = 0.0
    restarts: int = 0


class _Problem:
    def __init__(self, y: np.ndarray, maps: np.ndarray, mask: np.ndarray):
        self.y = torch.as_tensor(np.asarray(y), dtype=torch.complex128)
        self.operator = EncodingOperator(
            torch.as_tensor(np.asarray(maps), dtype=torch.complex128),
            torch.as_tensor(np.asarray(mask), dtype=torch.float64),
        )

    def residual(self, x: np.ndarray) -> torch.Tensor:
        return self.operator.forward(torch.from_numpy(x)) - self.y

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self.operator.adjoint(self.residual(x)).numpy()

    def data_term(self, x: np.ndarray) -> float:
        return 0.5 * float(torch.sum(torch.abs(self.residual(x)) ** 2))


def pics_objective(
    x: np.ndarray,
    y: np.ndarray,
    maps: np.ndarray,
    mask: np.ndarray,
    lam: float,
    transform: WaveletTransform,
) -> float:
    """0.5 * ||E x - y||^2 + lam * ||Psi x||_1."""
    problem = _Problem(y, maps, mask)
    return problem.data_term(np.asarray(x, dtype=np.complex128)) + lam * float(
        np.sum(np.abs(transform.forward(x)))
    )


def pics_solve(y, maps, mask, cfg: PicsConfig) -> PicsResult:
    """Monotone FISTA with restart on l1-wavelet regularized least squares."""
    problem = _Problem(y, maps, mask)
    shape = tuple(problem.operator.mask.shape[-2:])
    transform = WaveletTransform(shape, cfg.wavelet, cfg.wavelet_levels)
    if cfg.step == "auto":
        lipschitz = estimate_lipschitz(problem.operator.maps, problem.operator.mask)
        # Power iteration approaches L from below
        step = 1.0 / (LIPSCHITZ_MARGIN * max(lipschitz, 1e-12))
    else:
        step = float(cfg.step)

    def objective(image: np.ndarray) -> float:
        return problem.data_term(image) + cfg.lam * float(np.sum(np.abs(transform.forward(image))))

    def prox_step(point: np.ndarray) -> np.ndarray:
        moved = point - step * problem.gradient(point)
        return transform.inverse(soft_threshold(transform.forward(moved), step * cfg.lam))

    x = np.zeros(shape, dtype=np.complex128)
    z = x.copy()
    t = 1.0
    current = objective(x)
    history = [current]
    rising = 0
    restarts = 0
    for _ in range(cfg.iters):
        candidate = prox_step(z)
        value = objective(candidate)
        if not np.isfinite(value):
            raise RuntimeError(f"PICS objective became non-finite; reduce the step size (step={step:.3g})")
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        if value <= current:
            x_next = candidate
            rising = 0
            z = x_next + (t / t_next) * (candidate - x_next) + ((t - 1.0) / t_next) * (x_next - x)
            t = t_next
        else:
            x_next = x
            rising = rising + 1 if value - current > DIVERGENCE_TOLERANCE else 0
            if rising >= DIVERGENCE_PATIENCE:
                raise RuntimeError(
                    f"PICS diverged: objective rose for {DIVERGENCE_PATIENCE} consecutive "
                    f"iterations; reduce the step size (step={step:.3g})"
                )
            # Restart momentum from the last accepted iterate
            z = x_next
            t = 1.0
            restarts += 1
        x = x_next
        current = min(current, value)
        history.append(current)
    return PicsResult(image=x, objective=history, step=step, restarts=restarts)


def pics_reconstruct(y, maps, mask, cfg: PicsConfig) -> np.ndarray:
    return pics_solve(y, maps, mask, cfg).image


def reconstruct_sample(sample: KSpaceSample, cfg: PicsConfig) -> np.ndarray:
    return pics_reconstruct(sample.y, sample.maps, sample.mask.mask, cfg)


def sweep_pics_lambda(
    samples: Sequence[KSpaceSample],
    cfg: PicsConfig,
    lam_grid: Sequence[float] | None = None,
) -> tuple[float, list[dict]]:
    """Reconstruct every sample at each lambda; pick the best median SSIM."""
    from uflossmri.eval.metrics import nrmse, ssim

    grid = list(lam_grid if lam_grid is not None else cfg.lam_grid)
    if not grid:
        raise ValueError("lambda grid is empty")
    if not samples:
        raise ValueError("sweep_pics_lambda needs at least one sample")
    rows: list[dict] = []
    best_lam, best_score = grid[0], -np.inf
    for lam in grid:
        trial = cfg.model_copy(update={"lam": float(lam)})
        scores = []
        errors = []
        for sample in samples:
            image = reconstruct_sample(sample, trial)
            scores.append(ssim(image, sample.target.image))
            errors.append(nrmse(image, sample.target.image))
        median_ssim = float(np.median(scores))
        rows.append({"lam": float(lam), "median_ssim": median_ssim, "median_nrmse": float(np.median(errors))})
        if median_ssim > best_score:
            best_lam, best_score = float(lam), median_ssim
    return best_lam, rows
