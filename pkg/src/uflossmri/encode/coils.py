from __future__ import annotations

from pathlib import Path
from typing import Any

import numpy as np

from uflossmri.shared.containers import load_container, save_container

LOBE_WIDTH = 0.9
PHASE_SLOPE = 0.3


def synth_coil_maps(shape: tuple[int, int], ncoils: int, seed: int = 0) -> np.ndarray:
    """Smooth complex coil maps [C, H, W] with sum over coils of |S_c|^2 = 1 at every pixel.

    Coil c is a Gaussian lobe centred on the image border at angle 2*pi*c/C
    (plus a small random rotation) with a gentle linear phase.
    """
    if ncoils < 1:
        raise ValueError(f"ncoils must be >= 1, got {ncoils}")
    height, width = int(shape[0]), int(shape[1])
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(
        np.linspace(-1.0, 1.0, height),
        np.linspace(-1.0, 1.0, width),
        indexing="ij",
    )
    offset = rng.uniform(0.0, 2.0 * np.pi)
    maps = np.empty((ncoils, height, width), dtype=np.complex128)
    for coil in range(ncoils):
        angle = offset + 2.0 * np.pi * coil / ncoils
        cy, cx = 1.2 * np.sin(angle), 1.2 * np.cos(angle)
        magnitude = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * LOBE_WIDTH**2))
        slope = rng.uniform(-PHASE_SLOPE, PHASE_SLOPE, size=2)
        phase = rng.uniform(-np.pi, np.pi) + slope[0] * yy + slope[1] * xx
        maps[coil] = magnitude * np.exp(1j * phase)

    norm = np.sqrt(np.sum(np.abs(maps) ** 2, axis=0, keepdims=True))
    return maps / norm


def save_coil_maps(maps: np.ndarray, path: str | Path, meta: dict[str, Any] | None = None) -> Path:
    return save_container(path, {"maps": maps.astype(np.complex64)}, meta)


def load_coil_maps(path: str | Path) -> np.ndarray:
    arrays, _ = load_container(path)
    if "maps" not in arrays:
        raise ValueError(f"Coil-map file {path} has no 'maps' entry")
    maps = arrays["maps"].astype(np.complex128)
    if maps.ndim != 3:
        raise ValueError(f"'maps' must be [C, H, W], got shape {maps.shape}")
    return maps
