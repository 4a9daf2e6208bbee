from __future__ import annotations

from typing import Literal

import numpy as np
from scipy.ndimage import gaussian_filter

from uflossmri.data.slices import Dataset, Slice, Split, normalize_dataset

Contrast = Literal["synthetic", "mixed"]

MIN_ELLIPSES = 3
MAX_ELLIPSES = 8
TEXTURE_SIGMA = 1.5
TEXTURE_WEIGHT = 0.15
FAT_SUPPRESSION = 0.2


def _grid(shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = shape
    yy, xx = np.meshgrid(
        np.linspace(-1.0, 1.0, rows),
        np.linspace(-1.0, 1.0, cols),
        indexing="ij",
    )
    return yy, xx


def _ellipse(yy, xx, center, axes, angle) -> np.ndarray:
    cos_a, sin_a = np.cos(angle), np.sin(angle)
    dy, dx = yy - center[0], xx - center[1]
    u = (dx * cos_a + dy * sin_a) / axes[1]
    v = (-dx * sin_a + dy * cos_a) / axes[0]
    return (u * u + v * v <= 1.0).astype(np.float64)


def _subject_layout(rng: np.random.Generator) -> list[dict]:
    """Ellipse parameters shared by every slice of one subject."""
    count = int(rng.integers(MIN_ELLIPSES, MAX_ELLIPSES + 1))
    layout = [
        {
            # Body outline
            "center": rng.uniform(-0.05, 0.05, size=2),
            "axes": rng.uniform(0.7, 0.9, size=2),
            "angle": rng.uniform(-0.3, 0.3),
            "intensity": rng.uniform(0.4, 0.6),
            "fat": False,
        }
    ]
    for _ in range(count - 1):
        layout.append(
            {
                "center": rng.uniform(-0.5, 0.5, size=2),
                "axes": rng.uniform(0.06, 0.35, size=2),
                "angle": rng.uniform(0.0, np.pi),
                "intensity": rng.uniform(-0.3, 0.6),
                "fat": bool(rng.random() < 0.3),
            }
        )
    return layout


def _render_slice(
    layout: list[dict],
    shape: tuple[int, int],
    rng: np.random.Generator,
    position: float,
    fat_suppressed: bool,
) -> np.ndarray:
    yy, xx = _grid(shape)
    magnitude = np.zeros(shape, dtype=np.float64)
    # Through-plane position shrinks inner structures slightly
    shrink = 1.0 - 0.15 * abs(position)
    for index, item in enumerate(layout):
        axes = item["axes"] if index == 0 else item["axes"] * shrink
        intensity = item["intensity"]
        if item["fat"]:
            intensity = abs(intensity) + 0.4
            if fat_suppressed:
                intensity *= FAT_SUPPRESSION
        magnitude += intensity * _ellipse(yy, xx, item["center"], axes, item["angle"])

    support = magnitude > 0
    magnitude = np.clip(magnitude, 0.0, None)

    texture = gaussian_filter(rng.standard_normal(shape), sigma=TEXTURE_SIGMA, mode="wrap")
    texture /= max(float(np.std(texture)), 1e-12)
    magnitude = magnitude * (1.0 + TEXTURE_WEIGHT * texture) * support
    magnitude = np.clip(magnitude, 0.0, None)

    coeffs = rng.normal(0.0, 0.4, size=6)
    phase = (
        coeffs[0]
        + coeffs[1] * xx
        + coeffs[2] * yy
        + coeffs[3] * xx * yy
        + coeffs[4] * xx * xx
        + coeffs[5] * yy * yy
    )
    return magnitude * np.exp(1j * phase)


def make_phantom_dataset(
    count: int,
    shape: tuple[int, int] = (64, 64),
    seed: int = 0,
    contrast: Contrast = "synthetic",
    slices_per_subject: int = 1,
    split: Split = "train",
) -> Dataset:
    """Deterministic synthetic slices: ellipses, band-limited texture and smooth phase.

    Slices are grouped into subjects of ``slices_per_subject`` and normalized
    per subject. With ``contrast="mixed"`` subjects alternate between a PD and a
    fat-suppressed PDFS appearance.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    height, width = (int(shape[0]), int(shape[1]))
    if height < 64 or width < 64:
        raise ValueError(f"shape must be at least 64x64, got {shape}")
    if slices_per_subject < 1:
        raise ValueError(f"slices_per_subject must be >= 1, got {slices_per_subject}")
    if contrast not in ("synthetic", "mixed"):
        raise ValueError(f"Unknown contrast '{contrast}'. Expected: synthetic, mixed")

    rng = np.random.default_rng(seed)
    raw: list[Slice] = []
    subject_index = -1
    layout: list[dict] = []
    for index in range(count):
        within = index % slices_per_subject
        if within == 0:
            subject_index += 1
            layout = _subject_layout(rng)
        if contrast == "mixed":
            tag = "PD" if subject_index % 2 == 0 else "PDFS"
        else:
            tag = "synthetic"
        position = 0.0 if slices_per_subject == 1 else 2.0 * within / (slices_per_subject - 1) - 1.0
        image = _render_slice(layout, (height, width), rng, position, fat_suppressed=tag == "PDFS")
        subject_id = f"seed{seed}-subj{subject_index:04d}"
        raw.append(
            Slice(
                image=image,
                contrast_tag=tag,
                subject_id=subject_id,
                slice_id=f"{subject_id}-sl{within:03d}",
            )
        )
    return normalize_dataset(raw, split=split)
