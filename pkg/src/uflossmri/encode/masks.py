from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Literal

import numpy as np

from uflossmri.shared.containers import load_container, save_container

MaskKind = Literal["random1d", "poisson"]

POISSON_RATE_TOLERANCE = 0.10
POISSON_BISECTION_STEPS = 40
POISSON_MAX_RESEEDS = 5


@dataclass(frozen=True, eq=False)
class SamplingMask:
    mask: np.ndarray
    acceleration: float
    kind: MaskKind = "random1d"
    center_fraction: float | None = None
    calib: tuple[int, int] | None = None
    inner_radius: float | None = None

    def __post_init__(self) -> None:
        values = np.unique(self.mask)
        if not np.all(np.isin(values, (0, 1))):
            raise ValueError(f"Mask entries must be 0 or 1, found {values[:5]}")

    @property
    def shape(self) -> tuple[int, int]:
        return tuple(self.mask.shape)  # type: ignore[return-value]

    @property
    def sampling_fraction(self) -> float:
        return float(self.mask.mean())

    def as_float(self) -> np.ndarray:
        return self.mask.astype(np.float64)


def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def center_slice(length: int, count: int) -> slice:
    start = length // 2 - count // 2
    return slice(start, start + count)


def make_mask_1d_random(
    shape: tuple[int, int],
    acceleration: float = 5.0,
    center_fraction: float = 0.08,
    seed: int = 0,
) -> SamplingMask:
    """Column mask: a contiguous fully sampled center plus random peripheral columns.

    The center block counts toward the round(W / acceleration) column budget.
    """
    height, width = int(shape[0]), int(shape[1])
    if acceleration < 1.0:
        raise ValueError(f"acceleration must be >= 1, got {acceleration}")
    if center_fraction * width < 1.0:
        raise ValueError(
            f"center_fraction * W must be >= 1 (got {center_fraction} * {width})"
        )
    center_count = int(math.floor(center_fraction * width))
    budget = min(width, _round_half_up(width / acceleration))
    if center_count > budget:
        raise ValueError(
            f"acceleration {acceleration} leaves {budget} columns, fewer than the "
            f"{center_count}-column center"
        )

    columns = np.zeros(width, dtype=bool)
    columns[center_slice(width, center_count)] = True
    outside = np.flatnonzero(~columns)
    extra = budget - center_count
    if extra > 0:
        chosen = np.random.default_rng(seed).choice(outside, size=extra, replace=False)
        columns[chosen] = True

    mask = np.broadcast_to(columns[None, :], (height, width)).astype(np.uint8)
    return SamplingMask(
        mask=mask,
        acceleration=float(acceleration),
        kind="random1d",
        center_fraction=float(center_fraction),
    )


def _radius_profile(shape: tuple[int, int]) -> np.ndarray:
    """Normalized distance rho from the k-space center; rho = 1 at the edge midpoints."""
    height, width = shape
    ky = (np.arange(height) - height // 2) / (height / 2.0)
    kx = (np.arange(width) - width // 2) / (width / 2.0)
    return np.sqrt(ky[:, None] ** 2 + kx[None, :] ** 2)


def _dart_throw(
    radius: np.ndarray,
    calib_mask: np.ndarray,
    order: np.ndarray,
) -> np.ndarray:
    height, width = radius.shape
    taken = np.zeros((height, width), dtype=bool)
    for flat in order:
        y, x = divmod(int(flat), width)
        if calib_mask[y, x]:
            continue
        r = radius[y, x]
        reach = int(math.ceil(r))
        y0, x0 = max(0, y - reach), max(0, x - reach)
        window = taken[y0:y + reach + 1, x0:x + reach + 1]
        ys, xs = np.nonzero(window)
        if ys.size:
            dist2 = (ys + y0 - y) ** 2 + (xs + x0 - x) ** 2
            if np.any(dist2 < r * r):
                continue
        taken[y, x] = True
    return taken


def make_mask_poisson(
    shape: tuple[int, int],
    acceleration: float = 8.0,
    calib: int = 24,
    seed: int = 0,
) -> SamplingMask:
    """Variable-density Poisson-disk mask by dart throwing.

    The exclusion radius grows with distance from the center, r(rho) = s * (1 + rho);
    the scale s is bisected until the sampling rate is within 10% of
    1 / acceleration. The central calib x calib block is always sampled.
    """
    height, width = int(shape[0]), int(shape[1])
    if acceleration < 1.0:
        raise ValueError(f"acceleration must be >= 1, got {acceleration}")
    if calib < 0 or calib > min(height, width):
        raise ValueError(f"calib {calib} must lie in [0, {min(height, width)}]")

    calib_mask = np.zeros((height, width), dtype=bool)
    calib_mask[center_slice(height, calib), center_slice(width, calib)] = True

    if acceleration == 1.0:
        return SamplingMask(
            mask=np.ones((height, width), dtype=np.uint8),
            acceleration=1.0,
            kind="poisson",
            calib=(calib, calib),
            inner_radius=0.0,
        )

    target = 1.0 / acceleration
    if calib_mask.mean() > target * (1.0 + POISSON_RATE_TOLERANCE):
        raise ValueError(
            f"calibration block {calib}x{calib} alone exceeds the sampling rate for R={acceleration}"
        )
    rho = _radius_profile((height, width))

    for attempt in range(POISSON_MAX_RESEEDS):
        order = np.random.default_rng([seed, attempt]).permutation(height * width)

        def rate(scale: float) -> tuple[float, np.ndarray]:
            taken = _dart_throw(scale * (1.0 + rho), calib_mask, order)
            sampled = taken | calib_mask
            return float(sampled.mean()), sampled

        low, high = 0.5, float(max(height, width))
        for _ in range(POISSON_BISECTION_STEPS):
            scale = 0.5 * (low + high)
            fraction, sampled = rate(scale)
            if abs(fraction - target) <= POISSON_RATE_TOLERANCE * target:
                return SamplingMask(
                    mask=sampled.astype(np.uint8),
                    acceleration=float(acceleration),
                    kind="poisson",
                    calib=(calib, calib),
                    inner_radius=float(scale),
                )
            if fraction > target:
                low = scale
            else:
                high = scale

    raise RuntimeError(
        f"Poisson-disk generator could not reach rate {target:.4f} within "
        f"{POISSON_RATE_TOLERANCE:.0%} after {POISSON_MAX_RESEEDS} reseeds"
    )


def slice_mask_seed(seed: int, split_index: int, index: int) -> int:
    """Independent mask seed for slice ``index`` of split ``split_index``."""
    return int(np.random.SeedSequence([int(seed), int(split_index), int(index)]).generate_state(1)[0])


def make_mask(
    kind: str,
    shape: tuple[int, int],
    acceleration: float,
    seed: int,
    center_fraction: float = 0.08,
    calib: int = 24,
) -> SamplingMask:
    if kind == "random1d":
        return make_mask_1d_random(shape, acceleration, center_fraction, seed)
    if kind == "poisson":
        return make_mask_poisson(shape, acceleration, calib, seed)
    raise ValueError(f"Unknown mask type '{kind}'. Expected one of: poisson, random1d")


def save_mask(mask: SamplingMask, path: str | Path, meta: dict[str, Any] | None = None) -> Path:
    payload = dict(meta or {})
    payload.update(
        {
            "mask_kind": mask.kind,
            "acceleration": mask.acceleration,
            "center_fraction": mask.center_fraction,
            "calib": list(mask.calib) if mask.calib else None,
            "inner_radius": mask.inner_radius,
        }
    )
    return save_container(path, {"mask": mask.mask.astype(np.uint8)}, payload)


def load_mask(path: str | Path) -> SamplingMask:
    arrays, meta = load_container(path)
    if "mask" not in arrays:
        raise ValueError(f"Mask file {path} has no 'mask' entry")
    calib = meta.get("calib")
    return SamplingMask(
        mask=arrays["mask"].astype(np.uint8),
        acceleration=float(meta.get("acceleration", 1.0)),
        kind=meta.get("mask_kind", "random1d"),
        center_fraction=meta.get("center_fraction"),
        calib=tuple(calib) if calib else None,
        inner_radius=meta.get("inner_radius"),
    )
