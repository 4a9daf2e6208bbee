from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from uflossmri.data.slices import Slice


@dataclass(frozen=True, eq=False)
class Patch:
    pixels: np.ndarray
    origin: tuple[int, int]
    source_slice: str = ""

    @property
    def size(self) -> int:
        return int(self.pixels.shape[0])


def _check_size(shape: tuple[int, ...], size: int) -> None:
    if size < 1:
        raise ValueError(f"patch size must be >= 1, got {size}")
    if size > min(shape[-2], shape[-1]):
        raise ValueError(f"patch size {size} exceeds image shape {tuple(shape[-2:])}")


def random_origins(
    shape: tuple[int, int],
    count: int,
    size: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """[count, 2] uniformly random valid patch origins."""
    _check_size(shape, size)
    rows = rng.integers(0, shape[0] - size + 1, size=count)
    cols = rng.integers(0, shape[1] - size + 1, size=count)
    return np.stack([rows, cols], axis=1)


def extract_random_patches(item: Slice, count: int, size: int, seed: int) -> list[Patch]:
    if count < 0:
        raise ValueError(f"count must be >= 0, got {count}")
    origins = random_origins(item.shape, count, size, np.random.default_rng(seed))
    return [
        Patch(
            pixels=item.image[r:r + size, c:c + size].copy(),
            origin=(int(r), int(c)),
            source_slice=item.slice_id,
        )
        for r, c in origins
    ]


def grid_axis(length: int, size: int, stride: int, offset: int) -> list[int]:
    return list(range(offset, length - size + 1, stride))


def grid_origins(
    shape: tuple[int, int],
    size: int,
    stride: int,
    shift: tuple[int, int] = (0, 0),
) -> list[tuple[int, int]]:
    """Row-major origins (dr + i*stride, dc + j*stride) of in-bounds patches."""
    _check_size(shape, size)
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    dr, dc = int(shift[0]), int(shift[1])
    if not (0 <= dr < stride and 0 <= dc < stride):
        raise ValueError(f"shift {shift} must lie in [0, {stride}) on both axes")
    rows = grid_axis(shape[0], size, stride, dr)
    cols = grid_axis(shape[1], size, stride, dc)
    return [(r, c) for r in rows for c in cols]


def grid_shape(
    shape: tuple[int, int],
    size: int,
    stride: int,
    shift: tuple[int, int] = (0, 0),
) -> tuple[int, int]:
    return (
        len(grid_axis(shape[0], size, stride, shift[0])),
        len(grid_axis(shape[1], size, stride, shift[1])),
    )


def extract_grid_patches(
    image: np.ndarray,
    size: int,
    stride: int,
    shift: tuple[int, int] = (0, 0),
    source_slice: str = "",
) -> tuple[list[Patch], int]:
    origins = grid_origins(image.shape, size, stride, shift)
    patches = [
        Patch(pixels=image[r:r + size, c:c + size].copy(), origin=(r, c), source_slice=source_slice)
        for r, c in origins
    ]
    return patches, len(patches)
