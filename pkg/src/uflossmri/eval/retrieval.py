from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from uflossmri.data.patches import Patch, extract_grid_patches, grid_shape
from uflossmri.data.slices import Slice
from uflossmri.eval.metrics import ssim
from uflossmri.featnet.bank import MemoryBank
from uflossmri.featnet.network import embed_patches


def _query_scores(query: Patch, net: nn.Module, bank: MemoryBank) -> np.ndarray:
    if len(bank) == 0:
        raise ValueError("Cannot retrieve from an empty memory bank")
    feature = embed_patches(net, query.pixels[None])[0]
    scores = bank.vectors.to(feature) @ feature
    return scores.detach().cpu().numpy().astype(np.float64)


def _ranked(scores: np.ndarray, k: int, descending: bool) -> list[tuple[int, float]]:
    if not 1 <= k <= scores.shape[0]:
        raise ValueError(f"k must lie in [1, {scores.shape[0]}], got {k}")
    keys = -scores if descending else scores
    # primary key last: score, then lower index
    order = np.lexsort((np.arange(scores.shape[0]), keys))
    return [(int(index), float(scores[index])) for index in order[:k]]


def retrieve_neighbors(query: Patch, net: nn.Module, bank: MemoryBank, k: int) -> list[tuple[int, float]]:
    """Top-k bank rows by inner product with f(query), descending, ties to the lower index."""
    return _ranked(_query_scores(query, net, bank), k, descending=True)


def retrieve_farthest(query: Patch, net: nn.Module, bank: MemoryBank, k: int) -> list[tuple[int, float]]:
    """Bottom-k bank rows by inner product, ascending."""
    return _ranked(_query_scores(query, net, bank), k, descending=False)


def _target_grid(source: Patch, target: Slice, stride: int) -> tuple[list[Patch], tuple[int, int]]:
    size = source.size
    if source.pixels.shape != (size, size):
        raise ValueError(f"Source patch must be square, got {source.pixels.shape}")
    patches, count = extract_grid_patches(target.image, size, stride, (0, 0), target.slice_id)
    if count == 0:
        raise ValueError(f"Target {target.shape} holds no {size}x{size} patch")
    return patches, grid_shape(target.shape, size, stride)


@torch.no_grad()
def correlation_map(source: Patch, target: Slice, net: nn.Module, stride: int) -> np.ndarray:
    """Inner products <f(source), f(p_ij)> over the target's grid patches, shape [rows, cols]."""
    patches, shape = _target_grid(source, target, stride)
    features = embed_patches(net, np.stack([patch.pixels for patch in patches]))
    reference = embed_patches(net, source.pixels[None])[0]
    values = (features @ reference).cpu().numpy().astype(np.float64)
    return np.clip(values, -1.0, 1.0).reshape(shape)


def ssim_correlation_map(source: Patch, target: Slice, stride: int) -> np.ndarray:
    """SSIM between each target grid patch and the source patch, shape [rows, cols]."""
    patches, shape = _target_grid(source, target, stride)
    values = np.array([ssim(patch.pixels, source.pixels) for patch in patches], dtype=np.float64)
    return values.reshape(shape)
