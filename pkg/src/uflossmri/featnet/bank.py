from __future__ import annotations

import torch
import torch.nn.functional as F


class MemoryBank:
    """One unit-norm feature row per training patch, indexed by patch identity."""

    def __init__(self, vectors: torch.Tensor):
        if vectors.dim() != 2 or vectors.shape[0] < 1:
            raise ValueError(f"Memory bank must be [N, d] with N >= 1, got {tuple(vectors.shape)}")
        self.vectors = vectors.detach().clone()

    @classmethod
    def random(
        cls,
        size: int,
        dim: int,
        seed: int = 0,
        dtype: torch.dtype = torch.float32,
        device: torch.device | str | None = None,
    ) -> "MemoryBank":
        generator = torch.Generator().manual_seed(seed)
        rows = torch.randn(size, dim, generator=generator, dtype=torch.float64)
        return cls(F.normalize(rows, dim=1).to(dtype=dtype, device=device))

    def __len__(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    @torch.no_grad()
    def update(self, indices: torch.Tensor, features: torch.Tensor, momentum: float = 0.0) -> None:
        """Replace rows ``indices`` by ``features``; momentum > 0 blends and renormalizes."""
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {momentum}")
        indices = indices.to(self.vectors.device).long().view(-1)
        fresh = features.detach().to(self.vectors)
        if momentum > 0.0:
            blended = self.vectors.index_select(0, indices) * momentum + fresh * (1.0 - momentum)
            fresh = F.normalize(blended, dim=1)
        self.vectors.index_copy_(0, indices, fresh)

    def norm_error(self) -> float:
        norms = torch.linalg.vector_norm(self.vectors.double(), dim=1)
        return float((norms - 1.0).abs().max())

    def to(self, *args, **kwargs) -> "MemoryBank":
        return MemoryBank(self.vectors.to(*args, **kwargs))


def instance_logits(v: torch.Tensor, bank: MemoryBank, tau: float) -> torch.Tensor:
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    return v @ bank.vectors.to(v).T / tau


def instance_probability(v: torch.Tensor, bank: MemoryBank, tau: float) -> torch.Tensor:
    """P(i | v) = exp(v_i.v / tau) / sum_j exp(v_j.v / tau), for v [d] or [B, d]."""
    logits = instance_logits(v, bank, tau)
    shifted = logits - logits.max(dim=-1, keepdim=True).values
    weights = torch.exp(shifted)
    return weights / weights.sum(dim=-1, keepdim=True)
