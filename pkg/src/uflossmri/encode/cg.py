from __future__ import annotations

import torch

from uflossmri.encode.operator import encode_normal
from uflossmri.shared.tensors import vdot

_TINY = 1e-30


def _inner(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return vdot(a, b)[..., None, None]


def _safe_ratio(numerator: torch.Tensor, denominator: torch.Tensor) -> torch.Tensor:
    # Zero where the denominator vanishes; keeps gradients finite too
    valid = denominator.abs() > _TINY
    return torch.where(valid, numerator / torch.where(valid, denominator, torch.ones_like(denominator)), torch.zeros_like(numerator))


def cg_solve(
    rhs: torch.Tensor,
    maps: torch.Tensor,
    mask: torch.Tensor,
    lam: float | torch.Tensor,
    niter: int,
    x0: torch.Tensor | None = None,
) -> torch.Tensor:
    """Exactly ``niter`` CG iterations on (E^H E + lam I) x = rhs, starting at ``x0``.

    Batch-aware over leading dimensions and differentiable by ordinary autograd.
    """
    if niter < 0:
        raise ValueError(f"niter must be >= 0, got {niter}")
    if isinstance(lam, torch.Tensor):
        if bool((lam.detach() < 0).any()):
            raise ValueError("lam must be >= 0")
        if lam.dim() == 1:
            lam = lam[:, None, None]
    elif lam < 0:
        raise ValueError(f"lam must be >= 0, got {lam}")

    x = torch.zeros_like(rhs) if x0 is None else x0
    if niter == 0:
        return x

    r = rhs - encode_normal(x, maps, mask, lam)
    p = r
    rs = _inner(r, r)
    for step in range(niter):
        ap = encode_normal(p, maps, mask, lam)
        alpha = _safe_ratio(rs, _inner(p, ap))
        x = x + alpha * p
        r = r - alpha * ap
        rs_next = _inner(r, r)
        beta = _safe_ratio(rs_next, rs)
        p = r + beta * p
        rs = rs_next
        if not bool(torch.isfinite(rs).all()) or not bool(torch.isfinite(x).all()):
            raise RuntimeError(f"Non-finite value in CG iteration {step + 1}")
    return x


def data_consistency_residual(
    x: torch.Tensor,
    rhs: torch.Tensor,
    maps: torch.Tensor,
    mask: torch.Tensor,
    lam: float | torch.Tensor,
) -> torch.Tensor:
    """Per-item norm of (E^H E + lam I) x - rhs."""
    if isinstance(lam, torch.Tensor) and lam.dim() == 1:
        lam = lam[:, None, None]
    residual = encode_normal(x, maps, mask, lam) - rhs
    return torch.linalg.vector_norm(residual, dim=(-2, -1))
