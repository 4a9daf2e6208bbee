from __future__ import annotations

import json
import math
import time
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from uflossmri.config.schemas import UNetArch, UnrollConfig
from uflossmri.encode.cg import cg_solve
from uflossmri.encode.operator import KSpaceSample, encode_adjoint, stack_samples
from uflossmri.shared.containers import (
    arrays_to_state_dict,
    config_text,
    load_container,
    save_container,
    state_dict_to_arrays,
)
from uflossmri.shared.tensors import channels_to_complex, complex_dtype_for, complex_to_channels
from uflossmri.unrolled.unet import ResidualUNet


def _inverse_softplus(value: float) -> float:
    return math.log(math.expm1(value))


class MoDL(nn.Module):
    """Alternating shared denoiser and CG data consistency with a learned lam >= 0."""

    def __init__(
        self,
        denoiser: ResidualUNet,
        unrolls: int = 5,
        cg_steps: int = 6,
        lam_init: float = 0.05,
    ):
        super().__init__()
        if unrolls < 0 or cg_steps < 1:
            raise ValueError(f"need unrolls >= 0 and cg_steps >= 1, got {unrolls}, {cg_steps}")
        if lam_init <= 0:
            raise ValueError(f"lam_init must be > 0, got {lam_init}")
        self.denoiser = denoiser
        self.unrolls = int(unrolls)
        self.cg_steps = int(cg_steps)
        self.raw_lam = nn.Parameter(torch.tensor(_inverse_softplus(lam_init)))

    @classmethod
    def from_config(cls, arch: UNetArch, cfg: UnrollConfig, zero_head: bool = True) -> "MoDL":
        return cls(
            ResidualUNet(arch.scales, arch.base_channels, zero_head=zero_head),
            unrolls=cfg.unrolls,
            cg_steps=cfg.cg_steps,
            lam_init=cfg.lam_init,
        )

    @property
    def lam(self) -> torch.Tensor:
        return F.softplus(self.raw_lam)

    def denoise(self, x: torch.Tensor) -> torch.Tensor:
        """D_w on complex images [..., H, W] through their two-channel view."""
        batched = x.dim() == 2
        channels = complex_to_channels(x.unsqueeze(0) if batched else x)
        out = channels_to_complex(self.denoiser(channels.to(self.raw_lam.dtype)))
        if not bool(torch.isfinite(out).all()):
            raise RuntimeError("Non-finite output from the denoiser")
        return out[0] if batched else out

    def forward(self, y: torch.Tensor, maps: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        return modl_forward(y, maps, mask, self)


def modl_forward(
    y: torch.Tensor,
    maps: torch.Tensor,
    mask: torch.Tensor,
    model: MoDL,
    trace: list[dict[str, torch.Tensor]] | None = None,
) -> torch.Tensor:
    """x0 = E^H y; z_k = D(x_k); x_{k+1} = CG(E^H y + lam z_k, x0 = x_k). Returns x_unrolls."""
    zero_filled = encode_adjoint(y, maps, mask)
    x = zero_filled
    lam = model.lam.to(zero_filled.real.dtype)
    for _ in range(model.unrolls):
        z = model.denoise(x).to(zero_filled.dtype)
        rhs = zero_filled + lam * z
        x_next = cg_solve(rhs, maps, mask, lam, model.cg_steps, x0=x)
        if trace is not None:
            trace.append({"x": x, "z": z, "rhs": rhs, "x_next": x_next, "lam": lam})
        x = x_next
    return x


def _model_dtype(model: MoDL) -> torch.dtype:
    return complex_dtype_for(model.raw_lam.dtype)


@torch.no_grad()
def reconstruct(
    model: MoDL,
    samples: Sequence[KSpaceSample],
    batch_size: int = 8,
    device: torch.device | str = "cpu",
) -> np.ndarray:
    """Inference on k-space samples; returns complex images [N, H, W]."""
    was_training = model.training
    model.eval()
    outputs = []
    for start in range(0, len(samples), batch_size):
        y, maps, mask, _ = stack_samples(samples[start:start + batch_size], _model_dtype(model), device)
        outputs.append(modl_forward(y, maps, mask, model).cpu().numpy())
    model.train(was_training)
    return np.concatenate(outputs, axis=0).astype(np.complex128)


def time_reconstruction(
    model: MoDL,
    samples: Sequence[KSpaceSample],
    repeats: int = 5,
    device: torch.device | str = "cpu",
) -> float:
    """Median wall time in seconds of ``reconstruct`` over ``repeats`` runs (after one warm-up)."""
    reconstruct(model, samples[:1], device=device)
    timings = []
    for _ in range(max(1, repeats)):
        started = time.perf_counter()
        reconstruct(model, samples, device=device)
        if str(device).startswith("cuda"):
            torch.cuda.synchronize()
        timings.append(time.perf_counter() - started)
    return float(np.median(timings))


def save_recon_checkpoint(
    path: str | Path,
    model: MoDL,
    arch: UNetArch,
    cfg: UnrollConfig,
    meta: dict[str, Any] | None = None,
    extra: dict[str, Any] | None = None,
) -> Path:
    payload = {"unet": arch.model_dump(mode="json"), "unroll": cfg.model_dump(mode="json")}
    if extra:
        payload.update(extra)
    arrays = state_dict_to_arrays(model.denoiser)
    arrays["lam"] = np.array(float(model.lam.detach()))
    arrays["raw_lam"] = np.array(float(model.raw_lam.detach()))
    arrays["config"] = np.array(json.dumps(payload, sort_keys=True))
    return save_container(path, arrays, meta)


def load_recon_checkpoint(
    path: str | Path,
    device: torch.device | str = "cpu",
) -> tuple[MoDL, dict[str, Any]]:
    arrays, meta = load_container(path)
    payload = config_text(arrays)
    arch = UNetArch.model_validate(payload["unet"])
    cfg = UnrollConfig.model_validate(payload["unroll"])
    model = MoDL.from_config(arch, cfg)
    model.denoiser.load_state_dict(arrays_to_state_dict(arrays))
    if "raw_lam" not in arrays:
        raise ValueError(f"Reconstruction checkpoint {path} has no 'raw_lam' entry")
    with torch.no_grad():
        model.raw_lam.copy_(torch.tensor(float(arrays["raw_lam"])))
    payload["meta"] = meta
    return model.to(device).eval(), payload
