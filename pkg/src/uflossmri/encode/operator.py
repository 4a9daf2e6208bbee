from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import torch

from uflossmri.data.slices import Dataset, Slice
from uflossmri.encode.fft import fft2c, ifft2c
from uflossmri.encode.masks import SamplingMask
from uflossmri.shared.containers import load_container, save_container
from uflossmri.shared.tensors import real_dtype_for, vdot


def _check_shapes(image_shape: torch.Size, maps: torch.Tensor, mask: torch.Tensor) -> None:
    if maps.dim() < 3:
        raise ValueError(f"maps must be [..., C, H, W], got shape {tuple(maps.shape)}")
    if tuple(maps.shape[-2:]) != tuple(image_shape[-2:]) or tuple(mask.shape[-2:]) != tuple(image_shape[-2:]):
        raise ValueError(
            "Shape mismatch: image "
            f"{tuple(image_shape[-2:])}, maps {tuple(maps.shape[-2:])}, mask {tuple(mask.shape[-2:])}"
        )


def encode_forward(x: torch.Tensor, maps: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """E x = U F S x. x: [..., H, W]; maps: [..., C, H, W]; mask: [..., H, W] -> [..., C, H, W]."""
    _check_shapes(x.shape, maps, mask)
    mask_c = mask.to(real_dtype_for(x.dtype)).unsqueeze(-3)
    return mask_c * fft2c(maps * x.unsqueeze(-3))


def encode_adjoint(y: torch.Tensor, maps: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """E^H y = sum_c conj(S_c) F^H U y_c. y: [..., C, H, W] -> [..., H, W]."""
    if y.dim() < 3:
        raise ValueError(f"k-space must be [..., C, H, W], got shape {tuple(y.shape)}")
    _check_shapes(y.shape, maps, mask)
    if y.shape[-3] != maps.shape[-3]:
        raise ValueError(f"Coil count mismatch: k-space {y.shape[-3]}, maps {maps.shape[-3]}")
    mask_c = mask.to(real_dtype_for(y.dtype)).unsqueeze(-3)
    return torch.sum(maps.conj() * ifft2c(mask_c * y), dim=-3)


def encode_normal(x: torch.Tensor, maps: torch.Tensor, mask: torch.Tensor, lam: float | torch.Tensor = 0.0) -> torch.Tensor:
    """(E^H E + lam I) x."""
    return encode_adjoint(encode_forward(x, maps, mask), maps, mask) + lam * x


@dataclass(frozen=True, eq=False)
class EncodingOperator:
    maps: torch.Tensor
    mask: torch.Tensor

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return encode_forward(x, self.maps, self.mask)

    def adjoint(self, y: torch.Tensor) -> torch.Tensor:
        return encode_adjoint(y, self.maps, self.mask)

    def normal(self, x: torch.Tensor, lam: float | torch.Tensor = 0.0) -> torch.Tensor:
        return encode_normal(x, self.maps, self.mask, lam)


@dataclass(frozen=True, eq=False)
class KSpaceSample:
    y: np.ndarray
    maps: np.ndarray
    mask: SamplingMask
    target: Slice

    def __post_init__(self) -> None:
        if np.any(self.y[:, self.mask.mask == 0] != 0):
            raise ValueError("k-space must be zero wherever the mask is zero")

    def tensors(self, dtype: torch.dtype = torch.complex64, device: torch.device | str | None = None):
        """(y, maps, mask, target) as torch tensors."""
        return (
            torch.as_tensor(self.y, dtype=dtype, device=device),
            torch.as_tensor(self.maps, dtype=dtype, device=device),
            torch.as_tensor(self.mask.mask, dtype=real_dtype_for(dtype), device=device),
            torch.as_tensor(self.target.image, dtype=dtype, device=device),
        )

    def operator(self, dtype: torch.dtype = torch.complex128) -> EncodingOperator:
        _, maps, mask, _ = self.tensors(dtype)
        return EncodingOperator(maps, mask)

    def zero_filled(self) -> np.ndarray:
        y = torch.as_tensor(self.y, dtype=torch.complex128)
        return self.operator().adjoint(y).numpy()


def make_kspace_sample(target: Slice, maps: np.ndarray, mask: SamplingMask) -> KSpaceSample:
    """Retrospective undersampling: y = E(target)."""
    x = torch.as_tensor(target.image, dtype=torch.complex128)
    s = torch.as_tensor(maps, dtype=torch.complex128)
    u = torch.as_tensor(mask.mask, dtype=torch.float64)
    y = encode_forward(x, s, u).numpy()
    return KSpaceSample(y=y, maps=np.asarray(maps, dtype=np.complex128), mask=mask, target=target)


def simulate_samples(
    dataset: Dataset,
    maps_for: Callable[[int, Slice], np.ndarray],
    mask_for: Callable[[int, Slice], SamplingMask],
) -> list[KSpaceSample]:
    return [
        make_kspace_sample(item, maps_for(index, item), mask_for(index, item))
        for index, item in enumerate(dataset.slices)
    ]


def save_samples(samples: Sequence[KSpaceSample], path: str | Path, meta: dict[str, Any] | None = None) -> Path:
    if not samples:
        raise ValueError("Cannot save an empty sample list")
    first = samples[0].mask
    payload = dict(meta or {})
    payload.update({"mask_kind": first.kind, "acceleration": first.acceleration})
    arrays = {
        "kspace": np.stack([s.y for s in samples]).astype(np.complex64),
        "maps": np.stack([s.maps for s in samples]).astype(np.complex64),
        "mask": np.stack([s.mask.mask for s in samples]).astype(np.uint8),
        "image": np.stack([s.target.image for s in samples]).astype(np.complex64),
        "contrast": np.array([s.target.contrast_tag for s in samples]),
        "subject": np.array([s.target.subject_id for s in samples]),
        "slice_id": np.array([s.target.slice_id for s in samples]),
    }
    return save_container(path, arrays, payload)


def load_samples(path: str | Path) -> list[KSpaceSample]:
    arrays, meta = load_container(path)
    for key in ("kspace", "maps", "mask", "image"):
        if key not in arrays:
            raise ValueError(f"Sample file {path} is missing key '{key}'")
    samples: list[KSpaceSample] = []
    for index in range(arrays["kspace"].shape[0]):
        target = Slice(
            image=arrays["image"][index].astype(np.complex128),
            contrast_tag=str(arrays["contrast"][index]),
            subject_id=str(arrays["subject"][index]),
            slice_id=str(arrays["slice_id"][index]),
        )
        mask = SamplingMask(
            mask=arrays["mask"][index].astype(np.uint8),
            acceleration=float(meta.get("acceleration", 1.0)),
            kind=meta.get("mask_kind", "random1d"),
        )
        samples.append(
            KSpaceSample(
                y=arrays["kspace"][index].astype(np.complex128),
                maps=arrays["maps"][index].astype(np.complex128),
                mask=mask,
                target=target,
            )
        )
    return samples


def stack_samples(
    samples: Sequence[KSpaceSample],
    dtype: torch.dtype = torch.complex64,
    device: torch.device | str | None = None,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """Batch (y, maps, mask, target) tensors for a minibatch of samples."""
    parts = [sample.tensors(dtype, device) for sample in samples]
    return tuple(torch.stack([part[i] for part in parts]) for i in range(4))  # type: ignore[return-value]


def estimate_lipschitz(
    maps: torch.Tensor,
    mask: torch.Tensor,
    niter: int = 30,
    seed: int = 0,
) -> float:
    """Largest eigenvalue of E^H E by power iteration."""
    generator = torch.Generator().manual_seed(seed)
    dtype = maps.dtype
    shape = tuple(maps.shape[-2:])
    real = torch.randn(shape, generator=generator, dtype=torch.float64)
    imag = torch.randn(shape, generator=generator, dtype=torch.float64)
    x = torch.complex(real, imag).to(dtype=dtype, device=maps.device)
    x = x / torch.linalg.vector_norm(x)
    value = 0.0
    with torch.no_grad():
        for _ in range(max(1, niter)):
            z = encode_normal(x, maps, mask)
            value = float(vdot(x, z))
            norm = torch.linalg.vector_norm(z)
            if float(norm) == 0.0:
                return 0.0
            x = z / norm
    return value
