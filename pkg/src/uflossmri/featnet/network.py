from __future__ import annotations

from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from torchvision.models.resnet import BasicBlock

from uflossmri.config.schemas import FeatNetArch
from uflossmri.shared.tensors import complex_to_channels


class FeatureNet(nn.Module):
    """Residual patch encoder with an l2-normalized d-dim head.

    Input: complex patches [B, P, P] or their two-channel view [B, 2, P, P].
    """

    def __init__(
        self,
        patch_size: int,
        stage_blocks: Sequence[int] = (1, 1),
        base_width: int = 16,
        feature_dim: int = 64,
        stem: str = "compact",
    ):
        super().__init__()
        if not stage_blocks or any(count < 1 for count in stage_blocks):
            raise ValueError(f"stage_blocks must be non-empty with counts >= 1, got {stage_blocks}")
        self.patch_size = int(patch_size)
        self.feature_dim = int(feature_dim)

        if stem == "resnet":
            self.stem = nn.Sequential(
                nn.Conv2d(2, base_width, kernel_size=7, stride=2, padding=3, bias=False),
                nn.BatchNorm2d(base_width),
                nn.ReLU(inplace=True),
                nn.MaxPool2d(kernel_size=3, stride=2, padding=1),
            )
        elif stem == "compact":
            self.stem = nn.Sequential(
                nn.Conv2d(2, base_width, kernel_size=3, stride=1, padding=1, bias=False),
                nn.BatchNorm2d(base_width),
                nn.ReLU(inplace=True),
            )
        else:
            raise ValueError(f"Unknown stem '{stem}'. Expected one of: compact, resnet")

        stages: list[nn.Module] = []
        inplanes = base_width
        for index, count in enumerate(stage_blocks):
            planes = base_width * 2**index
            stride = 1 if index == 0 else 2
            stages.append(self._make_stage(inplanes, planes, count, stride))
            inplanes = planes
        self.stages = nn.Sequential(*stages)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.head = nn.Linear(inplanes, self.feature_dim)

    @staticmethod
    def _make_stage(inplanes: int, planes: int, blocks: int, stride: int) -> nn.Sequential:
        downsample = None
        if stride != 1 or inplanes != planes:
            downsample = nn.Sequential(
                nn.Conv2d(inplanes, planes, kernel_size=1, stride=stride, bias=False),
                nn.BatchNorm2d(planes),
            )
        layers = [BasicBlock(inplanes, planes, stride=stride, downsample=downsample)]
        layers.extend(BasicBlock(planes, planes) for _ in range(blocks - 1))
        return nn.Sequential(*layers)

    @classmethod
    def from_arch(cls, arch: FeatNetArch, patch_size: int) -> "FeatureNet":
        return cls(
            patch_size=patch_size,
            stage_blocks=arch.stage_blocks,
            base_width=arch.base_width,
            feature_dim=arch.feature_dim,
            stem=arch.stem,
        )

    def _as_channels(self, patches: torch.Tensor) -> torch.Tensor:
        if patches.is_complex():
            patches = complex_to_channels(patches)
        if patches.dim() == 3:
            patches = patches.unsqueeze(0)
        if patches.dim() != 4 or patches.shape[1] != 2:
            raise ValueError(f"Expected patches [B, 2, P, P], got shape {tuple(patches.shape)}")
        if tuple(patches.shape[-2:]) != (self.patch_size, self.patch_size):
            raise ValueError(
                f"Patch size {tuple(patches.shape[-2:])} does not match the trained size "
                f"{self.patch_size}x{self.patch_size}"
            )
        return patches

    def forward(self, patches: torch.Tensor) -> torch.Tensor:
        x = self._as_channels(patches)
        x = self.stages(self.stem(x))
        x = self.head(torch.flatten(self.pool(x), 1))
        features = F.normalize(x, dim=1)
        if not bool(torch.isfinite(features).all()):
            raise RuntimeError("Non-finite activations in feature network")
        return features


def _param_dtype(net: nn.Module) -> torch.dtype:
    return next(net.parameters()).dtype


def feature_map(patch: np.ndarray | torch.Tensor, net: FeatureNet) -> torch.Tensor:
    """Unit-norm feature vector [d] of one complex patch [P, P]."""
    tensor = torch.as_tensor(patch)
    if not tensor.is_complex():
        raise ValueError("feature_map expects a complex patch")
    dtype = torch.complex128 if _param_dtype(net) == torch.float64 else torch.complex64
    device = next(net.parameters()).device
    return net(tensor.to(dtype=dtype, device=device).unsqueeze(0))[0]


@torch.no_grad()
def embed_patches(
    net: FeatureNet,
    patches: np.ndarray | torch.Tensor,
    batch_size: int = 256,
) -> torch.Tensor:
    """Inference-mode features [N, d] for complex patches [N, P, P]."""
    was_training = net.training
    net.eval()
    device = next(net.parameters()).device
    dtype = torch.complex128 if _param_dtype(net) == torch.float64 else torch.complex64
    tensor = torch.as_tensor(patches).to(dtype=dtype)
    chunks = [
        net(tensor[start:start + batch_size].to(device))
        for start in range(0, tensor.shape[0], batch_size)
    ]
    net.train(was_training)
    return torch.cat(chunks, dim=0)
