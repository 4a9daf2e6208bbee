from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


class ConvBlock(nn.Sequential):
    def __init__(self, in_channels: int, out_channels: int):
        super().__init__(
            nn.Conv2d(in_channels, out_channels, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(out_channels, out_channels, 3, padding=1),
            nn.ReLU(inplace=True),
        )


class ResidualUNet(nn.Module):
    """U-Net on the two-channel view with a residual output, D(x) = x + head(u(x)).

    ``scales`` resolution levels with channel doubling per level. With
    ``zero_head`` the output convolution starts at zero so D is the identity at
    initialisation and D(0) = 0. Inputs whose sides are not multiples of
    2**(scales - 1) are zero-padded and cropped back.
    """

    def __init__(self, scales: int = 2, base_channels: int = 16, zero_head: bool = True):
        super().__init__()
        if scales < 1:
            raise ValueError(f"scales must be >= 1, got {scales}")
        self.scales = int(scales)
        widths = [base_channels * 2**level for level in range(self.scales)]

        self.encoders = nn.ModuleList()
        in_channels = 2
        for width in widths:
            self.encoders.append(ConvBlock(in_channels, width))
            in_channels = width
        self.pool = nn.MaxPool2d(2)

        self.decoders = nn.ModuleList()
        for level in reversed(range(self.scales - 1)):
            self.decoders.append(ConvBlock(widths[level + 1] + widths[level], widths[level]))

        self.head = nn.Conv2d(widths[0], 2, 1)
        if zero_head:
            nn.init.zeros_(self.head.weight)
            nn.init.zeros_(self.head.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        height, width = x.shape[-2:]
        block = 2 ** (self.scales - 1)
        pad_h = (-height) % block
        pad_w = (-width) % block
        u = F.pad(x, (0, pad_w, 0, pad_h)) if pad_h or pad_w else x

        skips = []
        for index, encoder in enumerate(self.encoders):
            if index > 0:
                u = self.pool(u)
            u = encoder(u)
            skips.append(u)
        skips.pop()
        for decoder in self.decoders:
            skip = skips.pop()
            u = F.interpolate(u, size=skip.shape[-2:], mode="bilinear", align_corners=False)
            u = decoder(torch.cat([u, skip], dim=1))

        residual = self.head(u)[..., :height, :width]
        return x + residual
