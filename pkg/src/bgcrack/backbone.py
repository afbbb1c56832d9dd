"""Hierarchical feature extractor: stem cell + four stacked conv blocks."""

from dataclasses import dataclass, field

import torch
import torch.nn as nn


@dataclass
class BackboneConfig:
    stem_channels: int = 16
    stage_channels: list[int] = field(default_factory=lambda: [32, 64, 96, 128])
    dw_kernel: int = 7

    def __post_init__(self):
        if self.dw_kernel != 7:
            raise ValueError("depth-wise kernel size is fixed to 7")
        if len(self.stage_channels) != 4:
            raise ValueError("four stage widths required")
        if not all(a < b for a, b in zip(self.stage_channels, self.stage_channels[1:])):
            raise ValueError("stage widths must be strictly increasing")


@dataclass
class PyramidFeatures:
    """Stem output (stride 4) plus the four stage outputs at strides 4/8/16/32."""

    stem: torch.Tensor
    levels: list[torch.Tensor]  # levels[k-1] at stride 2**(k+1)


def check_image(img):
    if img.dim() != 4 or img.shape[1] != 3:
        raise ValueError(f"expected [B,3,H,W] image tensor, got {tuple(img.shape)}")
    h, w = img.shape[-2:]
    if h % 32 != 0 or w % 32 != 0:
        raise ValueError(f"image size {h}x{w} not divisible by 32")
    return img


class StemCell(nn.Module):
    """4x downsample: 3x3 conv (stride 2) -> 7x7 depth-wise conv -> 2x2 max pool."""

    def __init__(self, out_channels, dw_kernel=7):
        super().__init__()
        self.conv = nn.Conv2d(3, out_channels, 3, stride=2, padding=1)
        self.dwconv = nn.Conv2d(out_channels, out_channels, dw_kernel,
                                padding=dw_kernel // 2, groups=out_channels)
        self.pool = nn.MaxPool2d(2, stride=2)

    def forward(self, x):
        check_image(x)
        return self.pool(self.dwconv(self.conv(x)))


class ConvBlock(nn.Module):
    """Conv -> Norm -> Conv -> Non-linearity: 3x3 conv, BN, 7x7 depth-wise conv, SiLU."""

    def __init__(self, in_channels, out_channels, dw_kernel=7):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.norm = nn.BatchNorm2d(out_channels)
        self.dwconv = nn.Conv2d(out_channels, out_channels, dw_kernel,
                                padding=dw_kernel // 2, groups=out_channels)
        self.act = nn.SiLU()

    def forward(self, x):
        if x.shape[1] != self.conv.in_channels:
            raise ValueError(f"expected {self.conv.in_channels} channels, got {x.shape[1]}")
        return self.act(self.dwconv(self.norm(self.conv(x))))


class Backbone(nn.Module):
    """Stem + four conv blocks with 2x2 max pooling plugged between blocks.

    The first block runs at the stem stride (4), so the four outputs sit at
    strides 4, 8, 16 and 32.
    """

    def __init__(self, cfg: BackboneConfig | None = None):
        super().__init__()
        cfg = cfg or BackboneConfig()
        self.cfg = cfg
        self.stem = StemCell(cfg.stem_channels, cfg.dw_kernel)
        widths = [cfg.stem_channels] + list(cfg.stage_channels)
        self.blocks = nn.ModuleList([
            ConvBlock(widths[k], widths[k + 1], cfg.dw_kernel) for k in range(4)
        ])
        self.pool = nn.MaxPool2d(2, stride=2)

    def forward(self, img) -> PyramidFeatures:
        x_s = self.stem(img)
        levels = []
        x = x_s
        for k, block in enumerate(self.blocks):
            if k > 0:
                x = self.pool(x)
            x = block(x)
            levels.append(x)
        return PyramidFeatures(stem=x_s, levels=levels)


def init_weights(module):
    """Fan-in-scaled uniform conv kernels (torch default), zeroed biases.

    Apply with ``model.apply(init_weights)`` after construction.
    """
    if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
        if module.bias is not None:
            nn.init.zeros_(module.bias)
