"""High-frequency enhancement: parallel spatial- and channel-wise attention on DCT bases."""

import math
from dataclasses import dataclass

import torch
import torch.nn as nn


def dct_basis_1d(freq, length):
    """Unnormalized DCT-II basis vector: cos(pi * f * (2c + 1) / (2L)) for c in [0, L).

    Computed and returned in float64; callers cast to the working dtype.
    """
    if not 0 <= freq < length:
        raise ValueError(f"frequency {freq} out of range [0, {length})")
    c = torch.arange(length, dtype=torch.float64)
    return torch.cos(math.pi * freq * (2 * c + 1) / (2 * length))


def dct_basis_2d(freq_h, freq_w, height, width):
    """Separable 2D basis plane: outer product of the two 1D bases."""
    if not 0 <= freq_h < height:
        raise ValueError(f"row frequency {freq_h} out of range [0, {height})")
    if not 0 <= freq_w < width:
        raise ValueError(f"column frequency {freq_w} out of range [0, {width})")
    return torch.outer(dct_basis_1d(freq_h, height), dct_basis_1d(freq_w, width))


def default_freqs_1d(channels, k=8):
    """Evenly spaced channel frequencies i * floor(C/k); duplicates clipped."""
    step = channels // k
    freqs = []
    for i in range(k):
        f = i * step
        if f not in freqs:
            freqs.append(f)
    return freqs


@dataclass
class HfieConfig:
    k1: int = 8  # number of 1D (channel-axis) frequencies
    k2: int = 8  # number of 2D (spatial) frequencies
    reduction: int = 8

    def __post_init__(self):
        if min(self.k1, self.k2, self.reduction) < 1:
            raise ValueError("k1, k2 and reduction must be positive")


class SpatialFreqEnhance(nn.Module):
    """Gate every spatial position by its multi-frequency channel statistics.

    Each 1D basis reweights the channels; channel-wise max and sum collapse the
    result to 2*k1 planes which a 3x3 conv + sigmoid turns into a spatial gate.
    """

    def __init__(self, channels, cfg: HfieConfig):
        super().__init__()
        if channels < cfg.k1:
            raise ValueError(f"need at least {cfg.k1} channels, got {channels}")
        freqs = default_freqs_1d(channels, cfg.k1)
        basis = torch.stack([dct_basis_1d(f, channels) for f in freqs])  # [k1, C]
        self.register_buffer("basis", basis.to(torch.get_default_dtype()))
        self.conv = nn.Conv2d(2 * len(freqs), 1, 3, padding=1)

    def forward(self, x):
        # [B, k1, C, H, W]: channel-wise multiplication by each basis vector
        scaled = x.unsqueeze(1) * self.basis[None, :, :, None, None]
        planes = torch.cat([scaled.amax(dim=2), scaled.sum(dim=2)], dim=1)
        gate = torch.sigmoid(self.conv(planes))  # [B, 1, H, W]
        return gate * x


class ChannelFreqEnhance(nn.Module):
    """Gate every channel from multi-frequency spatial statistics.

    Each 2D basis reweights the spatial plane; per-frequency point-wise convs
    compress to C/k2 channels and the concatenation restores C. Global max and
    spatial sum feed two MLPs whose mix is squashed into a channel gate.
    """

    def __init__(self, channels, cfg: HfieConfig):
        super().__init__()
        if channels % cfg.k2 != 0:
            raise ValueError(f"{cfg.k2} must divide the channel count {channels}")
        if channels % cfg.reduction != 0:
            raise ValueError(f"reduction {cfg.reduction} must divide {channels}")
        self.k2 = cfg.k2
        self.compress = nn.ModuleList([
            nn.Conv2d(channels, channels // cfg.k2, 1) for _ in range(cfg.k2)
        ])
        hidden = channels // cfg.reduction
        self.mlp_max = nn.Sequential(
            nn.Linear(channels, hidden), nn.SiLU(), nn.Linear(hidden, channels))
        self.mlp_sum = nn.Sequential(
            nn.Linear(channels, hidden), nn.SiLU(), nn.Linear(hidden, channels))
        self.w1 = nn.Parameter(torch.tensor(1.0))
        self.w2 = nn.Parameter(torch.tensor(1.0))

    def spatial_bases(self, height, width, device, dtype):
        # default 2D frequencies (i*floor(H/8), i*floor(W/8)), i = 0..k2-1
        planes = [
            dct_basis_2d(i * (height // self.k2), i * (width // self.k2), height, width)
            for i in range(self.k2)
        ]
        return torch.stack(planes).to(device=device, dtype=dtype)  # [k2, H, W]

    def forward(self, x):
        b, c, h, w = x.shape
        bases = self.spatial_bases(h, w, x.device, x.dtype)
        pieces = [conv(x * bases[i][None, None]) for i, conv in enumerate(self.compress)]
        mixed = torch.cat(pieces, dim=1)  # [B, C, H, W]
        max_vec = mixed.amax(dim=(2, 3))
        sum_vec = mixed.sum(dim=(2, 3))
        gate = torch.sigmoid(self.w1 * self.mlp_max(max_vec) + self.w2 * self.mlp_sum(sum_vec))
        return gate[:, :, None, None] * x


class HighFreqEnhance(nn.Module):
    """Learned mix of the spatial-wise and channel-wise frequency gates."""

    def __init__(self, channels, cfg: HfieConfig | None = None):
        super().__init__()
        cfg = cfg or HfieConfig()
        self.spatial = SpatialFreqEnhance(channels, cfg)
        self.channel = ChannelFreqEnhance(channels, cfg)
        self.w1 = nn.Parameter(torch.tensor(1.0))
        self.w2 = nn.Parameter(torch.tensor(1.0))

    def forward(self, x):
        return self.w1 * self.spatial(x) + self.w2 * self.channel(x)
