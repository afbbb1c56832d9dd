"""Global information perception: a real-FFT spectral branch and a patch
transformer branch fused with the input through learned scalars."""

from dataclasses import dataclass

import torch
import torch.nn as nn


def rfft2(x):
    """Per-channel 2D DFT of a real map, redundant half-spectrum dropped.

    Returns a complex tensor [..., H, W//2 + 1] (unnormalized forward).
    """
    return torch.fft.rfft2(x, dim=(-2, -1), norm="backward")


def irfft2(spectrum, height, width):
    """Inverse of :func:`rfft2`, recovering a real [..., H, W] map."""
    if spectrum.shape[-2] != height or spectrum.shape[-1] != width // 2 + 1:
        raise ValueError(
            f"spectrum {tuple(spectrum.shape[-2:])} inconsistent with ({height}, {width})")
    return torch.fft.irfft2(spectrum, s=(height, width), dim=(-2, -1), norm="backward")


def unfold_patches(x, patch_h, patch_w):
    """[B, C, H, W] -> [B, N, P, C] non-overlapping flattened patches.

    Patch (a, b) at intra-patch position (u, v) holds x[:, :, a*ph+u, b*pw+v].
    """
    b, c, h, w = x.shape
    if h % patch_h != 0 or w % patch_w != 0:
        raise ValueError(f"{h}x{w} map not divisible by {patch_h}x{patch_w} patches")
    gh, gw = h // patch_h, w // patch_w
    x = x.reshape(b, c, gh, patch_h, gw, patch_w)
    x = x.permute(0, 2, 4, 3, 5, 1)  # [B, gh, gw, ph, pw, C]
    return x.reshape(b, gh * gw, patch_h * patch_w, c)


def fold_patches(patches, height, width, patch_h, patch_w):
    """Exact inverse of :func:`unfold_patches`."""
    b, n, p, c = patches.shape
    gh, gw = height // patch_h, width // patch_w
    if n != gh * gw or p != patch_h * patch_w:
        raise ValueError(f"patch grid {n}x{p} inconsistent with {height}x{width}")
    x = patches.reshape(b, gh, gw, patch_h, patch_w, c)
    x = x.permute(0, 5, 1, 3, 2, 4)  # [B, C, gh, ph, gw, pw]
    return x.reshape(b, c, height, width)


@dataclass
class GipConfig:
    expand_dim: int | None = None  # width d inside the transformer branch, default 2C
    local_kernel: int = 3          # depth-wise kernel of the local block (covers a patch)
    patch_h: int = 2
    patch_w: int = 2
    depth: int = 2
    heads: int = 4
    mlp_ratio: int = 2

    def __post_init__(self):
        if self.patch_h > self.local_kernel or self.patch_w > self.local_kernel:
            raise ValueError("local receptive field must cover the patch size")


class ChannelLayerNorm(nn.Module):
    """Layer norm over the channel axis of a [B, C, H, W] map, channel-wise affine."""

    def __init__(self, channels, eps=1e-6):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.eps = eps

    def forward(self, x):
        mean = x.mean(dim=1, keepdim=True)
        var = x.var(dim=1, keepdim=True, unbiased=False)
        x = (x - mean) / torch.sqrt(var + self.eps)
        return self.weight[:, None, None] * x + self.bias[:, None, None]


class ConvPairBlock(nn.Module):
    """3x3 Conv -> BN -> 3x3 Conv -> SiLU."""

    def __init__(self, in_channels, out_channels):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(in_channels, out_channels, 3, padding=1),
            nn.BatchNorm2d(out_channels),
            nn.Conv2d(out_channels, out_channels, 3, padding=1),
            nn.SiLU(),
        )

    def forward(self, x):
        return self.block(x)


class SpectralBranch(nn.Module):
    """Frequency-domain path: RFFT -> conv block on stacked real/imag -> inverse RFFT.

    The spectral block follows BN -> DW Conv -> BN -> PW Conv (to 2C/4) -> SiLU
    -> PW Conv (back to 2C); the recovered map passes a two-conv block.
    """

    def __init__(self, channels, dw_kernel=7):
        super().__init__()
        c2 = 2 * channels
        squeezed = max(1, c2 // 4)
        self.spectral = nn.Sequential(
            nn.BatchNorm2d(c2),
            nn.Conv2d(c2, c2, dw_kernel, padding=dw_kernel // 2, groups=c2),
            nn.BatchNorm2d(c2),
            nn.Conv2d(c2, squeezed, 1),
            nn.SiLU(),
            nn.Conv2d(squeezed, c2, 1),
        )
        for mod in self.spectral:
            if isinstance(mod, nn.Conv2d):
                mod.spectral_domain = True  # runs on the half-spectrum geometry
        self.out = ConvPairBlock(channels, channels)

    def forward(self, x):
        h, w = x.shape[-2:]
        spec = rfft2(x)
        z = torch.cat([spec.real, spec.imag], dim=1)  # [B, 2C, H, W//2+1]
        z = self.spectral(z)
        real, imag = z.chunk(2, dim=1)
        y = irfft2(torch.complex(real, imag), h, w)
        return self.out(y)


class PatchAttention(nn.Module):
    """Multi-head self-attention over a [batch, tokens, dim] sequence."""

    def __init__(self, dim, heads):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"head count {heads} must divide width {dim}")
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x):
        b, n, d = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.heads, d // self.heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)  # each [B, heads, N, d/heads]
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, d)
        return self.proj(out)


class TransformerBlock(nn.Module):
    """Pre-norm attention + MLP with residuals; channel-wise-affine layer norm."""

    def __init__(self, dim, heads, mlp_ratio):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = PatchAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, mlp_ratio * dim), nn.SiLU(), nn.Linear(mlp_ratio * dim, dim))

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class PatchTransformer(nn.Module):
    """Attention across the N patches, run independently per intra-patch position."""

    def __init__(self, dim, depth, heads, mlp_ratio):
        super().__init__()
        self.blocks = nn.ModuleList(
            [TransformerBlock(dim, heads, mlp_ratio) for _ in range(depth)])

    def forward(self, patches):
        b, n, p, d = patches.shape
        # every intra-patch position is its own length-N sequence
        x = patches.permute(0, 2, 1, 3).reshape(b * p, n, d)
        for block in self.blocks:
            x = block(x)
        return x.reshape(b, p, n, d).permute(0, 2, 1, 3)


class LocalGlobalBranch(nn.Module):
    """Time-domain path: expand, local conv block, patch attention, project back.

    The local depth-wise conv uses replicate padding so spatially uniform maps
    stay uniform. Patch sizes clamp to the map size so minimal-geometry inputs
    (down to 1x1) stay legal.
    """

    def __init__(self, channels, cfg: GipConfig):
        super().__init__()
        dim = cfg.expand_dim or 2 * channels
        if dim <= channels:
            raise ValueError(f"expanded width {dim} must exceed {channels}")
        self.cfg = cfg
        self.expand = nn.Conv2d(channels, dim, 1)
        k = cfg.local_kernel
        self.local = nn.Sequential(
            ChannelLayerNorm(dim),
            nn.Conv2d(dim, dim, k, padding=k // 2, groups=dim, padding_mode="replicate"),
            ChannelLayerNorm(dim),
            nn.Conv2d(dim, dim, 1),
        )
        self.transformer = PatchTransformer(dim, cfg.depth, cfg.heads, cfg.mlp_ratio)
        self.project = nn.Conv2d(dim, channels, 1)

    def forward(self, x):
        h, w = x.shape[-2:]
        ph, pw = min(self.cfg.patch_h, h), min(self.cfg.patch_w, w)
        z = self.local(self.expand(x))
        patches = unfold_patches(z, ph, pw)
        patches = self.transformer(patches)
        z = fold_patches(patches, h, w, ph, pw)
        return self.project(z)


class GlobalPerception(nn.Module):
    """Three-way fusion of the spectral branch, the input, and the patch branch."""

    def __init__(self, channels, cfg: GipConfig | None = None, dw_kernel=7):
        super().__init__()
        cfg = cfg or GipConfig()
        self.spectral = SpectralBranch(channels, dw_kernel)
        self.patches = LocalGlobalBranch(channels, cfg)
        self.w1 = nn.Parameter(torch.tensor(1.0))
        self.w2 = nn.Parameter(torch.tensor(1.0))
        self.w3 = nn.Parameter(torch.tensor(1.0))
        self.fuse = ConvPairBlock(channels, channels)

    def forward(self, x):
        mixed = self.w1 * self.spectral(x) + self.w2 * x + self.w3 * self.patches(x)
        return self.fuse(mixed)
