"""Edge/body decoding: feature embedding, intra-stream self fusion, cross-stream
optimization, dense phase connections, and hierarchical fusion to logit maps."""

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import Backbone, BackboneConfig, init_weights
from .gip import GipConfig, GlobalPerception
from .hfie import HfieConfig, HighFreqEnhance


@dataclass
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    hfie: HfieConfig = field(default_factory=HfieConfig)
    gip: GipConfig = field(default_factory=GipConfig)
    embed_channels: int = 32
    dw_kernel: int = 7
    use_edge: bool = True
    use_hfie: bool = True
    use_gip: bool = True

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key, sub in (("backbone", BackboneConfig), ("hfie", HfieConfig), ("gip", GipConfig)):
            if key in d and isinstance(d[key], dict):
                d[key] = sub(**d[key])
        return cls(**d)

    def to_dict(self):
        return {
            "backbone": vars(self.backbone).copy(),
            "hfie": vars(self.hfie).copy(),
            "gip": vars(self.gip).copy(),
            "embed_channels": self.embed_channels,
            "dw_kernel": self.dw_kernel,
            "use_edge": self.use_edge,
            "use_hfie": self.use_hfie,
            "use_gip": self.use_gip,
        }


@dataclass
class PredictionPair:
    """Body/edge probability maps with the logits they were squashed from.

    ``logit_body`` already contains the edge refinement, so each probability is
    exactly the sigmoid of its stored logit. Edge fields are None when the edge
    stream is ablated.
    """

    prob_body: torch.Tensor
    logit_body: torch.Tensor
    prob_edge: torch.Tensor | None = None
    logit_edge: torch.Tensor | None = None


def final_fuse(body_logits, edge_logits):
    """Refine the body prediction with the edge logits (union in logit space)."""
    if edge_logits is None:
        return PredictionPair(torch.sigmoid(body_logits), body_logits)
    if body_logits.shape != edge_logits.shape:
        raise ValueError("body and edge logit maps must share a shape")
    fused = body_logits + edge_logits
    return PredictionPair(torch.sigmoid(fused), fused, torch.sigmoid(edge_logits), edge_logits)


def dense_add(current, history):
    """Element-wise sum of the current per-level maps with all earlier phases."""
    out = list(current)
    for state in history:
        if len(state) != len(out):
            raise ValueError("phase states must hold the same number of levels")
        for j, t in enumerate(state):
            if t.shape != out[j].shape:
                raise ValueError(f"level {j} geometry mismatch across phases")
            out[j] = out[j] + t
    return out


class FeatureEmbed(nn.Module):
    """Project a pyramid level to the shared decoder width: PW conv -> BN -> SiLU -> 3x3 conv."""

    def __init__(self, in_channels, out_channels):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(in_channels, out_channels, 1),
            nn.BatchNorm2d(out_channels),
            nn.SiLU(),
            nn.Conv2d(out_channels, out_channels, 3, padding=1),
        )

    def forward(self, x):
        return self.block(x)


class SelfFusion(nn.Module):
    """Intra-stream multi-scale exchange over the four levels.

    An upsampling branch walks level 4 -> 1 (bilinear x2 + 3x3 conv, fused
    additively with each level); a downsampling branch walks 1 -> 4 (2x2 max
    pool + 3x3 conv). Outputs are the pairwise sums of the two branches.
    """

    def __init__(self, channels):
        super().__init__()
        def conv():
            return nn.Conv2d(channels, channels, 3, padding=1)
        self.up_convs = nn.ModuleList([conv() for _ in range(3)])    # steps into levels 3,2,1
        self.down_convs = nn.ModuleList([conv() for _ in range(3)])  # steps into levels 2,3,4
        self.pool = nn.MaxPool2d(2, stride=2)

    @staticmethod
    def _up(x, target):
        return F.interpolate(x, size=target.shape[-2:], mode="bilinear", align_corners=False)

    def forward(self, levels):
        f1, f2, f3, f4 = levels
        u3 = self.up_convs[0](self._up(f4, f3)) + f3
        u2 = self.up_convs[1](self._up(u3, f2)) + f2
        u1 = self.up_convs[2](self._up(u2, f1)) + f1
        d2 = self.down_convs[0](self.pool(f1)) + f2
        d3 = self.down_convs[1](self.pool(d2)) + f3
        d4 = self.down_convs[2](self.pool(d3)) + f4
        return [u1 + f1, u2 + d2, u3 + d3, f4 + d4]


class CrossOptim(nn.Module):
    """Edge/body cross refinement with per-level learnable weight vectors.

    Each edge level is refined by the sigmoid-gated same-or-higher body levels
    (intersection); each body level absorbs the same-or-higher edge levels
    additively (union). Weight index 0 is the identity term.
    """

    def __init__(self, init_self=1.0, init_refine=0.1):
        super().__init__()
        def vec(j):
            v = torch.full((6 - j,), init_refine)
            v[0] = init_self
            return nn.Parameter(v)
        self.edge_weights = nn.ParameterList([vec(j) for j in range(1, 5)])
        self.body_weights = nn.ParameterList([vec(j) for j in range(1, 5)])

    @staticmethod
    def _resize(x, size):
        if x.shape[-2:] == size:
            return x
        return F.interpolate(x, size=size, mode="bilinear", align_corners=False)

    def forward(self, edge_levels, body_levels):
        new_edge, new_body = [], []
        for j in range(4):
            size = edge_levels[j].shape[-2:]
            we, wb = self.edge_weights[j], self.body_weights[j]
            if len(we) != 6 - (j + 1) or len(wb) != 6 - (j + 1):
                raise ValueError(f"level {j + 1} weight vector must have {5 - j} entries")
            e = we[0] * edge_levels[j]
            b = wb[0] * body_levels[j]
            for idx, k in enumerate(range(j, 4), start=1):
                e = e + we[idx] * (edge_levels[j] * torch.sigmoid(self._resize(body_levels[k], size)))
                b = b + wb[idx] * (body_levels[j] + self._resize(edge_levels[k], size))
            new_edge.append(e)
            new_body.append(b)
        return new_edge, new_body


class FuseStep(nn.Module):
    """Per-level fusion inside the hierarchical decoder: DW conv -> BN -> 3x3 conv -> SiLU."""

    def __init__(self, in_channels, out_channels, dw_kernel=7):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(in_channels, in_channels, dw_kernel, padding=dw_kernel // 2,
                      groups=in_channels),
            nn.BatchNorm2d(in_channels),
            nn.Conv2d(in_channels, out_channels, 3, padding=1),
            nn.SiLU(),
        )

    def forward(self, x):
        return self.block(x)


class FeatureFusion(nn.Module):
    """Hierarchical decoder from level 4 up to a full-resolution 1-channel logit map.

    Walks the levels high to low, concatenating the running features with the
    primary (and, when present, auxiliary) stream at each level, then fuses the
    stem features and bridges stride 4 -> 1 with two transposed convolutions.
    """

    def __init__(self, channels, stem_channels, dual=True, dw_kernel=7):
        super().__init__()
        streams = 2 if dual else 1
        self.dual = dual
        self.steps = nn.ModuleList([
            FuseStep(streams * channels, channels, dw_kernel),              # level 4
            FuseStep(channels + streams * channels, channels, dw_kernel),   # level 3
            FuseStep(channels + streams * channels, channels, dw_kernel),   # level 2
            FuseStep(channels + streams * channels, channels, dw_kernel),   # level 1
        ])
        self.stem_step = FuseStep(channels + stem_channels, channels, dw_kernel)
        def deconv():
            return nn.ConvTranspose2d(channels, channels, 2, stride=2)
        self.level_up = nn.ModuleList([deconv() for _ in range(3)])  # 4->3, 3->2, 2->1
        self.final_up = nn.ModuleList([deconv() for _ in range(2)])  # stride 4 -> 1
        self.head = nn.Conv2d(channels, 1, 1)

    def forward(self, primary, auxiliary, stem):
        if self.dual and auxiliary is None:
            raise ValueError("dual-stream decoder needs auxiliary features")
        def gather(j, running):
            maps = ([] if running is None else [running]) + [primary[j]]
            if self.dual:
                maps.append(auxiliary[j])
            return torch.cat(maps, dim=1)

        x = self.steps[0](gather(3, None))
        for step, up, j in zip(list(self.steps[1:]), self.level_up, (2, 1, 0)):
            x = step(gather(j, up(x)))
        x = self.stem_step(torch.cat([x, stem], dim=1))
        for up in self.final_up:
            x = up(x)
        return self.head(x)


class BGCrack(nn.Module):
    """Boundary-guided crack segmentation network.

    Four stages: backbone pyramid, edge-stream embedding (with high-frequency
    enhancement on the two low levels), body-stream embedding (with global
    perception on the two high levels), then self fusion, cross optimization
    and hierarchical fusion with dense phase connections.
    """

    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        cfg = cfg or ModelConfig()
        self.cfg = cfg
        self.backbone = Backbone(cfg.backbone)
        widths = cfg.backbone.stage_channels
        ce = cfg.embed_channels

        self.body_embeds = nn.ModuleList([FeatureEmbed(w, ce) for w in widths])
        if cfg.use_gip:
            self.body_gips = nn.ModuleList(
                [GlobalPerception(ce, cfg.gip, cfg.dw_kernel) for _ in range(2)])
        self.sfm_body = SelfFusion(ce)

        if cfg.use_edge:
            if cfg.use_hfie:
                self.edge_hfies = nn.ModuleList(
                    [HighFreqEnhance(widths[k], cfg.hfie) for k in range(2)])
            self.edge_embeds = nn.ModuleList([FeatureEmbed(w, ce) for w in widths])
            self.sfm_edge = SelfFusion(ce)
            self.cross = CrossOptim()
            self.fuse_edge = FeatureFusion(ce, cfg.backbone.stem_channels,
                                           dual=True, dw_kernel=cfg.dw_kernel)
        self.fuse_body = FeatureFusion(ce, cfg.backbone.stem_channels,
                                       dual=cfg.use_edge, dw_kernel=cfg.dw_kernel)
        self.apply(init_weights)

    def forward(self, img) -> PredictionPair:
        pyramid = self.backbone(img)
        levels = pyramid.levels

        body0 = [embed(x) for embed, x in zip(self.body_embeds, levels)]
        if self.cfg.use_gip:
            body0[2] = self.body_gips[0](body0[2])
            body0[3] = self.body_gips[1](body0[3])
        body1 = self.sfm_body(body0)

        if not self.cfg.use_edge:
            body_in = dense_add(body1, [body0])
            logit_body = self.fuse_body(body_in, None, pyramid.stem)
            return final_fuse(logit_body, None)

        edge_in = list(levels)
        if self.cfg.use_hfie:
            edge_in[0] = self.edge_hfies[0](edge_in[0])
            edge_in[1] = self.edge_hfies[1](edge_in[1])
        edge0 = [embed(x) for embed, x in zip(self.edge_embeds, edge_in)]
        edge1 = self.sfm_edge(edge0)

        edge2, body2 = self.cross(dense_add(edge1, [edge0]), dense_add(body1, [body0]))
        edge_final = dense_add(edge2, [edge0, edge1])
        body_final = dense_add(body2, [body0, body1])

        logit_edge = self.fuse_edge(edge_final, body_final, pyramid.stem)
        logit_body = self.fuse_body(body_final, edge_final, pyramid.stem)
        return final_fuse(logit_body, logit_edge)
