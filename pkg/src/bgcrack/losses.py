"""Five-term training objective: body/edge BCE, body/edge Dice, and a
Charbonnier penalty on Scharr gradient magnitudes of the body prediction."""

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

# value error <= 1e-12 but keeps the magnitude differentiable on flat regions
_MAG_GUARD = 1e-24


@dataclass
class LossConfig:
    alphas: list[float] = field(default_factory=lambda: [1.0, 1.0, 1.0, 1.0, 1.0])
    eps_dice: float = 1e-6
    eps_char: float = 1e-3
    use_grad: bool = True

    def __post_init__(self):
        if len(self.alphas) != 5:
            raise ValueError("five loss weights required")


@dataclass
class LossReport:
    total: torch.Tensor
    components: dict  # bce_body, bce_edge, dice_body, dice_edge, grad

    def detached(self):
        return {"total": self.total.item()} | {k: v.item() for k, v in self.components.items()}


def _check_pair(pred, target):
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")


def bce_loss(prob, target):
    """Mean binary cross-entropy; routed through logits for stability."""
    _check_pair(prob, target)
    if not torch.all((target == 0) | (target == 1)):
        raise ValueError("target must be binary")
    logits = torch.log(prob) - torch.log1p(-prob)
    return F.binary_cross_entropy_with_logits(logits, target.to(prob.dtype))


def bce_with_logits(logits, target):
    _check_pair(logits, target)
    return F.binary_cross_entropy_with_logits(logits, target.to(logits.dtype))


def dice_loss(prob, target, eps=1e-6):
    """Per-image overlap loss, mean over the batch; Laplace-smoothed."""
    _check_pair(prob, target)
    target = target.to(prob.dtype)
    dims = tuple(range(1, prob.dim()))
    inter = (prob * target).sum(dim=dims)
    denom = prob.sum(dim=dims) + target.sum(dim=dims)
    return (1.0 - (2.0 * inter + eps) / (denom + eps)).mean()


def scharr_gradients(x):
    """Gradient magnitude of a [B,1,H,W] map under the 3x3 Scharr operator.

    Borders are zero padded; kernels keep the raw 3/10/3 weighting.
    """
    if x.dim() != 4 or x.shape[1] != 1:
        raise ValueError("expected a [B,1,H,W] map")
    kx = x.new_tensor([[-3.0, 0.0, 3.0], [-10.0, 0.0, 10.0], [-3.0, 0.0, 3.0]])
    gx = F.conv2d(x, kx.view(1, 1, 3, 3), padding=1)
    gy = F.conv2d(x, kx.t().contiguous().view(1, 1, 3, 3), padding=1)
    return torch.sqrt(gx * gx + gy * gy + _MAG_GUARD)


def charbonnier(diff, eps):
    """Smooth robust penalty sqrt(diff^2 + eps^2), averaged."""
    return torch.sqrt(diff * diff + eps * eps).mean()


def grad_loss(prob_body, target_body, eps_char=1e-3):
    """Charbonnier distance between prediction and target Scharr magnitudes."""
    _check_pair(prob_body, target_body)
    diff = scharr_gradients(prob_body) - scharr_gradients(target_body.to(prob_body.dtype))
    return charbonnier(diff, eps_char)


def total_loss(pair, target_body, target_edge, cfg: LossConfig | None = None) -> LossReport:
    """Weighted sum of the five terms.

    Edge terms are zero when the prediction carries no edge stream; the
    gradient term is zero when disabled in the config.
    """
    cfg = cfg or LossConfig()
    a1, a2, a3, a4, a5 = cfg.alphas
    zero = pair.logit_body.new_zeros(())
    comp = {
        "bce_body": bce_with_logits(pair.logit_body, target_body),
        "bce_edge": zero,
        "dice_body": dice_loss(pair.prob_body, target_body, cfg.eps_dice),
        "dice_edge": zero,
        "grad": zero,
    }
    if pair.logit_edge is not None:
        if target_edge is None:
            raise ValueError("edge prediction present but no edge target given")
        comp["bce_edge"] = bce_with_logits(pair.logit_edge, target_edge)
        comp["dice_edge"] = dice_loss(pair.prob_edge, target_edge, cfg.eps_dice)
    if cfg.use_grad:
        comp["grad"] = grad_loss(pair.prob_body, target_body, cfg.eps_char)
    total = (a1 * comp["bce_body"] + a2 * comp["bce_edge"] + a3 * comp["dice_body"]
             + a4 * comp["dice_edge"] + a5 * comp["grad"])
    return LossReport(total=total, components=comp)
