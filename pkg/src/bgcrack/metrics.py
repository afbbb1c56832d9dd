"""Image-wise effect metrics (mean image-wise IoU and Dice) and efficiency
accounting (parameter and multiply-accumulate counts)."""

import json
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

MACS_NOTE = ("conv, spectral-conv, linear and attention matmuls only; elementwise "
             "ops, norms, activations and the FFT transforms themselves are excluded")


def _to_numpy(x):
    if isinstance(x, torch.Tensor):
        return x.detach().cpu().numpy()
    return np.asarray(x)


def threshold_classify(prob, threshold=0.5):
    """Binarize a probability map; values >= threshold count as positive."""
    return (_to_numpy(prob) >= threshold).astype(np.uint8)


def confusion_counts(pred, target):
    """Per-pixel TP/FN/FP/TN counts for binary maps of equal shape."""
    pred, target = _to_numpy(pred), _to_numpy(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    for arr in (pred, target):
        if not np.isin(arr, (0, 1)).all():
            raise ValueError("inputs must be binary")
    pred, target = pred.astype(bool), target.astype(bool)
    tp = int(np.sum(pred & target))
    fn = int(np.sum(~pred & target))
    fp = int(np.sum(pred & ~target))
    tn = int(np.sum(~pred & ~target))
    return tp, fn, fp, tn


def mi_iou(probs, targets, eps=1e-6, threshold=0.5):
    """Mean image-wise IoU of thresholded predictions."""
    if len(probs) == 0:
        raise ValueError("empty prediction list")
    if len(probs) != len(targets):
        raise ValueError("prediction/target count mismatch")
    scores = []
    for prob, target in zip(probs, targets):
        tp, fn, fp, _ = confusion_counts(threshold_classify(prob, threshold), target)
        scores.append((tp + eps) / (fn + fp + tp + eps))
    return float(np.mean(scores))


def mi_dice(probs, targets, eps=1e-6):
    """Mean image-wise Dice of the continuous predictions (no thresholding)."""
    if len(probs) == 0:
        raise ValueError("empty prediction list")
    if len(probs) != len(targets):
        raise ValueError("prediction/target count mismatch")
    scores = []
    for prob, target in zip(probs, targets):
        prob, target = _to_numpy(prob).astype(np.float64), _to_numpy(target).astype(np.float64)
        if prob.shape != target.shape:
            raise ValueError(f"shape mismatch: {prob.shape} vs {target.shape}")
        inter = np.abs(prob * target).sum()
        denom = np.abs(prob).sum() + np.abs(target).sum()
        scores.append((2.0 * inter + eps) / (denom + eps))
    return float(np.mean(scores))


def count_params(model):
    """Number of learnable scalar entries in a model."""
    return sum(p.numel() for p in model.parameters())


def count_macs(model, input_hw, in_channels=3):
    """Closed-form multiply-accumulate counts for one forward pass at batch 1.

    Counts convolutions (including transposed), linear layers, and the two
    attention matmuls; everything else (see MACS_NOTE) is excluded. Convs that
    operate on half-spectrum tensors are bucketed as "spectral" since their
    width is W/2 + 1 rather than W. Returns a dict with the total and the
    per-bucket breakdown.
    """
    totals = {"conv": 0, "spectral": 0, "linear": 0, "attention": 0}
    hooks = []

    def conv_hook(mod, inputs, output):
        kh, kw = mod.kernel_size
        # transposed convs do one MAC per input pixel, kernel tap and out channel
        h, w = inputs[0].shape[-2:] if isinstance(mod, nn.ConvTranspose2d) else output.shape[-2:]
        bucket = "spectral" if getattr(mod, "spectral_domain", False) else "conv"
        totals[bucket] += (kh * kw * mod.in_channels * mod.out_channels * h * w
                           * output.shape[0]) // mod.groups

    def linear_hook(mod, inputs, output):
        tokens = output.numel() // mod.out_features
        totals["linear"] += tokens * mod.in_features * mod.out_features

    def attention_hook(mod, inputs, output):
        b, n, d = inputs[0].shape  # QK^T and attn@V each cost N^2 * d per sequence
        totals["attention"] += b * 2 * n * n * d

    from .gip import PatchAttention

    for mod in model.modules():
        if isinstance(mod, (nn.Conv2d, nn.ConvTranspose2d)):
            hooks.append(mod.register_forward_hook(conv_hook))
        elif isinstance(mod, nn.Linear):
            hooks.append(mod.register_forward_hook(linear_hook))
        elif isinstance(mod, PatchAttention):
            hooks.append(mod.register_forward_hook(attention_hook))
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            h, w = input_hw
            model(torch.zeros(1, in_channels, h, w))
    finally:
        for hook in hooks:
            hook.remove()
        model.train(was_training)
    return {"total": sum(totals.values()), **totals, "note": MACS_NOTE}


@dataclass
class MetricsReport:
    mi_iou: float
    mi_dice: float
    n_images: int
    params: int
    macs: int

    def to_dict(self):
        return {"mi_iou": self.mi_iou, "mi_dice": self.mi_dice,
                "n_images": self.n_images, "params": self.params, "macs": self.macs}

    def to_json(self, **extra):
        return json.dumps(self.to_dict() | extra, indent=2)
