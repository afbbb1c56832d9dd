"""Gradient-weighted activation heatmaps for the body or edge output."""

import torch
import torch.nn.functional as F


def list_layers(model):
    """Named modules that can serve as heatmap targets (leaf conv-like blocks)."""
    return [name for name, mod in model.named_modules()
            if name and len(list(mod.children())) == 0]


class GradCam:
    """Hook-based heatmap extraction for a named layer of the model.

    Channel weights are the spatial mean of the gradient of the summed target
    logit; the map is the rectified weighted activation sum, min-max normalized
    and bilinearly upsampled to the input size.
    """

    def __init__(self, model, layer_name):
        self.model = model
        layers = dict(model.named_modules())
        if layer_name not in layers:
            raise KeyError(f"unknown layer {layer_name!r}; see list_layers()")
        self.activations = None
        self.gradients = None
        target = layers[layer_name]
        self._handles = [
            target.register_forward_hook(self._keep_activation),
            target.register_full_backward_hook(self._keep_gradient),
        ]

    def _keep_activation(self, module, inputs, output):
        self.activations = output

    def _keep_gradient(self, module, grad_input, grad_output):
        self.gradients = grad_output[0]

    def close(self):
        for handle in self._handles:
            handle.remove()

    def __call__(self, image, target="body"):
        """image: [1,3,H,W]; returns a [H,W] heatmap in [0,1]."""
        self.model.zero_grad(set_to_none=True)
        pair = self.model(image)
        if target == "body":
            score = pair.logit_body.sum()
        elif target == "edge":
            if pair.logit_edge is None:
                raise ValueError("model has no edge stream")
            score = pair.logit_edge.sum()
        else:
            raise ValueError(f"target must be body or edge, got {target!r}")
        score.backward()
        if self.activations is None or self.gradients is None:
            raise RuntimeError("target layer never fired during the forward pass")
        weights = self.gradients.mean(dim=(2, 3), keepdim=True)
        cam = F.relu((weights * self.activations).sum(dim=1, keepdim=True))
        cam = F.interpolate(cam, size=image.shape[-2:], mode="bilinear", align_corners=False)
        cam = cam[0, 0]
        span = cam.max() - cam.min()
        if span > 0:
            cam = (cam - cam.min()) / span
        return cam.detach()
