"""Spatial control branch: a trainable copy of the denoiser's encoder
that reads an extra control raster and feeds residuals back into the
frozen model's encoder stages.

Every output projection starts at zero, so an untrained branch leaves
the base forward pass bit-identical.
"""

from __future__ import annotations

import copy

import torch
import torch.nn as nn

from .schedule import DiffusionError
from .model import Denoiser, conditioning_vector


def zero_conv(ch: int) -> nn.Conv2d:
    conv = nn.Conv2d(ch, ch, 1)
    nn.init.zeros_(conv.weight)
    nn.init.zeros_(conv.bias)
    return conv


class ControlBranch(nn.Module):
    def __init__(self, model: Denoiser, control_channels: int = 3):
        super().__init__()
        spec = model.spec
        self.control_channels = control_channels
        self.stem = copy.deepcopy(model.stem)
        self.down_blocks = copy.deepcopy(model.down_blocks)
        self.downs = copy.deepcopy(model.downs)
        self.middle = copy.deepcopy(model.middle)
        self.temb_mlp = copy.deepcopy(model.temb_mlp)
        self.class_emb = copy.deepcopy(model.class_emb)
        self.spec = spec
        w = spec.base_width
        self.hint_proj = nn.Sequential(
            nn.Conv2d(control_channels, w, 3, padding=1), nn.SiLU(),
            nn.Conv2d(w, w, 3, padding=1))
        widths = [min(w * (2 ** i), w * 4) for i in range(spec.depth)]
        self.zero_projs = nn.ModuleList(
            [zero_conv(c) for c in widths] + [zero_conv(widths[-1])])

    def forward(self, x_t, t, cond, control_signal, class_id=None) -> list:
        """Per-stage residuals (one per encoder stage plus the bottom)."""
        if control_signal.shape[2:] != x_t.shape[2:]:
            raise DiffusionError("control signal spatial dims must match input")
        if control_signal.shape[1] != self.control_channels:
            raise DiffusionError(
                f"control signal has {control_signal.shape[1]} channels, "
                f"expected {self.control_channels}")
        temb = conditioning_vector(self.temb_mlp, self.class_emb,
                                   self.spec.class_vocab,
                                   self.spec.base_width * 4,
                                   t, class_id, x_t.shape[0],
                                   x_t.device, x_t.dtype)
        h = self.stem(torch.cat([x_t, cond], dim=1))
        h = h + self.hint_proj(control_signal)
        residuals = []
        for block, down, proj in zip(self.down_blocks, self.downs,
                                     self.zero_projs):
            h = block(h, temb)
            residuals.append(proj(h))
            h = down(h)
        h = self.middle(h, temb)
        residuals.append(self.zero_projs[-1](h))
        return residuals


def control_forward(model: Denoiser, branch: ControlBranch, x_t, t, cond,
                    control_signal, class_id=None):
    """Denoiser forward with branch residuals injected at each encoder
    stage. With zero-initialized projections this equals the plain
    forward pass exactly."""
    residuals = branch(x_t, t, cond, control_signal, class_id)
    return model(x_t, t, cond, class_id, control=residuals)
