"""Small conditional UNet noise predictor.

The noisy image and the conditioning raster are concatenated along
channels at the stem. Timesteps enter through a sinusoidal embedding
added inside every residual block; an optional class embedding (light
kind) is summed into the same vector. A control branch may inject
per-stage residuals into the encoder features (see control.py).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .schedule import DiffusionError


@dataclass(frozen=True)
class DenoiserSpec:
    input_channels: int
    base_width: int = 48
    depth: int = 3
    class_vocab: int = 0

    def __post_init__(self):
        if self.input_channels < 3:
            raise DiffusionError(
                f"input_channels must be >= 3, got {self.input_channels}")
        if self.depth < 1 or self.base_width < 8:
            raise DiffusionError("depth must be >= 1 and base_width >= 8")
        if self.class_vocab < 0:
            raise DiffusionError("class_vocab must be >= 0")


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) *
                      torch.arange(half, dtype=t.dtype, device=t.device) / half)
    args = t[:, None] * freqs[None]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


def _norm(ch: int) -> nn.GroupNorm:
    return nn.GroupNorm(min(8, ch), ch)


def conditioning_vector(temb_mlp, class_emb, class_vocab: int, temb_dim: int,
                        t, class_id, batch: int, device, dtype) -> torch.Tensor:
    """Combined timestep + optional class embedding, shared by the
    denoiser and the control branch."""
    if not isinstance(t, torch.Tensor):
        t = torch.full((batch,), int(t), device=device)
    temb = temb_mlp(timestep_embedding(t.to(dtype), temb_dim))
    if class_emb is not None:
        if class_id is None:
            idx = torch.full((batch,), class_vocab, dtype=torch.long,
                             device=device)
        elif isinstance(class_id, torch.Tensor):
            idx = class_id.to(torch.long).to(device)
        else:
            idx = torch.full((batch,), int(class_id), dtype=torch.long,
                             device=device)
        if int(idx.max()) > class_vocab or int(idx.min()) < 0:
            raise DiffusionError("class_id out of vocabulary")
        temb = temb + class_emb(idx).to(dtype)
    return temb


class ResBlock(nn.Module):
    def __init__(self, ch_in: int, ch_out: int, temb_dim: int):
        super().__init__()
        self.norm1 = _norm(ch_in)
        self.conv1 = nn.Conv2d(ch_in, ch_out, 3, padding=1)
        self.temb_proj = nn.Linear(temb_dim, ch_out)
        self.norm2 = _norm(ch_out)
        self.conv2 = nn.Conv2d(ch_out, ch_out, 3, padding=1)
        self.skip = (nn.Conv2d(ch_in, ch_out, 1)
                     if ch_in != ch_out else nn.Identity())
        self.act = nn.SiLU()

    def forward(self, x, temb):
        h = self.conv1(self.act(self.norm1(x)))
        h = h + self.temb_proj(temb)[:, :, None, None]
        h = self.conv2(self.act(self.norm2(h)))
        return h + self.skip(x)


class Denoiser(nn.Module):
    """Predicts the noise residual for a 3-channel target."""

    def __init__(self, spec: DenoiserSpec):
        super().__init__()
        self.spec = spec
        w = spec.base_width
        self.temb_dim = w * 4
        self.temb_mlp = nn.Sequential(
            nn.Linear(self.temb_dim, self.temb_dim), nn.SiLU(),
            nn.Linear(self.temb_dim, self.temb_dim))
        if spec.class_vocab > 0:
            # the last slot is the null token used when no class is given
            self.class_emb = nn.Embedding(spec.class_vocab + 1, self.temb_dim)
        else:
            self.class_emb = None

        widths = [min(w * (2 ** i), w * 4) for i in range(spec.depth)]
        self.stem = nn.Conv2d(spec.input_channels, w, 3, padding=1)
        self.down_blocks = nn.ModuleList()
        self.downs = nn.ModuleList()
        ch = w
        for i, wo in enumerate(widths):
            self.down_blocks.append(ResBlock(ch, wo, self.temb_dim))
            ch = wo
            last = i == spec.depth - 1
            self.downs.append(nn.Identity() if last
                              else nn.Conv2d(ch, ch, 3, stride=2, padding=1))
        self.middle = ResBlock(ch, ch, self.temb_dim)
        self.up_blocks = nn.ModuleList()
        self.ups = nn.ModuleList()
        for i in reversed(range(spec.depth)):
            skip_ch = widths[i]
            self.ups.append(nn.Identity() if i == spec.depth - 1
                            else nn.Upsample(scale_factor=2, mode="nearest"))
            self.up_blocks.append(ResBlock(ch + skip_ch, widths[max(i - 1, 0)],
                                           self.temb_dim))
            ch = widths[max(i - 1, 0)]
        self.head_norm = _norm(ch)
        self.head = nn.Conv2d(ch, 3, 3, padding=1)
        self.act = nn.SiLU()

    def param_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def _embed(self, t, class_id, batch: int, device, dtype) -> torch.Tensor:
        return conditioning_vector(self.temb_mlp, self.class_emb,
                                   self.spec.class_vocab, self.temb_dim,
                                   t, class_id, batch, device, dtype)

    def encode(self, x_t, t, cond, class_id=None, control=None):
        """Run stem + encoder; returns (skips, bottom, temb).

        ``control`` is an optional list of residuals added to each stage
        output (and the bottom feature as the last entry).
        """
        if cond.shape[2:] != x_t.shape[2:]:
            raise DiffusionError("condition spatial dims must match input")
        if x_t.shape[1] + cond.shape[1] != self.spec.input_channels:
            raise DiffusionError(
                f"channel total {x_t.shape[1] + cond.shape[1]} != "
                f"spec.input_channels {self.spec.input_channels}")
        temb = self._embed(t, class_id, x_t.shape[0], x_t.device, x_t.dtype)
        h = self.stem(torch.cat([x_t, cond], dim=1))
        skips = []
        for i, (block, down) in enumerate(zip(self.down_blocks, self.downs)):
            h = block(h, temb)
            if control is not None:
                h = h + control[i]
            skips.append(h)
            h = down(h)
        h = self.middle(h, temb)
        if control is not None:
            h = h + control[-1]
        return skips, h, temb

    def forward(self, x_t, t, cond, class_id=None, control=None):
        skips, h, temb = self.encode(x_t, t, cond, class_id, control)
        for up, block, skip in zip(self.ups, self.up_blocks, reversed(skips)):
            h = up(h)
            h = block(torch.cat([h, skip], dim=1), temb)
        return self.head(self.act(self.head_norm(h)))
