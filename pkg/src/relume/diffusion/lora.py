"""Low-rank weight adapters over a frozen denoiser.

Each adapted layer holds a factor pair (A, B) with B zero-initialized,
so a fresh adapter reproduces the base model exactly. The adapted
forward pass materializes W + scale * A @ B through a functional call,
which keeps A and B ordinary leaf parameters for the optimizer.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
from torch.func import functional_call

from .schedule import DiffusionError

# parameter-dict keys cannot contain dots
_SEP = "::"


def default_targets(model: nn.Module) -> list:
    """Weight names of every conv and linear layer, the adaptation
    surface for a model without attention blocks."""
    names = []
    for mod_name, mod in model.named_modules():
        if isinstance(mod, (nn.Conv2d, nn.Linear)):
            names.append(f"{mod_name}.weight" if mod_name else "weight")
    return names


class LowRankAdapter(nn.Module):
    def __init__(self, model: nn.Module, rank: int = 8, scale: float = 1.0,
                 targets=None):
        super().__init__()
        if rank < 1:
            raise DiffusionError(f"rank must be >= 1, got {rank}")
        self.rank = rank
        self.scale = float(scale)
        self.targets = list(targets) if targets is not None else default_targets(model)
        params = dict(model.named_parameters())
        self.down = nn.ParameterDict()
        self.up = nn.ParameterDict()
        self._shapes = {}
        for name in self.targets:
            if name not in params:
                raise DiffusionError(f"no parameter named {name}")
            w = params[name]
            if w.dim() < 2:
                raise DiffusionError(f"{name} is not matricizable")
            out_dim = w.shape[0]
            in_dim = w.numel() // out_dim
            key = name.replace(".", _SEP)
            a = torch.empty(out_dim, rank, dtype=w.dtype)
            nn.init.kaiming_uniform_(a, a=math.sqrt(5))
            self.up[key] = nn.Parameter(a)
            self.down[key] = nn.Parameter(torch.zeros(rank, in_dim, dtype=w.dtype))
            self._shapes[name] = tuple(w.shape)

    def delta(self, name: str) -> torch.Tensor:
        key = name.replace(".", _SEP)
        return (self.scale * (self.up[key] @ self.down[key])).reshape(
            self._shapes[name])

    def deltas(self) -> dict:
        return {name: self.delta(name) for name in self.targets}


def apply_adapter(base_state: dict, adapter: LowRankAdapter) -> dict:
    """Merged copy of a state dict: W + scale * A @ B on targeted layers."""
    out = {k: v.detach().clone() for k, v in base_state.items()}
    with torch.no_grad():
        for name in adapter.targets:
            if name not in out:
                raise DiffusionError(f"state dict missing {name}")
            if tuple(out[name].shape) != adapter._shapes[name]:
                raise DiffusionError(f"shape mismatch on {name}")
            out[name] = out[name] + adapter.delta(name)
    return out


class AdaptedDenoiser(nn.Module):
    """Base model plus adapter, evaluated without mutating the base.

    The base parameters are frozen; only adapter factors receive
    gradients. merge() produces a standalone merged state dict.
    """

    def __init__(self, base: nn.Module, adapter: LowRankAdapter):
        super().__init__()
        self.base = base
        for p in self.base.parameters():
            p.requires_grad_(False)
        self.adapter = adapter

    def forward(self, *args, **kwargs):
        overrides = {}
        base_params = dict(self.base.named_parameters())
        for name in self.adapter.targets:
            overrides[name] = base_params[name] + self.adapter.delta(name)
        return functional_call(self.base, overrides, args, kwargs)

    def merge(self) -> dict:
        return apply_adapter(self.base.state_dict(), self.adapter)
