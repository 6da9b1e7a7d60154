"""Noise schedule and the functional pieces of conditional denoising
diffusion: forward noising, the eps-prediction training loss, and a
deterministic multi-step sampler.

Convention: training_loss and ddim_sample exchange rasters in [0, 1]
(NCHW torch tensors) and handle the symmetric [-1, 1] model encoding
internally. q_sample is encoding-agnostic and operates on whatever
values it is given.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F


class DiffusionError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray


def make_schedule(T: int = 1000, beta_start: float = 1e-4,
                  beta_end: float = 2e-2) -> NoiseSchedule:
    """Linear beta schedule with cumulative signal levels."""
    if T < 2:
        raise DiffusionError(f"T must be >= 2, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise DiffusionError(
            f"need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]")
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    return NoiseSchedule(T=T, betas=betas, alphas=alphas, alpha_bars=alpha_bars)


def scaled_schedule(T: int, beta_start: float = 1e-4,
                    beta_end: float = 2e-2, ref_T: int = 1000) -> NoiseSchedule:
    """Linear schedule with endpoints rescaled by ref_T / T.

    A fixed [beta_start, beta_end] leaves substantial residual signal at
    the terminal step when T is small (the cumulative noise scales with
    T * mean(beta)), which breaks samplers that start from pure noise.
    Rescaling keeps the terminal signal level roughly constant across
    horizons. At T == ref_T this is identical to make_schedule.
    """
    scale = min(ref_T / T, 0.5 / beta_end)
    return make_schedule(T, beta_start * scale, beta_end * scale)


def _gather_bar(sched: NoiseSchedule, t, like: torch.Tensor) -> torch.Tensor:
    """alpha_bar at t, shaped to broadcast over ``like``."""
    T = sched.T
    if isinstance(t, torch.Tensor):
        if t.numel() == 0 or int(t.min()) < 0 or int(t.max()) >= T:
            raise DiffusionError(f"t out of range [0, {T})")
        bars = torch.from_numpy(sched.alpha_bars).to(like.device)[t]
        return bars.to(like.dtype).reshape((-1,) + (1,) * (like.dim() - 1))
    t = int(t)
    if not (0 <= t < T):
        raise DiffusionError(f"t={t} out of range [0, {T})")
    return torch.as_tensor(sched.alpha_bars[t], dtype=like.dtype, device=like.device)


def q_sample(x0: torch.Tensor, t, eps: torch.Tensor,
             sched: NoiseSchedule) -> torch.Tensor:
    """Forward process: sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps."""
    if eps.shape != x0.shape:
        raise DiffusionError(f"eps shape {tuple(eps.shape)} != x0 {tuple(x0.shape)}")
    bar = _gather_bar(sched, t, x0)
    return bar.sqrt() * x0 + (1.0 - bar).sqrt() * eps


def _check_cond(x0: torch.Tensor, cond: torch.Tensor):
    if x0.dim() != 4 or cond.dim() != 4:
        raise DiffusionError("expected NCHW tensors")
    if cond.shape[0] != x0.shape[0] or cond.shape[2:] != x0.shape[2:]:
        raise DiffusionError(
            f"condition {tuple(cond.shape)} does not match x0 {tuple(x0.shape)}")


def training_loss(model, x0: torch.Tensor, cond: torch.Tensor,
                  class_id, sched: NoiseSchedule,
                  rng: torch.Generator) -> torch.Tensor:
    """Denoising score-matching loss on [0,1] rasters.

    Draws per-sample timesteps and noise from ``rng``, noises the encoded
    target, and returns the mean squared error between the model's noise
    prediction and the drawn noise.
    """
    _check_cond(x0, cond)
    b = x0.shape[0]
    t = torch.randint(0, sched.T, (b,), generator=rng)
    eps = torch.randn(x0.shape, generator=rng, dtype=x0.dtype)
    t = t.to(x0.device)
    eps = eps.to(x0.device)
    x_t = q_sample(x0 * 2.0 - 1.0, t, eps, sched)
    eps_hat = model(x_t, t, cond * 2.0 - 1.0, class_id)
    return F.mse_loss(eps_hat, eps)


def ddim_timesteps(T: int, n_steps: int) -> np.ndarray:
    """Evenly spaced timestep subsequence, descending."""
    if n_steps < 1:
        raise DiffusionError(f"n_steps must be >= 1, got {n_steps}")
    if n_steps > T:
        raise DiffusionError(f"n_steps {n_steps} exceeds T {T}")
    steps = np.linspace(0, T - 1, n_steps).round().astype(np.int64)
    return np.unique(steps)[::-1]


def seed_noise(seeds, h: int, w: int) -> torch.Tensor:
    """Per-sample initial noise for batched sampling: row i is the first
    randn draw of torch.Generator().manual_seed(seeds[i]), so a sample's
    result depends only on its own seed, not on its batch neighbours."""
    rows = [torch.randn((3, h, w),
                        generator=torch.Generator().manual_seed(int(s)))
            for s in seeds]
    return torch.stack(rows)


@torch.no_grad()
def ddim_sample(model, cond: torch.Tensor, class_id, n_steps: int,
                sched: NoiseSchedule, seed=0, clip_x0: bool = True,
                x_init: torch.Tensor = None, eta: float = 0.0) -> torch.Tensor:
    """Multi-step sampler; a pure function of (weights, cond, class_id,
    n_steps, seed, eta) — or of x_init in place of seed when the caller
    supplies the initial noise.

    ``seed`` may be a single int (one noise stream for the batch) or a
    sequence with one seed per sample, which keeps each sample's result
    independent of its batch neighbours; the per-sample streams start
    with the same draw seed_noise produces. ``eta`` blends between the
    deterministic update (0, the default) and ancestral sampling (1),
    which re-noises each transition and is much less prone to drifting
    off the trained trajectory distribution on sparse targets.

    ``cond`` is an NCHW raster in [0, 1]; the result is the denoised
    raster clamped to [0, 1] with the same spatial dims.
    """
    if cond.dim() != 4:
        raise DiffusionError("condition must be NCHW")
    if not 0.0 <= eta <= 1.0:
        raise DiffusionError(f"eta must be in [0, 1], got {eta}")
    steps = ddim_timesteps(sched.T, n_steps)
    b, _, h, w = cond.shape
    if isinstance(seed, (list, tuple)):
        if len(seed) != b:
            raise DiffusionError(f"need {b} seeds, got {len(seed)}")
        gens = [torch.Generator().manual_seed(int(s)) for s in seed]
    else:
        gens = [torch.Generator().manual_seed(int(seed))]

    def draw():
        if len(gens) == 1:
            return torch.randn((b, 3, h, w), generator=gens[0],
                               dtype=cond.dtype).to(cond.device)
        rows = [torch.randn((3, h, w), generator=g, dtype=cond.dtype)
                for g in gens]
        return torch.stack(rows).to(cond.device)

    if x_init is not None:
        if x_init.shape != (b, 3, h, w):
            raise DiffusionError("x_init shape does not match condition")
        x = x_init.to(cond.dtype).to(cond.device)
    else:
        x = draw()
    cond_enc = cond * 2.0 - 1.0
    bars = sched.alpha_bars
    for i, t in enumerate(steps):
        t_vec = torch.full((b,), int(t), dtype=torch.long, device=x.device)
        eps_hat = model(x, t_vec, cond_enc, class_id)
        bar_t = float(bars[t])
        x0_hat = (x - np.sqrt(1.0 - bar_t) * eps_hat) / np.sqrt(bar_t)
        if clip_x0:
            x0_hat = x0_hat.clamp(-1.0, 1.0)
        if i + 1 < len(steps):
            bar_prev = float(bars[steps[i + 1]])
            if eta > 0.0:
                sigma = eta * np.sqrt((1.0 - bar_prev) / (1.0 - bar_t)) \
                    * np.sqrt(1.0 - bar_t / bar_prev)
                dir_coef = np.sqrt(max(1.0 - bar_prev - sigma * sigma, 0.0))
                x = np.sqrt(bar_prev) * x0_hat + dir_coef * eps_hat \
                    + sigma * draw()
            else:
                x = np.sqrt(bar_prev) * x0_hat + np.sqrt(1.0 - bar_prev) * eps_hat
        else:
            x = x0_hat
    return ((x + 1.0) / 2.0).clamp(0.0, 1.0)
