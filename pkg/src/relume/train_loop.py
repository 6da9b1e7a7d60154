"""Shared seeded training loop for the denoising trainers.

All trainers in this package follow the same recipe: AdamW over the
trainable parameters, a seeded torch.Generator for the noise draws, a
JSON-lines loss log and a byte-deterministic checkpoint at the end. The
loop is deliberately generic; each caller supplies its own batch
iterator and checkpoint metadata.
"""

import json
import os
import time

import numpy as np
import torch

from .diffusion import save_checkpoint, state_arrays, training_loss


def to_batch(arrs) -> torch.Tensor:
    """Stack HWC float rasters into an NCHW float32 tensor."""
    return torch.from_numpy(np.stack(
        [np.transpose(a, (2, 0, 1)) for a in arrs]).astype(np.float32))


def run_training(model, sched, batches, cfg, ckpt_path, log_path, meta, log,
                 error_cls=RuntimeError, arrays_of=None):
    """Drive the optimization and write checkpoint + loss log.

    cfg must provide learning_rate, seed, log_every and iterations.
    batches yields (x0, cond, class_ids) in [0,1]. arrays_of overrides
    which module's parameters get checkpointed (default: the model).
    """
    trainable = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.AdamW(trainable, lr=cfg.learning_rate)
    torch_rng = torch.Generator().manual_seed(cfg.seed)
    t0 = time.time()
    lines = []
    final_loss = None
    for it, (x0, cond, class_ids) in enumerate(batches):
        loss = training_loss(model, x0, cond, class_ids, sched, torch_rng)
        if not torch.isfinite(loss):
            raise error_cls(
                f"non-finite loss at iteration {it}; lower the learning rate "
                f"or check the corpus for invalid rasters")
        opt.zero_grad()
        loss.backward()
        opt.step()
        final_loss = float(loss.detach())
        # iteration 0 is logged before any weight update has taken effect
        if it % cfg.log_every == 0 or it == cfg.iterations - 1:
            line = {"iteration": it, "loss": final_loss,
                    "elapsed_s": round(time.time() - t0, 3)}
            lines.append(line)
            if log:
                log(json.dumps(line))
    meta = dict(meta)
    meta["final_loss"] = final_loss
    meta["iterations"] = cfg.iterations
    target = model if arrays_of is None else arrays_of
    save_checkpoint(ckpt_path, state_arrays(target), meta)
    if log_path:
        os.makedirs(os.path.dirname(os.path.abspath(log_path)), exist_ok=True)
        with open(log_path, "w") as f:
            for line in lines:
                f.write(json.dumps(line, sort_keys=True) + "\n")
    return ckpt_path
