"""Compact convolutional embedder trained as an autoencoder.

The encoder bottleneck, flattened and L2-normalized, is the feature
vector used for similarity scoring and distribution distances. Trained
from scratch on the synthetic corpus; no pretrained weights.
"""

from __future__ import annotations

import json
import time

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .diffusion.checkpoint import (save_checkpoint, load_checkpoint,
                                   load_into, state_arrays)
from .diffusion.schedule import DiffusionError


class EmbedderError(ValueError):
    pass


class _AutoEncoder(nn.Module):
    def __init__(self, resolution: int, embedding_dim: int):
        super().__init__()
        if resolution % 8 != 0:
            raise EmbedderError("resolution must be divisible by 8")
        side = resolution // 8
        if embedding_dim % (side * side) != 0:
            raise EmbedderError(
                f"embedding_dim must be a multiple of {side * side} "
                f"at resolution {resolution}")
        code_ch = embedding_dim // (side * side)
        self.encoder = nn.Sequential(
            nn.Conv2d(3, 32, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(32, 64, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(64, 64, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(64, code_ch, 1))
        self.decoder = nn.Sequential(
            nn.Conv2d(code_ch, 64, 1), nn.SiLU(),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(64, 64, 3, padding=1), nn.SiLU(),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(64, 32, 3, padding=1), nn.SiLU(),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(32, 3, 3, padding=1))

    def forward(self, x):
        return self.decoder(self.encoder(x))


class Embedder:
    def __init__(self, net: _AutoEncoder, embedding_dim: int, resolution: int):
        self.net = net.eval()
        self.embedding_dim = embedding_dim
        self.resolution = resolution

    def _to_batch(self, images) -> torch.Tensor:
        arrs = [np.transpose(np.asarray(im, np.float32), (2, 0, 1))
                for im in images]
        return torch.from_numpy(np.stack(arrs))

    @torch.no_grad()
    def embed_many(self, images, chunk: int = 256) -> np.ndarray:
        images = list(images)
        out = np.empty((len(images), self.embedding_dim), np.float32)
        for i in range(0, len(images), chunk):
            batch = self._to_batch(images[i:i + chunk])
            code = self.net.encoder(batch).reshape(batch.shape[0], -1)
            vecs = code.numpy().astype(np.float32)
            norms = np.linalg.norm(vecs, axis=1, keepdims=True)
            dead = norms[:, 0] == 0
            if dead.any():
                vecs[dead, 0] = 1.0
                norms[dead] = 1.0
            out[i:i + len(vecs)] = vecs / norms
        return out

    def embed(self, image) -> np.ndarray:
        return self.embed_many([image])[0]

    def save(self, path, meta=None):
        m = {"kind": "embedder", "embedding_dim": self.embedding_dim,
             "resolution": self.resolution}
        if meta:
            m.update(meta)
        save_checkpoint(path, state_arrays(self.net), m)

    @classmethod
    def load(cls, path) -> "Embedder":
        meta, arrays = load_checkpoint(path)
        if meta.get("kind") != "embedder":
            raise EmbedderError(f"{path} is not an embedder checkpoint")
        net = _AutoEncoder(meta["resolution"], meta["embedding_dim"])
        try:
            load_into(net, arrays)
        except DiffusionError as e:
            raise EmbedderError(str(e))
        return cls(net, meta["embedding_dim"], meta["resolution"])


def train_embedder(images, embedding_dim: int = 128, iterations: int = 800,
                   batch_size: int = 64, learning_rate: float = 1e-3,
                   seed: int = 0, min_corpus: int = 1000, log=None) -> Embedder:
    """Fit the autoencoder on [0,1] rasters and return the embedder."""
    images = list(images)
    if len(images) < min_corpus:
        raise EmbedderError(
            f"corpus has {len(images)} images, need >= {min_corpus}")
    resolution = images[0].shape[0]
    torch.manual_seed(seed)
    net = _AutoEncoder(resolution, embedding_dim)
    opt = torch.optim.Adam(net.parameters(), lr=learning_rate)
    rng = np.random.Generator(np.random.PCG64(seed))
    data = torch.from_numpy(np.stack(
        [np.transpose(im, (2, 0, 1)) for im in images]).astype(np.float32))
    t0 = time.time()
    for it in range(iterations):
        idx = rng.integers(0, len(images), batch_size)
        batch = data[idx]
        loss = F.mse_loss(net(batch), batch)
        if not torch.isfinite(loss):
            raise EmbedderError(f"non-finite loss at iteration {it}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        if log and (it + 1) % 100 == 0:
            log(json.dumps({"iteration": it + 1, "loss": round(float(loss), 6),
                            "elapsed_s": round(time.time() - t0, 2)}))
    return Embedder(net, embedding_dim, resolution)
