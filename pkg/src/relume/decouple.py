"""Generative decoupling: the light-removal model (lit image -> content)
and the light-extraction model (lit image -> light), with their training
pair constructors, trainers, and loaded-checkpoint inference handles.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, asdict

import numpy as np
import torch

from .raster import (SynthesisParams, composite, mask_background_light,
                     validate_image, validate_mask)
from .synth import LightKind, KIND_INDEX, KINDS
from .diffusion import (scaled_schedule, ddim_sample, DenoiserSpec,
                        Denoiser, load_checkpoint, load_into, file_sha256,
                        schedule_meta, schedule_from_meta)
from .train_loop import run_training, to_batch as _to_batch


class DecoupleError(ValueError):
    pass


@dataclass(frozen=True)
class RemovalTrainConfig:
    iterations: int
    batch_size: int = 16
    learning_rate: float = 2e-4
    synth_mix: float = 0.8
    seed: int = 0
    base_width: int = 48
    depth: int = 3
    T: int = 1000
    log_every: int = 25

    def __post_init__(self):
        if not (0.0 <= self.synth_mix <= 1.0):
            raise DecoupleError(f"synth_mix must be in [0,1], got {self.synth_mix}")
        if self.learning_rate <= 0:
            raise DecoupleError("learning_rate must be > 0")
        if self.iterations < 1 or self.batch_size < 1:
            raise DecoupleError("iterations and batch_size must be >= 1")


@dataclass(frozen=True)
class ExtractionTrainConfig:
    iterations: int
    batch_size: int = 16
    learning_rate: float = 2e-4
    use_kind_conditioning: bool = True
    unlit_prob: float = 0.05
    seed: int = 0
    base_width: int = 48
    depth: int = 3
    T: int = 1000
    log_every: int = 25

    def __post_init__(self):
        if not (0.0 <= self.unlit_prob <= 1.0):
            raise DecoupleError(
                f"unlit_prob must be in [0,1], got {self.unlit_prob}")
        if self.learning_rate <= 0:
            raise DecoupleError("learning_rate must be > 0")
        if self.iterations < 1 or self.batch_size < 1:
            raise DecoupleError("iterations and batch_size must be >= 1")


def make_removal_pair(content: np.ndarray, mask: np.ndarray,
                      light: np.ndarray, rng: np.random.Generator,
                      synth_mix: float = 0.8):
    """Training pair for light removal; the target is always the clean
    content.

    Draw order (part of the reproducibility contract): branch uniform,
    then a and b for the composite branch, or gamma and three channel
    gains for the photometric branch. The mask is unused here but kept
    for signature parity with the extraction constructor.
    """
    if rng.random() < synth_mix:
        a = rng.uniform(0.0, 1.0)
        b = rng.uniform(0.0, 1.0)
        inp = composite(content, light, SynthesisParams(a=a, b=b))
    else:
        gamma = rng.uniform(0.5, 2.0)
        gains = rng.uniform(0.7, 1.3, 3)
        inp = np.clip(content.astype(np.float64) ** gamma * gains, 0.0, 1.0)
    return inp.astype(np.float32), content


def make_extraction_pair(content: np.ndarray, mask: np.ndarray,
                         light: np.ndarray, rng: np.random.Generator,
                         kind=None, unlit_prob: float = 0.0):
    """Training pair for light extraction: input is the content with
    background light added, target is exactly the added light.

    With probability unlit_prob the pair is unlit instead: bare scaled
    content, an all-zero target and the null kind, which teaches the
    model to stay silent when there is no light to extract. Draw order
    (part of the reproducibility contract): branch uniform, then a for
    the unlit branch, or a and b for the lit branch.
    """
    if rng.random() < unlit_prob:
        a = rng.uniform(0.0, 1.0)
        inp = composite(content, np.zeros_like(content),
                        SynthesisParams(a=a, b=0.0))
        return inp, np.zeros_like(content), None
    l_bg = mask_background_light(light, mask)
    a = rng.uniform(0.0, 1.0)
    b = rng.uniform(0.0, 1.0)
    inp = composite(content, l_bg, SynthesisParams(a=a, b=b))
    target = np.clip(b * l_bg, 0.0, 1.0).astype(np.float32)
    return inp, target, kind


class PairSource:
    """In-memory (content, mask, light, kind) sampler for the trainers."""

    def __init__(self, scenes, masks, lights, kinds=None):
        if not scenes or not lights or len(scenes) != len(masks):
            raise DecoupleError("need matching scenes/masks and some lights")
        if kinds is not None and len(kinds) != len(lights):
            raise DecoupleError("kinds must align with lights")
        self.scenes = scenes
        self.masks = masks
        self.lights = lights
        self.kinds = kinds

    def __len__(self):
        return len(self.scenes)

    def sample(self, rng: np.random.Generator):
        i = int(rng.integers(len(self.scenes)))
        j = int(rng.integers(len(self.lights)))
        kind = self.kinds[j] if self.kinds is not None else None
        return self.scenes[i], self.masks[i], self.lights[j], kind


def _train(model, sched, batches, cfg, ckpt_path, log_path, meta, log):
    return run_training(model, sched, batches, cfg, ckpt_path, log_path,
                        meta, log, error_cls=DecoupleError)


def train_removal(source: PairSource, cfg: RemovalTrainConfig, ckpt_path,
                  log_path=None, log=None):
    """Train the removal denoiser (condition: lit image, target: content)."""
    if len(source) == 0:
        raise DecoupleError("empty corpus")
    torch.manual_seed(cfg.seed)
    spec = DenoiserSpec(input_channels=6, base_width=cfg.base_width,
                        depth=cfg.depth, class_vocab=0)
    model = Denoiser(spec)
    sched = scaled_schedule(cfg.T)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))

    def batches():
        for _ in range(cfg.iterations):
            inps, targets = [], []
            for _ in range(cfg.batch_size):
                content, mask, light, _ = source.sample(rng)
                inp, target = make_removal_pair(content, mask, light, rng,
                                                cfg.synth_mix)
                inps.append(inp)
                targets.append(target)
            yield _to_batch(targets), _to_batch(inps), None

    meta = {"kind": "removal", "spec": asdict(spec),
            "schedule": schedule_meta(sched), "config": asdict(cfg)}
    return _train(model, sched, batches(), cfg, ckpt_path, log_path, meta, log)


def train_extraction(source: PairSource, cfg: ExtractionTrainConfig,
                     ckpt_path, log_path=None, log=None):
    """Train the extraction denoiser (condition: lit image, target: the
    added background light), optionally conditioned on light kind."""
    if len(source) == 0:
        raise DecoupleError("empty corpus")
    torch.manual_seed(cfg.seed)
    vocab = len(KINDS) if cfg.use_kind_conditioning else 0
    spec = DenoiserSpec(input_channels=6, base_width=cfg.base_width,
                        depth=cfg.depth, class_vocab=vocab)
    model = Denoiser(spec)
    sched = scaled_schedule(cfg.T)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))

    def batches():
        for _ in range(cfg.iterations):
            inps, targets, ids = [], [], []
            for _ in range(cfg.batch_size):
                content, mask, light, kind = source.sample(rng)
                inp, target, kind = make_extraction_pair(
                    content, mask, light, rng, kind, cfg.unlit_prob)
                inps.append(inp)
                targets.append(target)
                ids.append(KIND_INDEX[kind] if kind is not None else vocab)
            class_ids = (torch.tensor(ids, dtype=torch.long)
                         if vocab > 0 else None)
            yield _to_batch(targets), _to_batch(inps), class_ids

    meta = {"kind": "extraction", "spec": asdict(spec),
            "schedule": schedule_meta(sched), "config": asdict(cfg)}
    return _train(model, sched, batches(), cfg, ckpt_path, log_path, meta, log)


class _LoadedDenoiser:
    """Checkpoint handle exposing deterministic sampling."""

    expected_kind = None

    def __init__(self, path):
        meta, arrays = load_checkpoint(path)
        if meta.get("kind") != self.expected_kind:
            raise DecoupleError(
                f"{path} holds a {meta.get('kind')!r} checkpoint, "
                f"expected {self.expected_kind!r}")
        self.spec = DenoiserSpec(**meta["spec"])
        self.model = Denoiser(self.spec)
        load_into(self.model, arrays)
        self.model.eval()
        self.sched = schedule_from_meta(meta["schedule"])
        self.meta = meta
        self.path = os.fspath(path)
        self.sha256 = file_sha256(path)

    def _sample(self, conds, class_ids, n_steps, seeds):
        cond = _to_batch(conds)
        # ancestral sampling: deterministic DDIM drifts to a gray-background
        # fixed point on these mostly-black targets
        out = ddim_sample(self.model, cond, class_ids, n_steps, self.sched,
                          seed=list(seeds), eta=1.0)
        return [np.transpose(o, (1, 2, 0)).copy() for o in out.numpy()]


class RemovalModel(_LoadedDenoiser):
    expected_kind = "removal"

    def remove(self, image: np.ndarray, n_steps: int, seed: int) -> np.ndarray:
        return self.remove_many([image], n_steps, [seed])[0]

    def remove_many(self, images, n_steps: int, seeds, chunk: int = 32):
        images = [validate_image(im) for im in images]
        out = []
        for i in range(0, len(images), chunk):
            out.extend(self._sample(images[i:i + chunk], None, n_steps,
                                    seeds[i:i + chunk]))
        return out


class ExtractionModel(_LoadedDenoiser):
    expected_kind = "extraction"

    def _class_ids(self, kinds):
        if self.spec.class_vocab == 0:
            return None
        ids = [KIND_INDEX[LightKind(k)] if k is not None
               else self.spec.class_vocab for k in kinds]
        return torch.tensor(ids, dtype=torch.long)

    def extract(self, image: np.ndarray, kind, n_steps: int,
                seed: int) -> np.ndarray:
        return self.extract_many([image], [kind], n_steps, [seed])[0]

    def extract_many(self, images, kinds, n_steps: int, seeds,
                     chunk: int = 32):
        images = [validate_image(im) for im in images]
        out = []
        for i in range(0, len(images), chunk):
            out.extend(self._sample(images[i:i + chunk],
                                    self._class_ids(kinds[i:i + chunk]),
                                    n_steps, seeds[i:i + chunk]))
        return out


def load_decouple_model(path):
    """Open a checkpoint as the matching handle type."""
    meta, _ = load_checkpoint(path)
    kind = meta.get("kind")
    if kind == "removal":
        return RemovalModel(path)
    if kind == "extraction":
        return ExtractionModel(path)
    raise DecoupleError(f"{path} is not a decoupling checkpoint (kind={kind!r})")
