"""Two-stage light-effect transfer.

A frozen conditional reconstructor stands in for a large pretrained
generator. Stage 1 trains a low-rank adapter so the model maps a naive
content+light re-addition to the real lit image; stage 2 freezes the
adapter and trains a control branch that injects the light raster while
only the content image remains in the condition. Inference applies a
user transform to the light, re-adds it to the content, and samples with
adapter and control branch active.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, asdict

import numpy as np
import torch
from torch import nn

from .raster import (LightTransform, SynthesisParams, apply_transform,
                     composite, mask_background_light, validate_image,
                     validate_mask)
from .diffusion import (AdaptedDenoiser, ControlBranch, Denoiser,
                        DenoiserSpec, LowRankAdapter, control_forward,
                        ddim_sample, file_sha256, load_checkpoint, load_into,
                        scaled_schedule, save_checkpoint, schedule_meta,
                        schedule_from_meta, state_arrays)
from .train_loop import run_training, to_batch


class TransferError(ValueError):
    pass


@dataclass(frozen=True)
class BaseTrainConfig:
    iterations: int
    batch_size: int = 16
    learning_rate: float = 2e-4
    seed: int = 0
    base_width: int = 48
    depth: int = 3
    T: int = 1000
    log_every: int = 25

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise TransferError("learning_rate must be > 0")
        if self.iterations < 1 or self.batch_size < 1:
            raise TransferError("iterations and batch_size must be >= 1")


@dataclass(frozen=True)
class Stage1Config:
    iterations: int
    batch_size: int = 16
    learning_rate: float = 1e-4
    adapter_rank: int = 8
    seed: int = 0
    log_every: int = 25

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise TransferError("learning_rate must be > 0")
        if self.adapter_rank < 1:
            raise TransferError("adapter_rank must be >= 1")
        if self.iterations < 1 or self.batch_size < 1:
            raise TransferError("iterations and batch_size must be >= 1")


@dataclass(frozen=True)
class Stage2Config:
    iterations: int
    batch_size: int = 16
    learning_rate: float = 2e-4
    seed: int = 0
    log_every: int = 25

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise TransferError("learning_rate must be > 0")
        if self.iterations < 1 or self.batch_size < 1:
            raise TransferError("iterations and batch_size must be >= 1")


@dataclass(frozen=True)
class TransferRequest:
    content: np.ndarray
    light: np.ndarray
    transform: LightTransform
    fg_mask: np.ndarray = None
    n_steps: int = 50
    seed: int = 0

    def __post_init__(self):
        validate_image(self.content)
        validate_image(self.light)
        if self.content.shape != self.light.shape:
            raise TransferError(
                f"content {self.content.shape} and light {self.light.shape} "
                f"dims differ")
        h, w = self.content.shape[:2]
        if abs(self.transform.dx) >= w or abs(self.transform.dy) >= h:
            raise TransferError("translation moves the light fully off-image")
        if self.fg_mask is not None:
            validate_mask(self.fg_mask)
            if self.fg_mask.shape != self.content.shape[:2]:
                raise TransferError("fg_mask dims do not match content")
        if self.n_steps < 1:
            raise TransferError("n_steps must be >= 1")


_ONES = SynthesisParams(a=1.0, b=1.0)


def naive_composite(content, light, transform: LightTransform,
                    fg_mask=None) -> np.ndarray:
    """The training-free baseline and the model condition: transform the
    light, mask it to the background if a mask is given, and add it
    directly onto the content."""
    moved = apply_transform(light, transform)
    if fg_mask is not None:
        moved = mask_background_light(moved, fg_mask)
    return composite(content, moved, _ONES)


class ControlledDenoiser(nn.Module):
    """Adapted denoiser plus control branch as one sampling callable.

    The control raster rides along as the last three condition channels
    so the shared training loop and sampler stay unaware of it; both
    halves therefore pass through the same [0,1] -> [-1,1] encoding.
    """

    def __init__(self, model, branch: ControlBranch):
        super().__init__()
        self.model = model
        self.branch = branch

    def forward(self, x_t, t, cond, class_id=None):
        cond_img, ctl = cond[:, :-3], cond[:, -3:]
        return control_forward(self.model, self.branch, x_t, t, cond_img,
                               ctl, class_id)


def _sample_records(triplets, rng, n):
    idx = rng.integers(len(triplets), size=n)
    return [triplets[int(i)] for i in idx]


def train_base(triplets, cfg: BaseTrainConfig, ckpt_path, log_path=None,
               log=None):
    """Train the stand-in base generator: a conditional reconstructor of
    lit images. Later stages freeze this model and adapt around it."""
    triplets = list(triplets)
    if not triplets:
        raise TransferError("empty triplet dataset")
    torch.manual_seed(cfg.seed)
    spec = DenoiserSpec(input_channels=6, base_width=cfg.base_width,
                        depth=cfg.depth, class_vocab=0)
    model = Denoiser(spec)
    sched = scaled_schedule(cfg.T)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))

    def batches():
        for _ in range(cfg.iterations):
            imgs = [r["image"] for r in _sample_records(
                triplets, rng, cfg.batch_size)]
            x0 = to_batch(imgs)
            yield x0, x0.clone(), None

    meta = {"kind": "transfer_base", "spec": asdict(spec),
            "schedule": schedule_meta(sched), "config": asdict(cfg)}
    return run_training(model, sched, batches(), cfg, ckpt_path, log_path,
                        meta, log, error_cls=TransferError)


def _load_base(path):
    if not os.path.isfile(path):
        raise TransferError(f"missing base checkpoint: {path}")
    meta, arrays = load_checkpoint(path)
    if meta.get("kind") != "transfer_base":
        raise TransferError(
            f"expected a transfer_base checkpoint, got {meta.get('kind')!r}")
    model = Denoiser(DenoiserSpec(**meta["spec"]))
    load_into(model, arrays)
    model.eval()
    return model, schedule_from_meta(meta["schedule"]), meta


def _stage1_condition(rec) -> np.ndarray:
    l_bg = mask_background_light(rec["light"], rec["mask"])
    return composite(rec["content"], l_bg, _ONES)


def stage1_train(base_ckpt, triplets, cfg: Stage1Config, adapter_path,
                 log_path=None, log=None):
    """Stage 1: freeze the base, train only the adapter. Condition is
    the naive re-addition of content and background light; target is the
    original lit image."""
    triplets = list(triplets)
    if not triplets:
        raise TransferError("empty triplet dataset")
    base, sched, _ = _load_base(base_ckpt)
    torch.manual_seed(cfg.seed)
    adapter = LowRankAdapter(base, rank=cfg.adapter_rank)
    model = AdaptedDenoiser(base, adapter)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))

    def batches():
        for _ in range(cfg.iterations):
            recs = _sample_records(triplets, rng, cfg.batch_size)
            x0 = to_batch([r["image"] for r in recs])
            cond = to_batch([_stage1_condition(r) for r in recs])
            yield x0, cond, None

    meta = {"kind": "transfer_adapter", "base_sha256": file_sha256(base_ckpt),
            "spec": asdict(base.spec), "config": asdict(cfg)}
    return run_training(model, sched, batches(), cfg, adapter_path, log_path,
                        meta, log, error_cls=TransferError,
                        arrays_of=adapter)


def save_init_adapter(base_ckpt, rank: int, adapter_path, seed: int = 0):
    """Save a freshly initialized, untrained adapter.

    Its down factors are zero, so the adapted model equals the base
    exactly; pairing it with a trained control branch gives the
    no-adapter ablation through the ordinary bundle machinery.
    """
    base, _, _ = _load_base(base_ckpt)
    torch.manual_seed(seed)
    adapter = LowRankAdapter(base, rank=rank)
    cfg = Stage1Config(iterations=1, adapter_rank=rank, seed=seed)
    meta = {"kind": "transfer_adapter", "base_sha256": file_sha256(base_ckpt),
            "spec": asdict(base.spec), "config": asdict(cfg),
            "untrained": True}
    save_checkpoint(adapter_path, state_arrays(adapter), meta)
    return adapter_path


def _load_adapter(base, base_ckpt, adapter_ckpt):
    if not os.path.isfile(adapter_ckpt):
        raise TransferError(f"missing adapter checkpoint: {adapter_ckpt}")
    meta, arrays = load_checkpoint(adapter_ckpt)
    if meta.get("kind") != "transfer_adapter":
        raise TransferError(
            f"expected a transfer_adapter checkpoint, got "
            f"{meta.get('kind')!r}")
    if meta["base_sha256"] != file_sha256(base_ckpt):
        raise TransferError("adapter was trained against a different base "
                            "checkpoint")
    adapter = LowRankAdapter(base, rank=meta["config"]["adapter_rank"])
    load_into(adapter, arrays)
    return adapter, meta


def stage2_train(base_ckpt, adapter_ckpt, triplets, cfg: Stage2Config,
                 control_path, log_path=None, log=None):
    """Stage 2: freeze base and adapter, train the control branch. The
    condition drops to the content image alone; the light raster enters
    only through the branch."""
    triplets = list(triplets)
    if not triplets:
        raise TransferError("empty triplet dataset")
    base, sched, _ = _load_base(base_ckpt)
    adapter, _ = _load_adapter(base, base_ckpt, adapter_ckpt)
    for p in adapter.parameters():
        p.requires_grad_(False)
    torch.manual_seed(cfg.seed)
    branch = ControlBranch(base, control_channels=3)
    model = ControlledDenoiser(AdaptedDenoiser(base, adapter), branch)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))

    def batches():
        for _ in range(cfg.iterations):
            recs = _sample_records(triplets, rng, cfg.batch_size)
            x0 = to_batch([r["image"] for r in recs])
            cond = torch.cat([to_batch([r["content"] for r in recs]),
                              to_batch([r["light"] for r in recs])], dim=1)
            yield x0, cond, None

    meta = {"kind": "transfer_control", "base_sha256": file_sha256(base_ckpt),
            "adapter_sha256": file_sha256(adapter_ckpt),
            "spec": asdict(base.spec), "config": asdict(cfg)}
    return run_training(model, sched, batches(), cfg, control_path, log_path,
                        meta, log, error_cls=TransferError, arrays_of=branch)


BUNDLE_FILES = {"base": os.path.join("base", "model.ckpt"),
                "adapter": os.path.join("adapter", "model.ckpt"),
                "control": os.path.join("control", "model.ckpt")}


def bundle_paths(root) -> dict:
    root = os.fspath(root)
    return {k: os.path.join(root, rel) for k, rel in BUNDLE_FILES.items()}


def write_bundle_manifest(root) -> dict:
    """Hash the three bundle checkpoints and write bundle.json."""
    paths = bundle_paths(root)
    manifest = {"files": dict(BUNDLE_FILES), "sha256": {}, "configs": {}}
    for name, path in paths.items():
        if not os.path.isfile(path):
            raise TransferError(f"missing {name} checkpoint: {path}")
        meta, _ = load_checkpoint(path)
        manifest["sha256"][name] = file_sha256(path)
        manifest["configs"][name] = meta.get("config", {})
    with open(os.path.join(os.fspath(root), "bundle.json"), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return manifest


class TransferModel:
    """Loaded checkpoint bundle exposing deterministic transfer."""

    def __init__(self, bundle_root):
        self.root = os.fspath(bundle_root)
        paths = bundle_paths(self.root)
        base, sched, _ = _load_base(paths["base"])
        adapter, _ = _load_adapter(base, paths["base"], paths["adapter"])
        if not os.path.isfile(paths["control"]):
            raise TransferError(
                f"missing control checkpoint: {paths['control']}")
        cmeta, carrays = load_checkpoint(paths["control"])
        if cmeta.get("kind") != "transfer_control":
            raise TransferError(
                f"expected a transfer_control checkpoint, got "
                f"{cmeta.get('kind')!r}")
        if cmeta["adapter_sha256"] != file_sha256(paths["adapter"]):
            raise TransferError("control branch was trained against a "
                                "different adapter checkpoint")
        branch = ControlBranch(base, control_channels=3)
        load_into(branch, carrays)
        for p in branch.parameters():
            p.requires_grad_(False)
        for p in adapter.parameters():
            p.requires_grad_(False)
        self.model = ControlledDenoiser(
            AdaptedDenoiser(base, adapter), branch).eval()
        self.sched = sched
        self.resolution = None
        self.hashes = {name: file_sha256(p) for name, p in paths.items()}
        manifest_path = os.path.join(self.root, "bundle.json")
        if os.path.isfile(manifest_path):
            with open(manifest_path) as f:
                recorded = json.load(f)["sha256"]
            if recorded != self.hashes:
                raise TransferError("bundle.json hashes do not match the "
                                    "checkpoint files on disk")

    def transfer(self, req: TransferRequest) -> np.ndarray:
        return self.transfer_many([req])[0]

    def transfer_many(self, reqs, chunk: int = 16) -> list:
        """Batched inference; all requests must share n_steps."""
        if not reqs:
            return []
        n_steps = reqs[0].n_steps
        if any(r.n_steps != n_steps for r in reqs):
            raise TransferError("batched requests must share n_steps")
        outs = []
        for i in range(0, len(reqs), chunk):
            outs.extend(self._run_chunk(reqs[i:i + chunk], n_steps))
        return outs

    def _run_chunk(self, reqs, n_steps):
        conds, ctls, seeds = [], [], []
        for r in reqs:
            moved = apply_transform(r.light, r.transform)
            conds.append(naive_composite(r.content, r.light, r.transform,
                                         r.fg_mask))
            ctls.append(moved)
            seeds.append(r.seed)
        cond = torch.cat([to_batch(conds), to_batch(ctls)], dim=1)
        # ancestral sampling, matching the decoupling models
        out = ddim_sample(self.model, cond, None, n_steps, self.sched,
                          seed=list(seeds), eta=1.0)
        return [np.transpose(o, (1, 2, 0)).copy() for o in out.numpy()]


def load_bundle(bundle_root) -> TransferModel:
    return TransferModel(bundle_root)


def transfer(model, req: TransferRequest) -> np.ndarray:
    """One-shot convenience: model may be a TransferModel or a bundle
    directory path."""
    if not isinstance(model, TransferModel):
        model = TransferModel(model)
    return model.transfer(req)
