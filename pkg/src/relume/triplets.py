"""Triplet construction pipeline: select images with prominent light,
decouple them into content and light, recompose, and keep only the
samples whose embeddings certify a clean split.

Acceptance rule for a candidate with removal output I and extraction
output L, recomposed as I_S = clamp(I + L):
    cos_alpha = sim(I_L, I), cos_beta = sim(I_L, I_S)
    accept iff cos_beta > cos_alpha and cos_alpha < gamma
Ties reject on both strict inequalities.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, asdict

import numpy as np

from .raster import (RasterError, SynthesisParams, composite, luminance,
                     load_png, load_mask_png, save_png, save_mask_png)
from .synth import LightKind


def light_saliency(image: np.ndarray) -> float:
    """Prominence of bright light in an image: mean of the top 1% of
    luminance minus the median, clamped to [0, 1]. Deterministic."""
    luma = luminance(np.asarray(image, np.float32)).ravel()
    k = max(1, round(luma.size * 0.01))
    top = np.partition(luma, luma.size - k)[luma.size - k:]
    return float(np.clip(top.mean() - np.median(luma), 0.0, 1.0))


def select(images, threshold: float) -> list:
    """Indices of images whose saliency meets the threshold."""
    if not (0.0 <= threshold <= 1.0):
        raise RasterError(f"threshold must be in [0,1], got {threshold}")
    return [i for i, im in enumerate(images)
            if light_saliency(im) >= threshold]


def filter_check(cos_alpha: float, cos_beta: float, gamma: float) -> bool:
    """Keep a candidate iff recomposition is closer than the bare content
    (cos_beta > cos_alpha) and removal actually changed the image
    (cos_alpha < gamma). Strict on both sides."""
    return (cos_beta > cos_alpha) and (cos_alpha < gamma)


@dataclass(frozen=True)
class FilterDecision:
    cos_alpha: float
    cos_beta: float
    gamma: float
    passed: bool

    def __post_init__(self):
        for name in ("cos_alpha", "cos_beta"):
            v = getattr(self, name)
            if not (-1.0 - 1e-6 <= v <= 1.0 + 1e-6):
                raise RasterError(f"{name}={v} outside [-1, 1]")
        if self.passed != filter_check(self.cos_alpha, self.cos_beta,
                                       self.gamma):
            raise RasterError("decision inconsistent with the filter rule")

    @classmethod
    def evaluate(cls, cos_alpha: float, cos_beta: float,
                 gamma: float) -> "FilterDecision":
        return cls(cos_alpha=cos_alpha, cos_beta=cos_beta, gamma=gamma,
                   passed=filter_check(cos_alpha, cos_beta, gamma))


@dataclass
class Triplet:
    image_with_light: np.ndarray
    content: np.ndarray
    light: np.ndarray
    mask: np.ndarray
    kind: LightKind
    decision: FilterDecision
    provenance: dict


@dataclass
class Rejection:
    decision: FilterDecision
    content: np.ndarray
    light: np.ndarray


def similarity(embedder, x: np.ndarray, y: np.ndarray) -> float:
    """Cosine similarity of the two images' embeddings."""
    vecs = embedder.embed_many([x, y])
    return float(np.clip(np.dot(vecs[0], vecs[1]), -1.0, 1.0))


@dataclass(frozen=True)
class PipelineConfig:
    gamma: float = 0.98
    selection_threshold: float = 0.15
    re_removal_threshold: float = 0.30
    n_steps: int = 20
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0):
            raise RasterError(f"gamma must be in (0,1], got {self.gamma}")
        if not (0.0 <= self.selection_threshold <= 1.0):
            raise RasterError("selection_threshold must be in [0,1]")


def build_triplet(removal, extraction, embedder, image: np.ndarray,
                  kind, cfg: PipelineConfig, mask=None, seed=None):
    """Decouple one selected image; returns a Triplet when accepted,
    otherwise a Rejection carrying the failing FilterDecision.

    Sub-seeds are derived as seed, seed+1 (optional second removal
    round), seed+2 (extraction).
    """
    seed = cfg.seed if seed is None else int(seed)
    content = removal.remove(image, cfg.n_steps, seed)
    rounds = 1
    if light_saliency(content) > cfg.re_removal_threshold:
        content = removal.remove(content, cfg.n_steps, seed + 1)
        rounds = 2
    light = extraction.extract(image, kind, cfg.n_steps, seed + 2)
    recomposed = composite(content, light, SynthesisParams(a=1.0, b=1.0))
    cos_alpha = similarity(embedder, image, content)
    cos_beta = similarity(embedder, image, recomposed)
    decision = FilterDecision.evaluate(cos_alpha, cos_beta, cfg.gamma)
    if not decision.passed:
        return Rejection(decision=decision, content=content, light=light)
    if mask is None:
        mask = np.zeros(image.shape[:2], np.float32)
    return Triplet(
        image_with_light=image, content=content, light=light, mask=mask,
        kind=kind, decision=decision,
        provenance={"seed": seed, "removal_rounds": rounds,
                    "removal_ckpt": getattr(removal, "sha256", None),
                    "extraction_ckpt": getattr(extraction, "sha256", None)})


def load_triplet_dir(root) -> list:
    """Load an accepted-triplet dataset written by run_pipeline.

    Returns one dict per triplets.jsonl line with the rasters loaded:
    id, image, content, light, mask, kind.
    """
    root = os.fspath(root)
    index = os.path.join(root, "triplets.jsonl")
    if not os.path.isfile(index):
        raise RasterError(f"no triplet index at {index}")
    out = []
    with open(index) as f:
        for line in f:
            rec = json.loads(line)
            tid = rec["id"]
            out.append({
                "id": tid,
                "image": load_png(os.path.join(root, "image", tid + ".png")),
                "content": load_png(os.path.join(root, "content",
                                                 tid + ".png")),
                "light": load_png(os.path.join(root, "light", tid + ".png")),
                "mask": load_mask_png(os.path.join(root, "mask",
                                                   tid + ".png")),
                "kind": LightKind(rec["kind"]) if rec.get("kind") else None,
            })
    return out


def _decision_histogram(values, bins=20):
    hist, edges = np.histogram(np.asarray(values, np.float64), bins=bins,
                               range=(-1.0, 1.0))
    return {"counts": hist.tolist(), "edges": np.round(edges, 4).tolist()}


def _remove_many(removal, images, n_steps, seeds):
    fn = getattr(removal, "remove_many", None)
    if fn is not None:
        return fn(images, n_steps, seeds)
    return [removal.remove(im, n_steps, s) for im, s in zip(images, seeds)]


def _extract_many(extraction, images, kinds, n_steps, seeds):
    fn = getattr(extraction, "extract_many", None)
    if fn is not None:
        return fn(images, kinds, n_steps, seeds)
    return [extraction.extract(im, k, n_steps, s)
            for im, k, s in zip(images, kinds, seeds)]


def run_pipeline(sources, removal, extraction, embedder,
                 cfg: PipelineConfig, out_root, log=None) -> dict:
    """Run Selection -> Generation -> Filtering over source records and
    write the accepted dataset.

    Each source record is a dict with id, image, mask and kind. Accepted
    triplets land in {image,content,light,mask}/<id>.png plus a
    triplets.jsonl line; every generated candidate (accepted or not) is
    recorded in generated.jsonl, with rejected rasters kept under
    rejected/ for population-level evaluation.

    Stage order and per-image sub-seeds match build_triplet; model calls
    are batched when the handles provide *_many methods.
    """
    sources = list(sources)
    out_root = os.fspath(out_root)
    os.makedirs(out_root, exist_ok=True)
    kept = select([s["image"] for s in sources], cfg.selection_threshold)
    stats = {"source": len(sources), "selected": len(kept), "generated": 0,
             "accepted": 0}
    images = [sources[i]["image"] for i in kept]
    kinds = [sources[i].get("kind") for i in kept]
    seeds = [int(np.random.SeedSequence([cfg.seed, 3, j]).generate_state(1)[0])
             for j in range(len(kept))]

    contents = _remove_many(removal, images, cfg.n_steps, seeds)
    rounds = [1] * len(kept)
    flagged = [k for k, c in enumerate(contents)
               if light_saliency(c) > cfg.re_removal_threshold]
    if flagged:
        if log:
            log(f"re-removal on {len(flagged)}/{len(kept)}")
        redone = _remove_many(removal, [contents[k] for k in flagged],
                              cfg.n_steps, [seeds[k] + 1 for k in flagged])
        for k, c in zip(flagged, redone):
            contents[k] = c
            rounds[k] = 2
    lights = _extract_many(extraction, images, kinds, cfg.n_steps,
                           [s + 2 for s in seeds])
    if log:
        log(f"decoupled {len(kept)} candidates")

    ones = SynthesisParams(a=1.0, b=1.0)
    recomposed = [composite(c, l, ones) for c, l in zip(contents, lights)]
    emb_src = embedder.embed_many(images) if images else np.empty((0, 1))
    emb_content = embedder.embed_many(contents) if images else emb_src
    emb_recomp = embedder.embed_many(recomposed) if images else emb_src
    cos_alpha = np.clip((emb_src * emb_content).sum(axis=1), -1.0, 1.0)
    cos_beta = np.clip((emb_src * emb_recomp).sum(axis=1), -1.0, 1.0)

    records, gen_records = [], []
    for j, idx in enumerate(kept):
        src = sources[idx]
        decision = FilterDecision.evaluate(float(cos_alpha[j]),
                                           float(cos_beta[j]), cfg.gamma)
        stats["generated"] += 1
        gen_records.append({"id": src["id"], "seed": seeds[j],
                            "accepted": decision.passed, **asdict(decision)})
        if decision.passed:
            stats["accepted"] += 1
            mask = src.get("mask")
            if mask is None:
                mask = np.zeros(src["image"].shape[:2], np.float32)
            trip = Triplet(
                image_with_light=src["image"], content=contents[j],
                light=lights[j], mask=mask, kind=kinds[j], decision=decision,
                provenance={"seed": seeds[j], "removal_rounds": rounds[j],
                            "removal_ckpt": getattr(removal, "sha256", None),
                            "extraction_ckpt": getattr(extraction, "sha256",
                                                       None)})
            _store_triplet(out_root, src["id"], trip)
            records.append(_triplet_record(src["id"], trip))
        else:
            save_png(os.path.join(out_root, "rejected", "content",
                                  src["id"] + ".png"), contents[j])
            save_png(os.path.join(out_root, "rejected", "light",
                                  src["id"] + ".png"), lights[j])
    with open(os.path.join(out_root, "triplets.jsonl"), "w") as f:
        for r in records:
            f.write(json.dumps(r, sort_keys=True) + "\n")
    with open(os.path.join(out_root, "generated.jsonl"), "w") as f:
        for r in gen_records:
            f.write(json.dumps(r, sort_keys=True) + "\n")
    stats["cos_alpha_hist"] = _decision_histogram(cos_alpha)
    stats["cos_beta_hist"] = _decision_histogram(cos_beta)
    with open(os.path.join(out_root, "stats.json"), "w") as f:
        json.dump(stats, f, indent=1, sort_keys=True)
    return stats


def _store_triplet(root, tid, t: Triplet):
    save_png(os.path.join(root, "image", tid + ".png"), t.image_with_light)
    save_png(os.path.join(root, "content", tid + ".png"), t.content)
    save_png(os.path.join(root, "light", tid + ".png"), t.light)
    save_mask_png(os.path.join(root, "mask", tid + ".png"), t.mask)


def _triplet_record(tid, t: Triplet) -> dict:
    return {"id": tid, "kind": t.kind.value if t.kind else None,
            "cos_alpha": t.decision.cos_alpha, "cos_beta": t.decision.cos_beta,
            "gamma": t.decision.gamma, "passed": t.decision.passed,
            "provenance": t.provenance}
