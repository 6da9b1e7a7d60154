"""Command line pipeline runner.

Subcommands cover the full workflow on one run directory:

    gen-data        synthesize the scene/light corpus
    train-decouple  train removal + extraction models and the embedder
    build-triplets  decouple held-out composites into training triplets
    train-transfer  train the three-stage transfer bundle (+ ablation)
    infer           run one transfer request from the command line
    evaluate        compute the metric suite into eval/metrics.json
    report          render figures and a markdown report

Every subcommand takes --config (an INI run config, see config.py) and
optional --set section.key=value overrides, holds a lock file on the
output directory while it runs, and records a manifest of the artifacts
it wrote. Exit codes: 0 success, 2 bad config or arguments, 3 missing
prerequisite artifact, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
from contextlib import contextmanager
from dataclasses import asdict

import numpy as np

from .config import ConfigError, load_config
from .raster import (RasterError, LightTransform, SynthesisParams, composite,
                     load_mask_png, load_png, mask_background_light, save_png)
from .synth import LightKind, gen_corpus
from .decouple import (ExtractionModel, ExtractionTrainConfig, PairSource,
                       RemovalModel, RemovalTrainConfig, train_extraction,
                       train_removal)
from .embedder import Embedder, train_embedder
from .triplets import PipelineConfig, load_triplet_dir, run_pipeline
from .transfer import (BaseTrainConfig, Stage1Config, Stage2Config,
                       TransferError, TransferModel, TransferRequest,
                       bundle_paths, naive_composite, save_init_adapter,
                       stage1_train, stage2_train, train_base,
                       write_bundle_manifest)
from .metrics import (SuccessCriteria, dark_region_mean, light_fid,
                      pearson_correlation, psnr, success_rate_harness)
from .diffusion import file_sha256


class PrereqError(RuntimeError):
    """A required artifact from an earlier pipeline stage is missing."""


def _seed32(parts) -> int:
    return int(np.random.SeedSequence(parts).generate_state(1)[0])


def _p(cfg, *parts) -> str:
    return os.path.join(cfg.run.out_root, *parts)


def _require(path, hint):
    if not os.path.exists(path):
        raise PrereqError(f"missing {path}; run `relume {hint}` first")
    return path


@contextmanager
def _locked(out_root):
    """Exclusive lock on the run directory for the current invocation."""
    os.makedirs(out_root, exist_ok=True)
    lock = os.path.join(out_root, ".lock")
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RuntimeError(
            f"{out_root} is locked by another relume invocation; "
            f"remove {lock} if that run is gone") from None
    try:
        os.write(fd, f"{os.getpid()}\n".encode())
        os.close(fd)
        yield
    finally:
        os.unlink(lock)


def _write_manifest(cfg, command, artifacts):
    """Record the config snapshot and the hashes of produced artifacts.

    Keys are out_root-relative where possible. Timing logs are
    deliberately not listed: manifests must be byte-stable across
    replays of the same config.
    """
    out_root = cfg.run.out_root
    listed = {}
    for path in artifacts:
        resolved = os.path.abspath(path)
        root = os.path.abspath(out_root)
        key = (os.path.relpath(resolved, root)
               if resolved.startswith(root + os.sep) else path)
        listed[key] = file_sha256(path)
    doc = {"command": command, "config": asdict(cfg), "artifacts": listed}
    mdir = _p(cfg, "manifests")
    os.makedirs(mdir, exist_ok=True)
    with open(os.path.join(mdir, command + ".json"), "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)


def _logger(command):
    def log(msg):
        print(f"[{command}] {msg}", flush=True)
    return log


# ---------------------------------------------------------------------------
# corpus access


def _corpus_manifest(cfg) -> dict:
    path = _p(cfg, "corpus", "manifest.json")
    _require(path, "gen-data")
    with open(path) as f:
        man = json.load(f)
    c = cfg.corpus
    if (man["seed"] != c.master_seed or man["resolution"] != c.resolution
            or len(man["scenes"]) != c.scenes or len(man["lights"]) != c.lights):
        raise PrereqError(
            f"corpus at {_p(cfg, 'corpus')} does not match the [corpus] "
            f"config section; rerun `relume gen-data`")
    return man


class _CorpusCache:
    """Lazy PNG loader over the corpus directory."""

    def __init__(self, cfg):
        self.root = _p(cfg, "corpus")
        self._scenes, self._lights = {}, {}

    def scene(self, sid):
        if sid not in self._scenes:
            img = load_png(os.path.join(self.root, "scenes", sid + ".png"))
            mask = load_mask_png(os.path.join(self.root, "masks", sid + ".png"))
            self._scenes[sid] = (img, mask)
        return self._scenes[sid]

    def light(self, lid):
        if lid not in self._lights:
            self._lights[lid] = load_png(
                os.path.join(self.root, "lights", lid + ".png"))
        return self._lights[lid]


def _held_out(cfg, man):
    return (man["scenes"][cfg.decouple.train_scenes:],
            man["lights"][cfg.decouple.train_lights:])


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(cfg, args, log):
    c = cfg.corpus
    gen_corpus(_p(cfg, "corpus"), c.scenes, c.lights, c.master_seed,
               c.resolution, log=log)
    log(f"corpus written to {_p(cfg, 'corpus')}")
    return [_p(cfg, "corpus", "manifest.json")]


def _train_split(cfg, man, cache):
    d = cfg.decouple
    scenes, masks = [], []
    for row in man["scenes"][:d.train_scenes]:
        img, mask = cache.scene(row["id"])
        scenes.append(img)
        masks.append(mask)
    light_rows = man["lights"][:d.train_lights]
    lights = [cache.light(r["id"]) for r in light_rows]
    kinds = [LightKind(r["kind"]) for r in light_rows]
    return scenes, masks, lights, kinds


def _embedder_images(cfg, scenes, masks, lights):
    """Mixed training set for the embedder: lit composites plus a share
    of plain scenes, mirroring what the triplet pipeline will embed."""
    count = max(cfg.embedder.min_corpus, 1500)
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([cfg.run.seed, 7])))
    out = []
    for _ in range(count):
        i = int(rng.integers(len(scenes)))
        j = int(rng.integers(len(lights)))
        unlit = rng.random() < 0.25
        b = float(rng.uniform(0.5, 1.0))
        if unlit:
            out.append(scenes[i])
        else:
            l_bg = mask_background_light(lights[j], masks[i])
            out.append(composite(scenes[i], l_bg, SynthesisParams(a=1.0, b=b)))
    return out


def cmd_train_decouple(cfg, args, log):
    man = _corpus_manifest(cfg)
    cache = _CorpusCache(cfg)
    scenes, masks, lights, kinds = _train_split(cfg, man, cache)
    source = PairSource(scenes, masks, lights, kinds=kinds)
    d = cfg.decouple
    models = _p(cfg, "models")

    log(f"training removal on {len(scenes)} scenes x {len(lights)} lights")
    rcfg = RemovalTrainConfig(
        iterations=d.removal_iterations, batch_size=d.batch_size,
        learning_rate=d.learning_rate, synth_mix=d.synth_mix,
        seed=cfg.run.seed, base_width=d.base_width, depth=d.depth,
        T=d.timesteps)
    train_removal(source, rcfg, os.path.join(models, "removal.ckpt"),
                  os.path.join(models, "removal.jsonl"), log=log)

    log("training extraction")
    ecfg = ExtractionTrainConfig(
        iterations=d.extraction_iterations, batch_size=d.batch_size,
        learning_rate=d.learning_rate,
        use_kind_conditioning=d.kind_conditioning,
        unlit_prob=d.unlit_prob, seed=cfg.run.seed,
        base_width=d.base_width, depth=d.depth, T=d.timesteps)
    train_extraction(source, ecfg, os.path.join(models, "extraction.ckpt"),
                     os.path.join(models, "extraction.jsonl"), log=log)

    log("training embedder")
    e = cfg.embedder
    images = _embedder_images(cfg, scenes, masks, lights)
    emb = train_embedder(images, embedding_dim=e.dim, iterations=e.iterations,
                         batch_size=e.batch_size, learning_rate=e.learning_rate,
                         seed=cfg.run.seed, min_corpus=e.min_corpus, log=log)
    emb.save(os.path.join(models, "embedder.ckpt"))
    return [os.path.join(models, n + ".ckpt")
            for n in ("removal", "extraction", "embedder")]


def _draw_sources(cfg, man) -> list:
    """Deterministic source plan for the triplet pipeline: held-out
    scenes composited with held-out background light, with a share of
    unlit scenes left as-is. All draws happen for every row so the
    stream stays aligned regardless of the unlit flag."""
    held_s, held_l = _held_out(cfg, man)
    t = cfg.triplets
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([cfg.run.seed, 5])))
    draws = []
    for j in range(t.source_count):
        si = int(rng.integers(len(held_s)))
        li = int(rng.integers(len(held_l)))
        unlit = bool(rng.random() < t.unlit_fraction)
        b = float(rng.uniform(0.5, 1.0))
        draws.append({"id": f"src_{j:05d}", "scene": held_s[si]["id"],
                      "light": held_l[li]["id"],
                      "kind": held_l[li]["kind"], "unlit": unlit, "b": b})
    return draws


def _source_record(draw, cache, with_truth=False):
    scene, mask = cache.scene(draw["scene"])
    if draw["unlit"]:
        image, kind = scene, None
        light_true = np.zeros_like(scene)
    else:
        l_bg = mask_background_light(cache.light(draw["light"]), mask)
        image = composite(scene, l_bg, SynthesisParams(a=1.0, b=draw["b"]))
        light_true = np.clip(draw["b"] * l_bg, 0.0, 1.0).astype(np.float32)
        kind = LightKind(draw["kind"])
    rec = {"id": draw["id"], "image": image, "mask": mask, "kind": kind}
    if with_truth:
        rec["content_true"] = scene
        rec["light_true"] = light_true
    return rec


def cmd_build_triplets(cfg, args, log):
    man = _corpus_manifest(cfg)
    models = _p(cfg, "models")
    removal = RemovalModel(_require(os.path.join(models, "removal.ckpt"),
                                    "train-decouple"))
    extraction = ExtractionModel(_require(
        os.path.join(models, "extraction.ckpt"), "train-decouple"))
    embedder = Embedder.load(_require(os.path.join(models, "embedder.ckpt"),
                                      "train-decouple"))
    cache = _CorpusCache(cfg)
    draws = _draw_sources(cfg, man)
    sources = [_source_record(d, cache) for d in draws]
    log(f"decoupling {len(sources)} sources")

    out = _p(cfg, "triplets")
    if os.path.isdir(out):
        shutil.rmtree(out)
    t = cfg.triplets
    pcfg = PipelineConfig(gamma=t.gamma,
                          selection_threshold=t.selection_threshold,
                          re_removal_threshold=t.re_removal_threshold,
                          n_steps=t.n_steps, seed=cfg.run.seed)
    stats = run_pipeline(sources, removal, extraction, embedder, pcfg, out,
                         log=log)
    with open(os.path.join(out, "sources.jsonl"), "w") as f:
        for d in draws:
            f.write(json.dumps(d, sort_keys=True) + "\n")
    log(f"accepted {stats['accepted']}/{stats['generated']} candidates")
    return [os.path.join(out, n) for n in
            ("triplets.jsonl", "generated.jsonl", "stats.json",
             "sources.jsonl")]


def _load_triplets(cfg):
    try:
        return load_triplet_dir(_p(cfg, "triplets"))
    except RasterError as e:
        raise PrereqError(f"{e}; run `relume build-triplets` first") from None


def cmd_train_transfer(cfg, args, log):
    trips = _load_triplets(cfg)
    n_eval = cfg.eval.count
    if len(trips) <= n_eval:
        raise PrereqError(
            f"only {len(trips)} triplets but eval.count={n_eval}; grow "
            f"triplet.source_count or lower eval.count")
    train = trips[:len(trips) - n_eval]
    log(f"{len(train)} training triplets, {n_eval} held out for evaluation")
    t, d = cfg.transfer, cfg.decouple
    models = _p(cfg, "models")
    bundle = bundle_paths(_p(cfg, "bundle"))
    ablation = bundle_paths(_p(cfg, "ablation"))

    log("stage 0: base reconstructor")
    bcfg = BaseTrainConfig(iterations=t.base_iterations,
                           batch_size=t.batch_size, learning_rate=t.base_lr,
                           seed=cfg.run.seed, base_width=d.base_width,
                           depth=d.depth, T=d.timesteps)
    train_base(train, bcfg, bundle["base"],
               os.path.join(models, "transfer_base.jsonl"), log=log)

    log("stage 1: low-rank adaptation")
    s1 = Stage1Config(iterations=t.stage1_iterations, batch_size=t.batch_size,
                      learning_rate=t.stage1_lr, adapter_rank=t.adapter_rank,
                      seed=cfg.run.seed)
    stage1_train(bundle["base"], train, s1, bundle["adapter"],
                 os.path.join(models, "transfer_stage1.jsonl"), log=log)

    log("stage 2: control branch")
    s2 = Stage2Config(iterations=t.stage2_iterations, batch_size=t.batch_size,
                      learning_rate=t.stage2_lr, seed=cfg.run.seed)
    stage2_train(bundle["base"], bundle["adapter"], train, s2,
                 bundle["control"],
                 os.path.join(models, "transfer_stage2.jsonl"), log=log)
    write_bundle_manifest(_p(cfg, "bundle"))

    # ablation bundle: stage 2 trained against an untouched zero adapter,
    # the exact no-adaptation baseline used by the evaluation orderings
    log("ablation: stage 2 without adaptation")
    os.makedirs(os.path.dirname(ablation["base"]), exist_ok=True)
    shutil.copyfile(bundle["base"], ablation["base"])
    save_init_adapter(ablation["base"], t.adapter_rank, ablation["adapter"],
                      seed=cfg.run.seed)
    stage2_train(ablation["base"], ablation["adapter"], train, s2,
                 ablation["control"],
                 os.path.join(models, "ablation_stage2.jsonl"), log=log)
    write_bundle_manifest(_p(cfg, "ablation"))

    arts = [bundle[k] for k in ("base", "adapter", "control")]
    arts += [ablation[k] for k in ("base", "adapter", "control")]
    arts += [_p(cfg, "bundle", "bundle.json"), _p(cfg, "ablation", "bundle.json")]
    return arts


def cmd_infer(cfg, args, log):
    bundle = _p(cfg, "bundle")
    _require(os.path.join(bundle, "bundle.json"), "train-transfer")
    try:
        content = load_png(args.content)
        light = load_png(args.light)
        mask = load_mask_png(args.mask) if args.mask else None
        transform = LightTransform(dx=args.dx, dy=args.dy, hflip=args.hflip,
                                   vflip=args.vflip, quarter_turns=args.turns,
                                   intensity=args.intensity)
        steps = cfg.transfer.n_steps if args.steps is None else args.steps
        req = TransferRequest(content=content, light=light,
                              transform=transform, fg_mask=mask,
                              n_steps=steps, seed=args.seed)
    except (RasterError, TransferError, OSError) as e:
        raise ConfigError(str(e)) from None
    model = TransferModel(bundle)
    out = model.transfer(req)
    save_png(args.out, out)
    log(f"wrote {args.out} (steps={req.n_steps} seed={req.seed})")
    return [args.out]


def _read_jsonl(path):
    with open(path) as f:
        return [json.loads(line) for line in f]


def _decouple_eval_pairs(cfg, man, cache):
    """Held-out synthetic pairs for scoring the trained decouplers.

    Lights that vanish behind the foreground mask are redrawn so the
    correlation target is never degenerate.
    """
    held_s, held_l = _held_out(cfg, man)
    e = cfg.eval
    pairs = []
    for j in range(e.count):
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence([e.seed, 1, j])))
        for _ in range(20):
            si = int(rng.integers(len(held_s)))
            li = int(rng.integers(len(held_l)))
            b = float(rng.uniform(0.5, 1.0))
            scene, mask = cache.scene(held_s[si]["id"])
            light = cache.light(held_l[li]["id"])
            l_bg = mask_background_light(light, mask)
            if l_bg.max() >= 0.05:
                break
        pairs.append({
            "content": scene,
            "removal_input": composite(scene, light, SynthesisParams(1.0, b)),
            "extraction_input": composite(scene, l_bg,
                                          SynthesisParams(1.0, b)),
            "light_true": np.clip(b * l_bg, 0.0, 1.0).astype(np.float32),
            "kind": LightKind(held_l[li]["kind"]),
        })
    return pairs


def _mean(vals) -> float:
    return float(np.mean(np.asarray(vals, np.float64)))


def _evaluate_decoupling(cfg, man, cache, removal, extraction):
    e = cfg.eval
    pairs = _decouple_eval_pairs(cfg, man, cache)
    seeds = [_seed32([e.seed, 2, j]) for j in range(len(pairs))]
    removed = removal.remove_many([p["removal_input"] for p in pairs],
                                  e.n_steps, seeds)
    extracted = extraction.extract_many(
        [p["extraction_input"] for p in pairs], [p["kind"] for p in pairs],
        e.n_steps, [s + 1 for s in seeds])
    psnr_model = _mean([psnr(o, p["content"])
                        for o, p in zip(removed, pairs)])
    psnr_input = _mean([psnr(p["removal_input"], p["content"])
                        for p in pairs])
    corr = _mean([pearson_correlation(o, p["light_true"])
                  for o, p in zip(extracted, pairs)])
    dark = _mean([dark_region_mean(o, p["light_true"])
                  for o, p in zip(extracted, pairs)])

    # a model that only ever saw lit inputs must stay silent on unlit ones
    held_s, _ = _held_out(cfg, man)
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([e.seed, 6])))
    idx = rng.choice(len(held_s), size=min(e.count, len(held_s)),
                     replace=False)
    unlit = [cache.scene(held_s[int(i)]["id"])[0] for i in idx]
    quiet = extraction.extract_many(unlit, [None] * len(unlit), e.n_steps,
                                    [_seed32([e.seed, 7, j])
                                     for j in range(len(unlit))])
    return {
        "removal_psnr_model": round(psnr_model, 6),
        "removal_psnr_input": round(psnr_input, 6),
        "removal_margin_db": round(psnr_model - psnr_input, 6),
        "extraction_dark_mean": round(dark, 6),
        "extraction_correlation": round(corr, 6),
        "extraction_unlit_mean": round(_mean([q.mean() for q in quiet]), 6),
    }


def _evaluate_harness(cfg, cache, criteria):
    """Decoupling success rates over the generated triplet population,
    filtered (accepted) versus unfiltered (every candidate)."""
    troot = _p(cfg, "triplets")
    draws = {d["id"]: d for d in
             _read_jsonl(_require(os.path.join(troot, "sources.jsonl"),
                                  "build-triplets"))}
    generated = _read_jsonl(os.path.join(troot, "generated.jsonl"))
    all_records, kept_records = [], []
    for row in generated:
        draw = draws[row["id"]]
        if draw["unlit"]:
            continue  # the harness scores lit inputs only
        scene, mask = cache.scene(draw["scene"])
        l_bg = mask_background_light(cache.light(draw["light"]), mask)
        sub = "" if row["accepted"] else "rejected"
        rec = {
            "content_pred": load_png(os.path.join(
                troot, sub, "content", row["id"] + ".png")),
            "light_pred": load_png(os.path.join(
                troot, sub, "light", row["id"] + ".png")),
            "content_true": scene,
            "light_true": np.clip(draw["b"] * l_bg, 0.0, 1.0).astype(
                np.float32),
        }
        all_records.append(rec)
        if row["accepted"]:
            kept_records.append(rec)
    return {
        "filtered": success_rate_harness(kept_records, criteria),
        "unfiltered": success_rate_harness(all_records, criteria),
    }


def _evaluate_transfer(cfg, embedder):
    trips = _load_triplets(cfg)
    e = cfg.eval
    if len(trips) <= e.count:
        raise PrereqError(f"only {len(trips)} triplets but eval.count="
                          f"{e.count}; retrain with more sources")
    hold = trips[-e.count:]
    _require(_p(cfg, "bundle", "bundle.json"), "train-transfer")
    _require(_p(cfg, "ablation", "bundle.json"), "train-transfer")
    full = TransferModel(_p(cfg, "bundle"))
    ablation = TransferModel(_p(cfg, "ablation"))
    identity = LightTransform()
    no_light = LightTransform(intensity=0.0)

    def requests(transform):
        return [TransferRequest(content=t["content"], light=t["light"],
                                transform=transform, fg_mask=t["mask"],
                                n_steps=e.n_steps,
                                seed=_seed32([e.seed, 4, i]))
                for i, t in enumerate(hold)]

    refs = [t["image"] for t in hold]
    out_full = full.transfer_many(requests(identity))
    out_content = full.transfer_many(requests(no_light))
    out_stage2 = ablation.transfer_many(requests(identity))
    naive = [naive_composite(t["content"], t["light"], identity, t["mask"])
             for t in hold]
    return {
        "light_fid": {
            "full": round(light_fid(embedder, out_full, refs), 6),
            "naive_composite": round(light_fid(embedder, naive, refs), 6),
            "content_only": round(light_fid(embedder, out_content, refs), 6),
            "stage2_only": round(light_fid(embedder, out_stage2, refs), 6),
        },
        "transfer": {
            "psnr_model": round(_mean(
                [psnr(o, r) for o, r in zip(out_full, refs)]), 6),
            "psnr_naive": round(_mean(
                [psnr(o, r) for o, r in zip(naive, refs)]), 6),
        },
        "count": len(hold),
    }


def _training_seconds(cfg, name):
    path = _p(cfg, "models", name + ".jsonl")
    if not os.path.isfile(path):
        return None
    rows = _read_jsonl(path)
    return rows[-1]["elapsed_s"] if rows else None


def cmd_evaluate(cfg, args, log):
    man = _corpus_manifest(cfg)
    cache = _CorpusCache(cfg)
    models = _p(cfg, "models")
    removal = RemovalModel(_require(os.path.join(models, "removal.ckpt"),
                                    "train-decouple"))
    extraction = ExtractionModel(_require(
        os.path.join(models, "extraction.ckpt"), "train-decouple"))
    embedder = Embedder.load(_require(os.path.join(models, "embedder.ckpt"),
                                      "train-decouple"))
    e = cfg.eval
    criteria = SuccessCriteria(tau_content=e.tau_content,
                               dark_mean_max=e.dark_mean_max,
                               min_correlation=e.min_correlation)

    log("scoring decoupling on held-out pairs")
    decoupling = _evaluate_decoupling(cfg, man, cache, removal, extraction)
    log("scoring filtered vs unfiltered triplet populations")
    harness = _evaluate_harness(cfg, cache, criteria)
    log("scoring transfer bundle and ablations")
    transfer = _evaluate_transfer(cfg, embedder)

    with open(_p(cfg, "triplets", "stats.json")) as f:
        stats = json.load(f)
    metrics = {
        "criteria": asdict(criteria),
        "decoupling": decoupling,
        "harness": harness,
        "light_fid": transfer["light_fid"],
        "transfer": transfer["transfer"],
        "counts": {
            "sources": stats["source"],
            "selected": stats["selected"],
            "generated": stats["generated"],
            "accepted": stats["accepted"],
            "eval_triplets": transfer["count"],
        },
    }
    os.makedirs(_p(cfg, "eval"), exist_ok=True)
    mpath = _p(cfg, "eval", "metrics.json")
    with open(mpath, "w") as f:
        json.dump(metrics, f, indent=1, sort_keys=True)

    # wall times live outside metrics.json: they never replay byte-equal
    timings = {name: _training_seconds(cfg, name)
               for name in ("removal", "extraction", "transfer_base",
                            "transfer_stage1", "transfer_stage2",
                            "ablation_stage2")}
    with open(_p(cfg, "eval", "timings.json"), "w") as f:
        json.dump(timings, f, indent=1, sort_keys=True)
    log(f"metrics written to {mpath}")
    return [mpath]


def _plot_losses(cfg, ax, names, title):
    for name in names:
        path = _p(cfg, "models", name + ".jsonl")
        if not os.path.isfile(path):
            continue
        rows = _read_jsonl(path)
        ax.plot([r["iteration"] for r in rows], [r["loss"] for r in rows],
                label=name)
    ax.set_title(title)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=7)


def cmd_report(cfg, args, log):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    mpath = _require(_p(cfg, "eval", "metrics.json"), "evaluate")
    with open(mpath) as f:
        metrics = json.load(f)
    with open(_require(_p(cfg, "triplets", "stats.json"),
                       "build-triplets")) as f:
        stats = json.load(f)
    rdir = _p(cfg, "eval", "report")
    if os.path.isdir(rdir):
        shutil.rmtree(rdir)
    os.makedirs(rdir)
    figures = []

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.2))
    _plot_losses(cfg, axes[0], ["removal", "extraction"], "decoupling")
    _plot_losses(cfg, axes[1], ["transfer_base", "transfer_stage1",
                                "transfer_stage2", "ablation_stage2"],
                 "transfer stages")
    fig.tight_layout()
    figures.append(os.path.join(rdir, "losses.png"))
    fig.savefig(figures[-1], dpi=110)
    plt.close(fig)

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.2))
    for ax, key in zip(axes, ("cos_alpha_hist", "cos_beta_hist")):
        hist = stats[key]
        ax.bar(hist["edges"][:-1], hist["counts"],
               width=np.diff(hist["edges"]), align="edge")
        ax.set_title(key.replace("_hist", ""))
        ax.set_xlim(0.0, 1.0)
    fig.tight_layout()
    figures.append(os.path.join(rdir, "filter_scores.png"))
    fig.savefig(figures[-1], dpi=110)
    plt.close(fig)

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.2))
    fid = metrics["light_fid"]
    names = ["full", "naive_composite", "content_only", "stage2_only"]
    axes[0].bar(range(len(names)), [fid[n] for n in names])
    axes[0].set_xticks(range(len(names)))
    axes[0].set_xticklabels(names, rotation=20, fontsize=7)
    axes[0].set_title("light distribution distance (lower is better)")
    rates = metrics["harness"]
    kinds = ["content_rate", "light_rate", "total_rate"]
    x = np.arange(len(kinds))
    axes[1].bar(x - 0.18, [rates["filtered"][k] for k in kinds], width=0.36,
                label="filtered")
    axes[1].bar(x + 0.18, [rates["unfiltered"][k] for k in kinds], width=0.36,
                label="unfiltered")
    axes[1].set_xticks(x)
    axes[1].set_xticklabels(kinds, fontsize=7)
    axes[1].set_title("decoupling success rates")
    axes[1].legend(fontsize=7)
    fig.tight_layout()
    figures.append(os.path.join(rdir, "metrics.png"))
    fig.savefig(figures[-1], dpi=110)
    plt.close(fig)

    d = metrics["decoupling"]
    t = metrics["transfer"]
    lines = [
        "# Run report",
        "",
        "## Decoupling (held-out pairs)",
        "",
        f"- removal PSNR: {d['removal_psnr_model']:.2f} dB vs input "
        f"{d['removal_psnr_input']:.2f} dB "
        f"(margin {d['removal_margin_db']:.2f} dB)",
        f"- extraction dark-region mean: {d['extraction_dark_mean']:.4f}",
        f"- extraction correlation: {d['extraction_correlation']:.4f}",
        f"- extraction output mean on unlit scenes: "
        f"{d['extraction_unlit_mean']:.4f}",
        "",
        "## Triplet filtering",
        "",
        "| population | content | light | total | n |",
        "| --- | --- | --- | --- | --- |",
    ]
    for name in ("filtered", "unfiltered"):
        r = metrics["harness"][name]
        lines.append(f"| {name} | {r['content_rate']:.4f} | "
                     f"{r['light_rate']:.4f} | {r['total_rate']:.4f} | "
                     f"{r['count']} |")
    ordering = (fid["full"] < fid["naive_composite"] < fid["content_only"])
    lines += [
        "",
        "## Transfer",
        "",
        f"- PSNR to reference: model {t['psnr_model']:.2f} dB, "
        f"naive composite {t['psnr_naive']:.2f} dB",
        "- light distribution distance: " + ", ".join(
            f"{n}={fid[n]:.3f}" for n in names),
        f"- ordering full < naive < content-only: {ordering}",
        f"- ordering full < stage2-only: "
        f"{fid['full'] < fid['stage2_only']}",
        "",
        "![losses](losses.png)",
        "![filter scores](filter_scores.png)",
        "![metrics](metrics.png)",
        "",
    ]
    rpath = os.path.join(rdir, "report.md")
    with open(rpath, "w") as f:
        f.write("\n".join(lines))
    log(f"report written to {rpath}")
    return [rpath] + figures


# ---------------------------------------------------------------------------
# argument parsing


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-decouple": cmd_train_decouple,
    "build-triplets": cmd_build_triplets,
    "train-transfer": cmd_train_transfer,
    "infer": cmd_infer,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relume",
        description="light-effect decoupling and transfer pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True,
                       help="path to the INI run config")
        p.add_argument("--set", action="append", default=[],
                       dest="overrides", metavar="SECTION.KEY=VALUE",
                       help="override one config value")
        if name == "infer":
            p.add_argument("--content", required=True)
            p.add_argument("--light", required=True)
            p.add_argument("--mask", default=None)
            p.add_argument("--dx", type=int, default=0)
            p.add_argument("--dy", type=int, default=0)
            p.add_argument("--hflip", action="store_true")
            p.add_argument("--vflip", action="store_true")
            p.add_argument("--turns", type=int, default=0)
            p.add_argument("--intensity", type=float, default=1.0)
            p.add_argument("--steps", type=int, default=None)
            p.add_argument("--seed", type=int, default=0)
            p.add_argument("--out", required=True)
    return parser


def _load(args):
    overrides = {}
    for item in args.overrides:
        if "=" not in item:
            raise ConfigError(
                f"bad --set {item!r}; expected section.key=value")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    return load_config(args.config, overrides or None)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _load(args)
        with _locked(cfg.run.out_root):
            artifacts = COMMANDS[args.command](cfg, args,
                                               _logger(args.command))
            _write_manifest(cfg, args.command, artifacts)
        return 0
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except PrereqError as e:
        print(f"missing prerequisite: {e}", file=sys.stderr)
        return 3
    except Exception as e:
        print(f"error: {e.__class__.__name__}: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
