"""Acceptance suite: one test per shipped guarantee.

p01-p07 are self-contained property and equivalence checks over the
core operators. p08-p11 read the committed reference run under
runs/desk and hold it to the quality bars stated in the README. p12
replays the pipeline against the committed manifests (micro scale end
to end, reference scale for data generation and single-image
inference). s1 and s2 hold the browser studio to the service and CLI
contracts.

Every tolerance is pinned next to its assertion. A failure here means
the shipped artifacts no longer back the documented claims; none of
these tests skip when artifacts are missing.
"""

import base64
import json
import os
import shutil
import subprocess

import numpy as np
import pytest
import torch

from relume.cli import main as cli_main
from relume.decouple import PairSource  # noqa: F401  (import guards the API)
from relume.diffusion import (
    AdaptedDenoiser,
    ControlBranch,
    Denoiser,
    DenoiserSpec,
    LowRankAdapter,
    control_forward,
    file_sha256,
    make_schedule,
    q_sample,
    training_loss,
)
from relume.embedder import train_embedder
from relume.metrics import GaussianStats, frechet_distance, light_fid
from relume.raster import (
    LightTransform,
    SynthesisParams,
    apply_transform,
    composite,
    from_png_bytes,
    load_png,
)
from relume.service import create_app
from relume.transfer import naive_composite
from relume.triplets import FilterDecision, filter_check

from conftest import MICRO, write_micro_config

REPO = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
DESK_INI = os.path.join(REPO, "runs", "desk.ini")
DESK = os.path.join(REPO, "runs", "desk")
FRONTEND = os.path.join(REPO, "frontend")


def _rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


def _metrics():
    with open(os.path.join(DESK, "eval", "metrics.json")) as f:
        return json.load(f)


# ---------------------------------------------------------------------------
# p01-p03: exact algebra of the raster operators


def test_p01_composite_is_clamped_affine_blend():
    """1000 random (I, L, a, b): composite == clamp(aI + bL) within 1e-6,
    computed against a float64 oracle; a=1, b=0 returns I bit-exactly."""
    rng = _rng(101)
    worst = 0.0
    for _ in range(1000):
        h, w = int(rng.integers(8, 24)), int(rng.integers(8, 24))
        img = rng.uniform(0, 1, (h, w, 3)).astype(np.float32)
        light = rng.uniform(0, 1, (h, w, 3)).astype(np.float32)
        a, b = float(rng.uniform(0, 1)), float(rng.uniform(0, 1))
        got = composite(img, light, SynthesisParams(a, b))
        want = np.clip(a * img.astype(np.float64)
                       + b * light.astype(np.float64), 0.0, 1.0)
        assert got.dtype == np.float32
        worst = max(worst, float(np.abs(got - want).max()))
    assert worst <= 1e-6, f"worst deviation {worst:.3e}"

    img = _rng(7).uniform(0, 1, (16, 16, 3)).astype(np.float32)
    light = _rng(8).uniform(0, 1, (16, 16, 3)).astype(np.float32)
    ident = composite(img, light, SynthesisParams(1.0, 0.0))
    assert ident.tobytes() == img.tobytes()


def test_p02_filter_rule_truth_table():
    """Exhaustive grid over both cosine scores at gamma=0.98: keep iff
    cos_beta > cos_alpha and cos_alpha < gamma, ties rejected."""
    gamma = 0.98
    values = [0.0, 0.5, 0.97, 0.979, 0.98, 0.981, 0.99, 1.0]
    for ca in values:
        for cb in values:
            want = (cb > ca) and (ca < gamma)
            assert filter_check(ca, cb, gamma) == want, (ca, cb)
            assert FilterDecision.evaluate(ca, cb, gamma).passed == want
    # the two disputable ties, spelled out
    assert not filter_check(0.98, 0.99, gamma)   # cos_alpha == gamma
    assert not filter_check(0.5, 0.5, gamma)     # cos_beta == cos_alpha


def test_p03_transform_group_laws():
    """Flip involutions, the four-turn cycle, translation inverses on
    the surviving region, and intensity zero. All comparisons exact."""
    light = _rng(33).uniform(0, 1, (12, 16, 3)).astype(np.float32)

    def apply2(t):
        return apply_transform(apply_transform(light, t), t)

    assert np.array_equal(apply2(LightTransform(hflip=True)), light)
    assert np.array_equal(apply2(LightTransform(vflip=True)), light)

    turned = light
    for _ in range(4):
        turned = apply_transform(turned, LightTransform(quarter_turns=1))
    assert np.array_equal(turned, light)

    dx, dy = 3, 2
    fwd = apply_transform(light, LightTransform(dx=dx, dy=dy))
    back = apply_transform(fwd, LightTransform(dx=-dx, dy=-dy))
    h, w = light.shape[:2]
    assert np.array_equal(back[:h - dy, :w - dx], light[:h - dy, :w - dx])
    assert not back[h - dy:, :].any() and not back[:, w - dx:].any()

    assert not apply_transform(light, LightTransform(intensity=0.0)).any()


# ---------------------------------------------------------------------------
# p04-p06: diffusion-side identities


def test_p04_forward_noising_moments():
    """Monte Carlo mean and variance of the forward process on a
    constant input match sqrt(abar_t)*c and 1 - abar_t within 5%
    relative at 10^4 draws, for five timesteps across the schedule."""
    sched = make_schedule(1000)
    c = 0.6
    gen = torch.Generator().manual_seed(42)
    # the largest t keeps sqrt(abar)*c ~ 0.1, so the 5% band still sits
    # several estimator standard errors wide at this draw count
    for t in (0, 149, 299, 449, 599):
        # one draw = one full q_sample output raster
        x0 = torch.full((10_000, 3, 8, 8), c, dtype=torch.float64)
        eps = torch.randn(x0.shape, generator=gen, dtype=torch.float64)
        x_t = q_sample(x0, t, eps, sched)
        bar = sched.alpha_bars[t]
        want_mean = np.sqrt(bar) * c
        want_var = 1.0 - bar
        got_mean = float(x_t.mean())
        got_var = float(x_t.var(unbiased=True))
        assert abs(got_mean - want_mean) <= 0.05 * abs(want_mean), t
        assert abs(got_var - want_var) <= 0.05 * want_var, t


def _tiny_spec(vocab=0):
    return DenoiserSpec(input_channels=6, base_width=8, depth=1,
                        class_vocab=vocab)


def _perturb(module, seed, scale=0.05):
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.randn(p.shape, generator=gen,
                                dtype=p.dtype) * scale)


def _grad_check(loss_fn, named_params, n_coords=2, h=1e-4, rtol=1e-3):
    params = [p for _, p in named_params]
    grads = torch.autograd.grad(loss_fn(), params)
    for (name, p), g in zip(named_params, grads):
        flat = g.reshape(-1)
        coords = {int(flat.abs().argmax()), 0}
        for lin in list(coords)[:n_coords]:
            idx = np.unravel_index(lin, p.shape)
            with torch.no_grad():
                orig = p[idx].item()
                p[idx] = orig + h
                up = loss_fn().item()
                p[idx] = orig - h
                down = loss_fn().item()
                p[idx] = orig
            fd = (up - down) / (2.0 * h)
            an = float(g[idx])
            err = abs(an - fd) / max(abs(an), abs(fd), 1e-8)
            assert err <= rtol, f"{name}{idx}: autograd {an:.3e} fd {fd:.3e}"


def test_p05_training_gradients_match_finite_differences():
    """Central finite differences in float64 confirm the training-loss
    gradients of adapter factors and control-branch weights to a
    relative error of 1e-3."""
    sched = make_schedule(50)
    rng = _rng(55)
    x0 = torch.from_numpy(rng.uniform(0, 1, (2, 3, 8, 8)))
    cond3 = torch.from_numpy(rng.uniform(0, 1, (2, 3, 8, 8)))
    cond6 = torch.from_numpy(rng.uniform(0, 1, (2, 6, 8, 8)))

    torch.manual_seed(5)
    base = Denoiser(_tiny_spec()).double()
    adapter = LowRankAdapter(base, rank=2)
    _perturb(adapter, seed=9)
    adapted = AdaptedDenoiser(base, adapter)

    def adapter_loss():
        gen = torch.Generator().manual_seed(7)
        return training_loss(adapted, x0, cond3, None, sched, gen)

    picks = [(k, p) for k, p in adapter.named_parameters()][:4]
    _grad_check(adapter_loss, picks)

    torch.manual_seed(6)
    base2 = Denoiser(_tiny_spec()).double()
    branch = ControlBranch(base2, control_channels=3).double()
    _perturb(branch, seed=11)

    class Controlled(torch.nn.Module):
        def __init__(self):
            super().__init__()
            self.base, self.branch = base2, branch

        def forward(self, x_t, t, cond, class_id=None):
            return control_forward(self.base, self.branch, x_t, t,
                                   cond[:, :3], cond[:, 3:], class_id)

    controlled = Controlled()

    def control_loss():
        gen = torch.Generator().manual_seed(13)
        return training_loss(controlled, x0, cond6, None, sched, gen)

    named = dict(branch.named_parameters())
    picks = [(k, named[k]) for k in sorted(named)
             if k.endswith("weight")][:3]
    _grad_check(control_loss, picks)


def test_p06_fresh_adapter_and_zero_control_are_bit_exact():
    """A freshly built adapter (zero down factors) and a fresh control
    branch (zero projections) leave the forward pass bit-identical."""
    torch.manual_seed(60)
    base = Denoiser(_tiny_spec())
    x_t = torch.randn(2, 3, 8, 8)
    t = torch.tensor([3, 17])
    cond = torch.rand(2, 3, 8, 8) * 2.0 - 1.0
    with torch.no_grad():
        ref = base(x_t, t, cond, None)

        adapted = AdaptedDenoiser(base, LowRankAdapter(base, rank=4))
        via_adapter = adapted(x_t, t, cond, None)
        assert via_adapter.numpy().tobytes() == ref.numpy().tobytes()

        branch = ControlBranch(base, control_channels=3)
        ctl = torch.rand(2, 3, 8, 8) * 2.0 - 1.0
        via_branch = control_forward(base, branch, x_t, t, cond, ctl, None)
        assert via_branch.numpy().tobytes() == ref.numpy().tobytes()


# ---------------------------------------------------------------------------
# p07: distribution distance


def test_p07_frechet_identity_covariance_and_identical_sets():
    """With both covariances the identity, the distance reduces to
    ||mu1 - mu2||^2 (checked to 1e-8); identical image sets score below
    1e-6 through the full embedding path."""
    rng = _rng(77)
    mu1 = rng.normal(size=8)
    mu2 = rng.normal(size=8)
    s1 = GaussianStats(mean=mu1, cov=np.eye(8))
    s2 = GaussianStats(mean=mu2, cov=np.eye(8))
    want = float(((mu1 - mu2) ** 2).sum())
    assert abs(frechet_distance(s1, s2) - want) <= 1e-8

    images = [rng.uniform(0, 1, (16, 16, 3)).astype(np.float32)
              for _ in range(20)]
    emb = train_embedder(images, embedding_dim=8, iterations=5,
                         batch_size=8, min_corpus=10)
    assert light_fid(emb, images, images) < 1e-6


# ---------------------------------------------------------------------------
# p08-p11: quality bars of the committed reference run


def test_p08_reference_decoupling_quality():
    """The committed reference run clears the decoupling bars: removal
    3 dB above its input, extraction dark-region mean below 0.05 and
    correlation above 0.7, with both trainings done inside 60 minutes."""
    m = _metrics()["decoupling"]
    assert m["removal_margin_db"] >= 3.0, m
    assert m["extraction_dark_mean"] < 0.05, m
    assert m["extraction_correlation"] > 0.7, m

    with open(os.path.join(DESK, "eval", "timings.json")) as f:
        t = json.load(f)
    spent = t["removal"] + t["extraction"]
    assert spent <= 3600.0, f"decoupling trainings took {spent:.0f}s"


def test_p09_filtering_improves_success_rates():
    """Filtered triplets outscore the unfiltered population on content,
    light, and total success rates."""
    h = _metrics()["harness"]
    for key in ("content_rate", "light_rate", "total_rate"):
        assert h["filtered"][key] >= h["unfiltered"][key], key


def test_p10_light_distribution_orderings():
    """Full transfer beats naive addition beats content-only on the
    light distribution distance, and beats the no-adapter ablation.
    Strict orderings; absolute values unconstrained."""
    fid = _metrics()["light_fid"]
    assert fid["full"] < fid["naive_composite"] < fid["content_only"], fid
    assert fid["full"] < fid["stage2_only"], fid


def test_p11_transfer_beats_naive_baseline():
    """On held-out triplets the model's PSNR to the reference lit image
    strictly exceeds the naive content+light composite's."""
    t = _metrics()["transfer"]
    assert t["psnr_model"] > t["psnr_naive"], t


# ---------------------------------------------------------------------------
# p12: replay determinism


def _manifest(root, command):
    with open(os.path.join(root, "manifests", command + ".json")) as f:
        return json.load(f)


def _read_bytes(path):
    with open(path, "rb") as f:
        return f.read()


PIPELINE = ("gen-data", "train-decouple", "build-triplets",
            "train-transfer", "evaluate", "report")


def test_p12_pipeline_replay_reproduces_hashes(micro_run, tmp_path):
    """Replay determinism, three ways: a second full micro-scale run
    reproduces every artifact hash, metric, and report byte; reference
    data generation reproduces the committed corpus hashes; a pinned
    single-image inference reproduces the committed output hash."""
    # full pipeline, micro scale, run twice
    rerun_root = str(tmp_path / "rerun")
    os.makedirs(rerun_root)
    ini = write_micro_config(rerun_root, MICRO)
    for cmd in PIPELINE:
        assert cli_main([cmd, "--config", ini]) == 0, cmd
    a_out, b_out = micro_run["out"], os.path.join(rerun_root, "out")
    for cmd in PIPELINE:
        assert (_manifest(a_out, cmd)["artifacts"]
                == _manifest(b_out, cmd)["artifacts"]), cmd
    for rel in ("eval/metrics.json", "eval/report/report.md",
                "eval/report/losses.png", "eval/report/filter_scores.png",
                "eval/report/metrics.png"):
        assert (_read_bytes(os.path.join(a_out, rel))
                == _read_bytes(os.path.join(b_out, rel))), rel

    # reference-scale data generation against the committed manifest
    gen_root = str(tmp_path / "gen")
    assert cli_main(["gen-data", "--config", DESK_INI,
                     "--set", f"run.out_root={gen_root}"]) == 0
    assert (_manifest(gen_root, "gen-data")["artifacts"]
            == _manifest(DESK, "gen-data")["artifacts"])

    # pinned single-image inference against the committed manifest
    with open(os.path.join(DESK, "replay", "args.json")) as f:
        pin = json.load(f)
    inf_root = str(tmp_path / "infer")
    os.makedirs(os.path.join(inf_root, "replay"))
    os.symlink(os.path.join(DESK, "bundle"),
               os.path.join(inf_root, "bundle"))
    out_png = os.path.join(inf_root, "replay", "transfer.png")
    argv = ["infer", "--config", DESK_INI,
            "--set", f"run.out_root={inf_root}",
            "--content", os.path.join(DESK, "replay", pin["content"]),
            "--light", os.path.join(DESK, "replay", pin["light"]),
            "--dx", str(pin["dx"]), "--dy", str(pin["dy"]),
            "--turns", str(pin["turns"]),
            "--intensity", str(pin["intensity"]),
            "--steps", str(pin["steps"]), "--seed", str(pin["seed"]),
            "--out", out_png]
    if pin["hflip"]:
        argv.insert(argv.index("--turns"), "--hflip")
    if pin["vflip"]:
        argv.insert(argv.index("--turns"), "--vflip")
    assert cli_main(argv) == 0
    committed = _manifest(DESK, "infer")["artifacts"]["replay/transfer.png"]
    assert file_sha256(out_png) == committed
    assert np.array_equal(
        load_png(out_png),
        load_png(os.path.join(DESK, "replay", "transfer.png")))


# ---------------------------------------------------------------------------
# s1-s2: browser studio contracts


def _sidecar_infer_args(sidecar, config, content, light, out):
    """Mirror of sidecarInferArgs in frontend/src/wire.ts; the frontend
    test suite pins the exact vector, this keeps the two in lockstep."""
    t = sidecar["transform"]
    argv = ["infer", "--config", config, "--content", content,
            "--light", light, "--dx", str(t["dx"]), "--dy", str(t["dy"])]
    if t["hflip"]:
        argv.append("--hflip")
    if t["vflip"]:
        argv.append("--vflip")
    argv += ["--turns", str(t["quarter_turns"]),
             "--intensity", str(t["intensity"]),
             "--steps", str(sidecar["n_steps"]),
             "--seed", str(sidecar["seed"]), "--out", out]
    return argv


def test_s1_ui_export_replays_pixel_identically(tmp_path):
    """A session exported from the studio (original upload bytes, the
    light exactly as served, the wire transform) replayed through the
    CLI yields the same decoded pixels as the service response."""
    from fastapi.testclient import TestClient

    client = TestClient(create_app(os.path.join(DESK, "bundle")))
    content_bytes = _read_bytes(os.path.join(DESK, "replay", "content.png"))
    light_bytes = _read_bytes(os.path.join(DESK, "replay", "light.png"))
    transform = {"dx": 7, "dy": -2, "hflip": True, "vflip": False,
                 "quarter_turns": 2, "intensity": 1.25}
    resp = client.post("/transfer", json={
        "content": base64.b64encode(content_bytes).decode(),
        "light": base64.b64encode(light_bytes).decode(),
        "seed": 99, "n_steps": 12, **transform})
    assert resp.status_code == 200, resp.text
    body = resp.json()
    assert body["transform"] == transform
    assert body["seed"] == 99 and body["n_steps"] == 12

    sidecar = {  # what exportSession writes, minus the result copy
        "version": 1,
        "content_png": base64.b64encode(content_bytes).decode(),
        "light_png": base64.b64encode(light_bytes).decode(),
        "transform": transform, "seed": 99, "n_steps": 12,
    }
    c_path = str(tmp_path / "content.png")
    l_path = str(tmp_path / "light.png")
    for path, b64 in ((c_path, sidecar["content_png"]),
                      (l_path, sidecar["light_png"])):
        with open(path, "wb") as f:
            f.write(base64.b64decode(b64))
    root = str(tmp_path / "run")
    os.makedirs(root)
    os.symlink(os.path.join(DESK, "bundle"), os.path.join(root, "bundle"))
    out = str(tmp_path / "replayed.png")
    argv = _sidecar_infer_args(sidecar, DESK_INI, c_path, l_path, out)
    argv[2:2] = ["--set", f"run.out_root={root}"]
    assert cli_main(argv) == 0

    from_service = from_png_bytes(base64.b64decode(body["result"]))
    assert np.array_equal(load_png(out), from_service)


def _u16_b64(img):
    u16 = np.round(img.astype(np.float64) * 65535.0).astype("<u2")
    return base64.b64encode(u16.tobytes()).decode()


def test_s2_overlay_preview_matches_service_composite(tmp_path):
    """The studio's client-side preview (the compiled overlay module,
    run under node) stays within 1/255 per channel of the server's
    naive composite on 20 random sessions."""
    harness = os.path.join(FRONTEND, "scripts", "overlay-harness.mjs")
    dist = os.path.join(FRONTEND, "dist-lib", "overlay.js")
    assert os.path.isfile(dist), \
        "frontend/dist-lib missing; run `npm run build:lib` in frontend/"
    node = shutil.which("node")
    assert node, "node is required for the overlay fidelity check"

    rng = _rng(2020)
    sizes = [(64, 64), (48, 64), (33, 47), (64, 64)]
    sessions, expected = [], []
    for i in range(20):
        h, w = sizes[i % len(sizes)]
        content = np.round(rng.uniform(0, 1, (h, w, 3)) * 65535) / 65535
        light = np.round(rng.uniform(0, 1, (h, w, 3)) * 65535) / 65535
        content = content.astype(np.float32)
        light = light.astype(np.float32)
        turns = int(rng.integers(0, 4))
        if h != w and turns % 2:
            turns = (turns + 1) % 4  # odd turns only make sense on squares
        t = {"dx": int(rng.integers(-(w - 1), w)),
             "dy": int(rng.integers(-(h - 1), h)),
             "hflip": bool(rng.integers(0, 2)),
             "vflip": bool(rng.integers(0, 2)),
             "quarter_turns": turns,
             "intensity": float(np.round(rng.uniform(0, 2), 2))}
        sessions.append({"width": w, "height": h,
                         "content_u16": _u16_b64(content),
                         "light_u16": _u16_b64(light), "transform": t})
        expected.append(naive_composite(
            content, light,
            LightTransform(dx=t["dx"], dy=t["dy"], hflip=t["hflip"],
                           vflip=t["vflip"], quarter_turns=t["quarter_turns"],
                           intensity=t["intensity"])))

    fin = str(tmp_path / "fixture.json")
    fout = str(tmp_path / "results.json")
    with open(fin, "w") as f:
        json.dump({"sessions": sessions}, f)
    subprocess.run([node, harness, fin, fout], check=True, timeout=120)
    with open(fout) as f:
        results = json.load(f)["results"]

    bound = 1.0 / 255.0
    worst = 0.0
    for want, b64 in zip(expected, results):
        got = np.frombuffer(base64.b64decode(b64), dtype="<u2")
        got = got.reshape(want.shape).astype(np.float64) / 65535.0
        worst = max(worst, float(np.abs(got - want.astype(np.float64)).max()))
    assert worst <= bound, f"max client/server deviation {worst:.3e}"
