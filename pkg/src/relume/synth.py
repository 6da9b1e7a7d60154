"""Procedural desk-scale corpus: content scenes with known foreground
masks, and light-material images with analytic ground truth.

Every generator is a pure function of its spec; identical specs produce
bit-identical rasters, and a corpus regenerates exactly from its
manifest.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, asdict
from enum import Enum

import numpy as np

from .raster import save_png, save_mask_png, RasterError

CORPUS_VERSION = "1"

DEFAULT_PALETTE = (
    (0.55, 0.35, 0.30),
    (0.30, 0.45, 0.55),
    (0.40, 0.50, 0.30),
    (0.50, 0.40, 0.55),
    (0.60, 0.55, 0.35),
    (0.25, 0.35, 0.45),
    (0.55, 0.45, 0.45),
    (0.35, 0.30, 0.50),
)

# max-channel value below which a pixel counts as dark background
DARK_LEVEL = 0.02
# required dark-background fraction for every light material
MIN_DARK_FRACTION = 0.6


class LightKind(str, Enum):
    lens_flare = "lens_flare"
    beam = "beam"
    glow = "glow"
    streak = "streak"
    bokeh = "bokeh"
    rainbow_arc = "rainbow_arc"


KINDS = tuple(LightKind)
KIND_INDEX = {k: i for i, k in enumerate(KINDS)}


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    resolution: int = 64
    num_objects: int = 3
    palette: tuple = DEFAULT_PALETTE

    def __post_init__(self):
        if not (0 <= self.seed < 2 ** 64):
            raise RasterError(f"seed must be a 64-bit unsigned int, got {self.seed}")
        if not (1 <= self.num_objects <= 5):
            raise RasterError(f"num_objects must be in [1, 5], got {self.num_objects}")
        if self.resolution < 8:
            raise RasterError(f"resolution must be >= 8, got {self.resolution}")


@dataclass(frozen=True)
class LightSpec:
    seed: int
    kind: LightKind
    position: tuple = (0.5, 0.5)
    scale: float = 1.0
    hue: float = 0.0
    resolution: int = 64

    def __post_init__(self):
        if not (0 <= self.seed < 2 ** 64):
            raise RasterError(f"seed must be a 64-bit unsigned int, got {self.seed}")
        if self.scale <= 0:
            raise RasterError(f"scale must be > 0, got {self.scale}")
        if not (0.0 <= self.hue < 1.0):
            raise RasterError(f"hue must be in [0, 1), got {self.hue}")
        px, py = self.position
        if not (0.0 <= px <= 1.0 and 0.0 <= py <= 1.0):
            raise RasterError(f"position must lie in [0,1]^2, got {self.position}")


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _hsv_to_rgb(h: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Vectorized HSV -> RGB, all inputs broadcastable arrays in [0,1]."""
    h = np.asarray(h, np.float64) % 1.0
    s = np.asarray(s, np.float64)
    v = np.asarray(v, np.float64)
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6
    out = np.choose(i[..., None], [
        np.stack([v, t, p], -1), np.stack([q, v, p], -1),
        np.stack([p, v, t], -1), np.stack([p, q, v], -1),
        np.stack([t, p, v], -1), np.stack([v, p, q], -1),
    ])
    return out


# ---------------------------------------------------------------------------
# content scenes


def _grid(res: int):
    ys, xs = np.mgrid[0:res, 0:res].astype(np.float64)
    return (ys + 0.5) / res, (xs + 0.5) / res


def _pick_color(rng, palette, lo=0.10, hi=0.85):
    base = np.array(palette[rng.integers(len(palette))], np.float64)
    c = base + rng.uniform(-0.08, 0.08, 3)
    return np.clip(c, lo, hi)


def _object_footprint(rng, ys, xs):
    """Random shape footprint as a boolean (H, W) array."""
    kind = rng.integers(3)
    cy, cx = rng.uniform(0.15, 0.85, 2)
    if kind == 0:  # circle
        r = rng.uniform(0.08, 0.22)
        return (ys - cy) ** 2 + (xs - cx) ** 2 <= r * r
    if kind == 1:  # rotated rectangle
        ang = rng.uniform(0, np.pi)
        a, b = rng.uniform(0.07, 0.24, 2)
        u = (xs - cx) * np.cos(ang) + (ys - cy) * np.sin(ang)
        v = -(xs - cx) * np.sin(ang) + (ys - cy) * np.cos(ang)
        return (np.abs(u) <= a) & (np.abs(v) <= b)
    # triangle
    pts = np.stack([rng.uniform(-0.25, 0.25, 3) + cx,
                    rng.uniform(-0.25, 0.25, 3) + cy], axis=1)
    inside = np.ones_like(ys, dtype=bool)
    for i in range(3):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % 3]
        x2, y2 = pts[(i + 2) % 3]
        side = (x1 - x0) * (ys - y0) - (y1 - y0) * (xs - x0)
        ref = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        inside &= side * ref >= 0
    return inside


def _object_fill(rng, footprint, ys, xs, palette):
    style = rng.integers(3)
    c1 = _pick_color(rng, palette)
    h, w = footprint.shape
    fill = np.zeros((h, w, 3), np.float64)
    if style == 0:  # flat
        fill[:] = c1
    elif style == 1:  # linear gradient between two palette colors
        c2 = _pick_color(rng, palette)
        ang = rng.uniform(0, 2 * np.pi)
        t = (xs * np.cos(ang) + ys * np.sin(ang))
        t = (t - t.min()) / max(t.max() - t.min(), 1e-9)
        fill = c1[None, None] * (1 - t[..., None]) + c2[None, None] * t[..., None]
    else:  # stripes
        c2 = _pick_color(rng, palette)
        ang = rng.uniform(0, np.pi)
        freq = rng.uniform(6, 18)
        t = np.sin((xs * np.cos(ang) + ys * np.sin(ang)) * freq * 2 * np.pi) > 0
        fill = np.where(t[..., None], c1[None, None], c2[None, None])
    return fill


def gen_content_scene(spec: SceneSpec):
    """Render a light-free scene and its binary foreground mask.

    Returns (image, mask): a (res, res, 3) float32 raster of smooth
    gradients plus 1..5 simple shapes, and the union footprint mask.
    """
    rng = _rng(spec.seed)
    res = spec.resolution
    ys, xs = _grid(res)

    # background: bilinear blend of four jittered palette corner colors
    corners = [np.clip(_pick_color(rng, spec.palette), 0.12, 0.72) for _ in range(4)]
    img = (corners[0] * ((1 - ys) * (1 - xs))[..., None]
           + corners[1] * ((1 - ys) * xs)[..., None]
           + corners[2] * (ys * (1 - xs))[..., None]
           + corners[3] * (ys * xs)[..., None])
    # gentle radial shading
    cy, cx = rng.uniform(0.3, 0.7, 2)
    r2 = (ys - cy) ** 2 + (xs - cx) ** 2
    img *= (1.0 - rng.uniform(0.05, 0.25) * r2 / r2.max())[..., None]

    mask = np.zeros((res, res), bool)
    for _ in range(spec.num_objects):
        fp = _object_footprint(rng, ys, xs)
        fill = _object_fill(rng, fp, ys, xs, spec.palette)
        img = np.where(fp[..., None], fill, img)
        mask |= fp

    img = np.clip(img, 0.0, 0.85)
    return img.astype(np.float32), mask.astype(np.float32)


# ---------------------------------------------------------------------------
# light materials


def _cutoff(intensity: np.ndarray, cut: float) -> np.ndarray:
    """Shift-and-rescale so values below ``cut`` become exactly zero while
    the profile stays continuous and the peak is preserved."""
    return np.clip(intensity - cut, 0.0, None) / max(1.0 - cut, 1e-6)


def _gauss(ys, xs, cy, cx, sigma):
    return np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2 * sigma ** 2))


def _render_glow(rng, ys, xs, pos, scale):
    sigma = rng.uniform(0.07, 0.18) * scale
    return _gauss(ys, xs, pos[1], pos[0], sigma)


def _render_beam(rng, ys, xs, pos, scale):
    ang = rng.uniform(0, np.pi)
    width = rng.uniform(0.025, 0.07) * scale
    u = (xs - pos[0]) * np.cos(ang) + (ys - pos[1]) * np.sin(ang)
    v = -(xs - pos[0]) * np.sin(ang) + (ys - pos[1]) * np.cos(ang)
    along = np.exp(-np.clip(np.abs(u) - 0.55, 0, None) ** 2 / 0.02)
    return np.exp(-v ** 2 / (2 * width ** 2)) * along


def _render_streak(rng, ys, xs, pos, scale):
    out = np.zeros_like(ys)
    for _ in range(int(rng.integers(1, 3))):
        ang = rng.uniform(0, np.pi)
        width = rng.uniform(0.008, 0.025) * scale
        half_len = rng.uniform(0.15, 0.45) * scale
        u = (xs - pos[0]) * np.cos(ang) + (ys - pos[1]) * np.sin(ang)
        v = -(xs - pos[0]) * np.sin(ang) + (ys - pos[1]) * np.cos(ang)
        taper = np.exp(-np.clip(np.abs(u) - half_len, 0, None) ** 2 / 0.005)
        out = np.maximum(out, np.exp(-v ** 2 / (2 * width ** 2)) * taper)
    return out


def _render_lens_flare(rng, ys, xs, pos, scale):
    core = _gauss(ys, xs, pos[1], pos[0], rng.uniform(0.03, 0.07) * scale)
    out = core.copy()
    # ghosts along the line through the image center
    dx, dy = 0.5 - pos[0], 0.5 - pos[1]
    for _ in range(int(rng.integers(3, 7))):
        t = rng.uniform(0.3, 1.9)
        gx, gy = pos[0] + dx * t, pos[1] + dy * t
        sig = rng.uniform(0.02, 0.06) * scale
        out = np.maximum(out, rng.uniform(0.25, 0.6) * _gauss(ys, xs, gy, gx, sig))
    # thin radial streaks through the core
    for _ in range(int(rng.integers(2, 5))):
        ang = rng.uniform(0, np.pi)
        v = -(xs - pos[0]) * np.sin(ang) + (ys - pos[1]) * np.cos(ang)
        u = (xs - pos[0]) * np.cos(ang) + (ys - pos[1]) * np.sin(ang)
        taper = np.exp(-u ** 2 / (2 * (0.22 * scale) ** 2))
        out = np.maximum(out, 0.7 * np.exp(-v ** 2 / (2 * 0.006 ** 2)) * taper)
    return out


def _render_bokeh(rng, ys, xs, pos, scale):
    out = np.zeros_like(ys)
    spread = 0.28 * scale
    for _ in range(int(rng.integers(4, 10))):
        cx = np.clip(pos[0] + rng.normal(0, spread), 0.05, 0.95)
        cy = np.clip(pos[1] + rng.normal(0, spread), 0.05, 0.95)
        r = rng.uniform(0.02, 0.055) * scale
        d = np.sqrt((ys - cy) ** 2 + (xs - cx) ** 2)
        disc = np.clip(1.0 - (d / max(r, 1e-6)) ** 4, 0.0, None)
        out = np.maximum(out, rng.uniform(0.35, 1.0) * disc)
    return out


def _render_rainbow_arc(rng, ys, xs, pos, scale):
    radius = rng.uniform(0.22, 0.42) * scale
    band = rng.uniform(0.015, 0.035) * scale
    d = np.sqrt((ys - pos[1]) ** 2 + (xs - pos[0]) ** 2)
    radial = np.exp(-(d - radius) ** 2 / (2 * band ** 2))
    theta = np.arctan2(ys - pos[1], xs - pos[0])
    th0 = rng.uniform(-np.pi, np.pi)
    extent = rng.uniform(np.pi / 3, np.pi)
    dth = np.angle(np.exp(1j * (theta - th0)))
    angular = np.exp(-np.clip(np.abs(dth) - extent / 2, 0, None) ** 2 / 0.02)
    return radial * angular


_RENDERERS = {
    LightKind.glow: _render_glow,
    LightKind.beam: _render_beam,
    LightKind.streak: _render_streak,
    LightKind.lens_flare: _render_lens_flare,
    LightKind.bokeh: _render_bokeh,
    LightKind.rainbow_arc: _render_rainbow_arc,
}


def gen_light_material(spec: LightSpec) -> np.ndarray:
    """Render an additive light image on a pure black background.

    The returned raster is non-negative, peaks near full brightness, has
    exact zeros outside the light footprint, and at least 60% of its
    pixels darker than 0.02 (max channel).
    """
    rng = _rng(spec.seed)
    res = spec.resolution
    ys, xs = _grid(res)
    kind = LightKind(spec.kind)
    intensity = _RENDERERS[kind](rng, ys, xs, spec.position, spec.scale)
    peak = rng.uniform(0.88, 1.0)
    intensity = intensity / max(intensity.max(), 1e-9) * peak

    if kind == LightKind.rainbow_arc:
        d = np.sqrt((ys - spec.position[1]) ** 2 + (xs - spec.position[0]) ** 2)
        hue = (spec.hue + (d - d.min()) / max(d.max() - d.min(), 1e-9) * 0.9) % 1.0
        sat = np.full_like(intensity, 0.85)
    else:
        hue = np.full_like(intensity, spec.hue)
        sat = np.full_like(intensity, rng.uniform(0.05, 0.55))
    color = _hsv_to_rgb(hue, sat, np.ones_like(intensity))

    cut = 0.012
    img = None
    for _ in range(10):
        shaped = _cutoff(intensity, cut)
        img = shaped[..., None] * color
        dark = (img.max(axis=2) < DARK_LEVEL).mean()
        if dark >= MIN_DARK_FRACTION:
            break
        cut = min(cut * 2.2 + 0.01, 0.9)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# corpus generation


def _scene_id(i: int) -> str:
    return f"scene_{i:05d}"


def _light_id(i: int) -> str:
    return f"light_{i:05d}"


def draw_scene_spec(master_seed: int, index: int, resolution: int = 64) -> SceneSpec:
    ss = np.random.SeedSequence([int(master_seed), 1, int(index)])
    rng = np.random.Generator(np.random.PCG64(ss))
    return SceneSpec(
        seed=int(rng.integers(0, 2 ** 63)),
        resolution=resolution,
        num_objects=int(rng.integers(1, 6)),
    )


def draw_light_spec(master_seed: int, index: int, resolution: int = 64) -> LightSpec:
    ss = np.random.SeedSequence([int(master_seed), 2, int(index)])
    rng = np.random.Generator(np.random.PCG64(ss))
    return LightSpec(
        seed=int(rng.integers(0, 2 ** 63)),
        kind=KINDS[int(rng.integers(len(KINDS)))],
        position=(float(rng.uniform(0.1, 0.9)), float(rng.uniform(0.1, 0.9))),
        scale=float(rng.uniform(0.7, 1.5)),
        hue=float(rng.uniform(0.0, 1.0)),
        resolution=resolution,
    )


def _scene_spec_dict(spec: SceneSpec) -> dict:
    d = asdict(spec)
    d["palette"] = [list(c) for c in spec.palette]
    return d


def _light_spec_dict(spec: LightSpec) -> dict:
    d = asdict(spec)
    d["kind"] = spec.kind.value
    d["position"] = list(spec.position)
    return d


def scene_spec_from_dict(d: dict) -> SceneSpec:
    return SceneSpec(seed=d["seed"], resolution=d["resolution"],
                     num_objects=d["num_objects"],
                     palette=tuple(tuple(c) for c in d["palette"]))


def light_spec_from_dict(d: dict) -> LightSpec:
    return LightSpec(seed=d["seed"], kind=LightKind(d["kind"]),
                     position=tuple(d["position"]), scale=d["scale"],
                     hue=d["hue"], resolution=d["resolution"])


def gen_corpus(root: str | os.PathLike, n_scenes: int, n_lights: int, seed: int,
               resolution: int = 64, log=None) -> dict:
    """Generate and store a corpus in the standard dataset layout.

    Writes ``scenes/<id>.png``, ``masks/<id>.png``, ``lights/<id>.png``
    and ``manifest.json`` recording every spec. Returns the manifest.
    """
    if n_scenes < 1 or n_lights < 1:
        raise RasterError("corpus sizes must be >= 1")
    root = os.fspath(root)
    scenes, lights = [], []
    for i in range(n_scenes):
        spec = draw_scene_spec(seed, i, resolution)
        img, mask = gen_content_scene(spec)
        sid = _scene_id(i)
        save_png(os.path.join(root, "scenes", sid + ".png"), img)
        save_mask_png(os.path.join(root, "masks", sid + ".png"), mask)
        scenes.append({"id": sid, **_scene_spec_dict(spec)})
        if log and (i + 1) % 1000 == 0:
            log(f"scenes {i + 1}/{n_scenes}")
    for i in range(n_lights):
        spec = draw_light_spec(seed, i, resolution)
        img = gen_light_material(spec)
        lid = _light_id(i)
        save_png(os.path.join(root, "lights", lid + ".png"), img)
        lights.append({"id": lid, **_light_spec_dict(spec)})
        if log and (i + 1) % 500 == 0:
            log(f"lights {i + 1}/{n_lights}")
    manifest = {
        "version": CORPUS_VERSION,
        "seed": int(seed),
        "resolution": int(resolution),
        "scenes": scenes,
        "lights": lights,
    }
    with open(os.path.join(root, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return manifest
