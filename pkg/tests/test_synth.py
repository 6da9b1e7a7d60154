import json
import os

import numpy as np
import pytest

from relume.raster import RasterError, load_png, load_mask_png
from relume.synth import (
    KINDS,
    LightKind,
    LightSpec,
    SceneSpec,
    DARK_LEVEL,
    MIN_DARK_FRACTION,
    gen_content_scene,
    gen_light_material,
    gen_corpus,
    draw_scene_spec,
    draw_light_spec,
    scene_spec_from_dict,
    light_spec_from_dict,
)


class TestSpecs:
    def test_scene_spec_bounds(self):
        with pytest.raises(RasterError):
            SceneSpec(seed=1, num_objects=0)
        with pytest.raises(RasterError):
            SceneSpec(seed=1, num_objects=6)
        with pytest.raises(RasterError):
            SceneSpec(seed=-1)

    def test_light_spec_bounds(self):
        with pytest.raises(RasterError):
            LightSpec(seed=1, kind=LightKind.glow, scale=0.0)
        with pytest.raises(RasterError):
            LightSpec(seed=1, kind=LightKind.glow, hue=1.0)
        with pytest.raises(RasterError):
            LightSpec(seed=1, kind=LightKind.glow, position=(1.2, 0.5))

    def test_six_kinds(self):
        assert len(KINDS) == 6
        assert {k.value for k in KINDS} == {
            "lens_flare", "beam", "glow", "streak", "bokeh", "rainbow_arc"}


class TestScenes:
    def test_deterministic(self):
        spec = SceneSpec(seed=42, num_objects=4)
        a, ma = gen_content_scene(spec)
        b, mb = gen_content_scene(spec)
        assert np.array_equal(a, b) and np.array_equal(ma, mb)

    def test_mask_is_binary_and_backed_by_objects(self):
        img, mask = gen_content_scene(SceneSpec(seed=5, num_objects=3))
        assert set(np.unique(mask)) <= {0.0, 1.0}
        assert mask.shape == img.shape[:2]
        assert mask.sum() > 0  # objects actually rendered

    def test_range_and_dtype(self):
        img, _ = gen_content_scene(SceneSpec(seed=6))
        assert img.dtype == np.float32
        assert img.min() >= 0.0 and img.max() <= 0.85 + 1e-6

    def test_different_seeds_differ(self):
        a, _ = gen_content_scene(SceneSpec(seed=1))
        b, _ = gen_content_scene(SceneSpec(seed=2))
        assert np.abs(a - b).max() > 0.01


class TestLights:
    def test_deterministic(self):
        spec = LightSpec(seed=99, kind=LightKind.lens_flare,
                         position=(0.4, 0.6), scale=1.1, hue=0.3)
        assert np.array_equal(gen_light_material(spec), gen_light_material(spec))

    @pytest.mark.parametrize("kind", list(KINDS))
    def test_dark_background_per_kind(self, kind):
        for i in range(12):
            spec = draw_light_spec(100 + i, i)
            spec = LightSpec(seed=spec.seed, kind=kind, position=spec.position,
                             scale=spec.scale, hue=spec.hue)
            img = gen_light_material(spec)
            dark = (img.max(axis=2) < DARK_LEVEL).mean()
            assert dark >= MIN_DARK_FRACTION, (kind, i, dark)
            # exact zeros outside the footprint, not merely dim pixels
            assert ((img == 0).all(axis=2)).mean() > 0.3, (kind, i)
            assert img.min() >= 0.0 and img.max() <= 1.0

    def test_peak_brightness(self):
        for i in range(30):
            img = gen_light_material(draw_light_spec(55, i))
            assert img.max() >= 0.5, i

    def test_dark_scan_over_population(self):
        # broad invariant sweep across randomly drawn specs
        for i in range(1000):
            img = gen_light_material(draw_light_spec(2024, i))
            assert (img.max(axis=2) < DARK_LEVEL).mean() >= MIN_DARK_FRACTION, i

    def test_seed_sensitivity(self):
        # different master seeds move at least 1% of pixels by > 1/255
        for i in range(100):
            a = gen_light_material(draw_light_spec(11, i))
            b = gen_light_material(draw_light_spec(13, i))
            frac = (np.abs(a - b).max(axis=2) > 1.0 / 255).mean()
            assert frac >= 0.01, (i, frac)


class TestCorpus:
    def test_layout_and_regeneration(self, tmp_path):
        root = str(tmp_path / "corpus")
        manifest = gen_corpus(root, n_scenes=6, n_lights=5, seed=77)
        assert len(manifest["scenes"]) == 6 and len(manifest["lights"]) == 5
        with open(os.path.join(root, "manifest.json")) as f:
            stored = json.load(f)
        for rec in stored["scenes"]:
            img, mask = gen_content_scene(scene_spec_from_dict(rec))
            disk = load_png(os.path.join(root, "scenes", rec["id"] + ".png"))
            assert np.abs(disk - img).max() <= 1.0 / 65535 + 1e-9
            dmask = load_mask_png(os.path.join(root, "masks", rec["id"] + ".png"))
            assert np.array_equal(dmask, mask)
        for rec in stored["lights"]:
            img = gen_light_material(light_spec_from_dict(rec))
            disk = load_png(os.path.join(root, "lights", rec["id"] + ".png"))
            assert np.abs(disk - img).max() <= 1.0 / 65535 + 1e-9

    def test_rejects_empty(self, tmp_path):
        with pytest.raises(RasterError):
            gen_corpus(str(tmp_path), n_scenes=0, n_lights=1, seed=1)
