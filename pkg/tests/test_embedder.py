import numpy as np
import pytest
import torch

from relume.embedder import Embedder, EmbedderError, train_embedder, _AutoEncoder
from relume.synth import draw_scene_spec, gen_content_scene


def _corpus(n, res=16, seed=600):
    imgs = []
    for i in range(n):
        img, _ = gen_content_scene(draw_scene_spec(seed, i, resolution=res))
        imgs.append(img)
    return imgs


def _fresh(dim=16, res=16, seed=0):
    torch.manual_seed(seed)
    return Embedder(_AutoEncoder(res, dim), dim, res)


class TestEmbedder:
    def test_unit_norm(self):
        e = _fresh()
        rng = np.random.Generator(np.random.PCG64(1))
        for _ in range(10):
            img = rng.uniform(0, 1, (16, 16, 3)).astype(np.float32)
            v = e.embed(img)
            assert v.shape == (16,)
            assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-5)

    def test_nearest_neighbor_is_self(self):
        e = _fresh()
        imgs = _corpus(20)
        vecs = e.embed_many(imgs)
        sims = vecs @ vecs.T
        assert (sims.argmax(axis=1) == np.arange(20)).all()

    def test_embed_many_matches_single(self):
        e = _fresh()
        imgs = _corpus(5)
        many = e.embed_many(imgs)
        for i, im in enumerate(imgs):
            assert np.allclose(many[i], e.embed(im), atol=1e-6)

    def test_bad_dims_rejected(self):
        with pytest.raises(EmbedderError):
            _AutoEncoder(12, 16)  # not divisible by 8
        with pytest.raises(EmbedderError):
            _AutoEncoder(16, 15)  # dim not a multiple of the code grid

    def test_save_load_roundtrip(self, tmp_path):
        e = _fresh(seed=7)
        p = str(tmp_path / "emb.ckpt")
        e.save(p)
        e2 = Embedder.load(p)
        imgs = _corpus(4)
        assert np.array_equal(e.embed_many(imgs), e2.embed_many(imgs))

    def test_load_rejects_wrong_kind(self, tmp_path):
        from relume.diffusion import save_checkpoint
        p = str(tmp_path / "x.ckpt")
        save_checkpoint(p, {"w": np.zeros(3, np.float32)}, {"kind": "other"})
        with pytest.raises(EmbedderError):
            Embedder.load(p)


class TestTraining:
    def test_corpus_size_enforced(self):
        with pytest.raises(EmbedderError):
            train_embedder(_corpus(10), embedding_dim=16, iterations=1)

    def test_training_beats_mean_predictor(self):
        imgs = _corpus(64)
        held = _corpus(16, seed=601)
        e = train_embedder(imgs, embedding_dim=16, iterations=400,
                           batch_size=32, seed=3, min_corpus=64)
        data = torch.from_numpy(np.stack(
            [np.transpose(im, (2, 0, 1)) for im in held]))
        with torch.no_grad():
            recon = e.net(data)
            model_mse = float(((recon - data) ** 2).mean())
        mean_img = np.stack(imgs).mean(axis=0)
        base_mse = float(np.mean((np.stack(held) - mean_img) ** 2))
        assert model_mse < base_mse

    def test_seeded_reproducibility(self):
        imgs = _corpus(64)
        e1 = train_embedder(imgs, embedding_dim=16, iterations=30,
                            batch_size=16, seed=5, min_corpus=64)
        e2 = train_embedder(imgs, embedding_dim=16, iterations=30,
                            batch_size=16, seed=5, min_corpus=64)
        probe = _corpus(6, seed=602)
        assert np.array_equal(e1.embed_many(probe), e2.embed_many(probe))
