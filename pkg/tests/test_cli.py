"""End-to-end tests of the command line pipeline on the micro run."""

import json
import os

import numpy as np
import pytest

from conftest import write_micro_config
from relume.cli import main
from relume.raster import load_png


def test_artifacts_exist(micro_run):
    out = micro_run["out"]
    for rel in ("corpus/manifest.json", "models/removal.ckpt",
                "models/extraction.ckpt", "models/embedder.ckpt",
                "models/removal.jsonl", "triplets/triplets.jsonl",
                "triplets/sources.jsonl", "bundle/bundle.json",
                "ablation/bundle.json", "eval/metrics.json",
                "eval/timings.json", "eval/report/report.md",
                "eval/report/losses.png"):
        assert os.path.isfile(os.path.join(out, rel)), rel


def test_manifests_written(micro_run):
    out = micro_run["out"]
    for cmd in ("gen-data", "train-decouple", "build-triplets",
                "train-transfer", "evaluate", "report"):
        path = os.path.join(out, "manifests", cmd + ".json")
        assert os.path.isfile(path), cmd
        doc = json.load(open(path))
        assert doc["command"] == cmd
        assert doc["config"]["run"]["seed"] == 0
        assert doc["artifacts"]
        for key, sha in doc["artifacts"].items():
            assert not os.path.isabs(key)
            assert len(sha) == 64
            assert os.path.isfile(os.path.join(out, key))


def test_lock_released(micro_run):
    assert not os.path.exists(os.path.join(micro_run["out"], ".lock"))


def test_metrics_shape(micro_run):
    m = json.load(open(os.path.join(micro_run["out"], "eval",
                                    "metrics.json")))
    assert set(m) == {"counts", "criteria", "decoupling", "harness",
                      "light_fid", "transfer"}
    assert m["counts"]["eval_triplets"] == 17
    assert (m["harness"]["filtered"]["count"]
            <= m["harness"]["unfiltered"]["count"])
    for key in ("full", "naive_composite", "content_only", "stage2_only"):
        assert m["light_fid"][key] >= 0.0
    assert np.isfinite(m["decoupling"]["removal_margin_db"])


def _first_triplet(out):
    line = open(os.path.join(out, "triplets", "triplets.jsonl")).readline()
    return json.loads(line)["id"]


def test_infer_deterministic(micro_run):
    out = micro_run["out"]
    tid = _first_triplet(out)
    args = ["infer", "--config", micro_run["ini"],
            "--content", os.path.join(out, "triplets", "content",
                                      tid + ".png"),
            "--light", os.path.join(out, "triplets", "light", tid + ".png"),
            "--dx", "2", "--hflip", "--intensity", "0.7", "--seed", "11"]
    out1 = os.path.join(micro_run["root"], "a.png")
    out2 = os.path.join(micro_run["root"], "b.png")
    assert main(args + ["--out", out1]) == 0
    assert main(args + ["--out", out2]) == 0
    assert open(out1, "rb").read() == open(out2, "rb").read()
    assert load_png(out1).shape == (32, 32, 3)
    # the manifest records the output exactly as written
    doc = json.load(open(os.path.join(out, "manifests", "infer.json")))
    assert out2 in doc["artifacts"]


def test_infer_rejects_bad_transform(micro_run, capsys):
    out = micro_run["out"]
    tid = _first_triplet(out)
    content = os.path.join(out, "triplets", "content", tid + ".png")
    light = os.path.join(out, "triplets", "light", tid + ".png")
    code = main(["infer", "--config", micro_run["ini"], "--content", content,
                 "--light", light, "--dx", "99",
                 "--out", os.path.join(micro_run["root"], "x.png")])
    assert code == 2
    assert "config error" in capsys.readouterr().err


def test_infer_rejects_missing_input(micro_run, capsys):
    code = main(["infer", "--config", micro_run["ini"],
                 "--content", "/nope.png", "--light", "/nope.png",
                 "--out", os.path.join(micro_run["root"], "x.png")])
    assert code == 2


def test_missing_config_file(tmp_path, capsys):
    assert main(["gen-data", "--config", str(tmp_path / "no.ini")]) == 2
    assert "config error" in capsys.readouterr().err


def test_bad_override(micro_run, capsys):
    assert main(["gen-data", "--config", micro_run["ini"],
                 "--set", "corpus.scenes"]) == 2
    assert main(["gen-data", "--config", micro_run["ini"],
                 "--set", "corpus.wat=1"]) == 2


def test_missing_prerequisite_exit_code(tmp_path, capsys):
    ini = write_micro_config(str(tmp_path))
    code = main(["train-decouple", "--config", ini])
    assert code == 3
    err = capsys.readouterr().err
    assert "gen-data" in err and "missing prerequisite" in err


def test_build_triplets_requires_models(tmp_path, capsys):
    ini = write_micro_config(str(tmp_path))
    assert main(["gen-data", "--config", ini]) == 0
    code = main(["build-triplets", "--config", ini])
    assert code == 3
    assert "train-decouple" in capsys.readouterr().err


def test_lock_blocks_second_writer(tmp_path, capsys):
    ini = write_micro_config(str(tmp_path))
    out_root = os.path.join(str(tmp_path), "out")
    os.makedirs(out_root)
    with open(os.path.join(out_root, ".lock"), "w") as f:
        f.write("999\n")
    code = main(["gen-data", "--config", ini])
    assert code == 4
    assert ".lock" in capsys.readouterr().err
    os.unlink(os.path.join(out_root, ".lock"))
    assert main(["gen-data", "--config", ini]) == 0


def test_corpus_mismatch_detected(tmp_path, capsys):
    ini = write_micro_config(str(tmp_path))
    assert main(["gen-data", "--config", ini]) == 0
    code = main(["train-decouple", "--config", ini,
                 "--set", "corpus.master_seed=123"])
    assert code == 3
    assert "gen-data" in capsys.readouterr().err


def test_unknown_command_exits_two():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate", "--config", "x.ini"])
    assert exc.value.code == 2


def test_gen_data_idempotent(micro_run):
    """Regenerating the corpus must not change a byte."""
    out = micro_run["out"]
    manifest = os.path.join(out, "corpus", "manifest.json")
    scene = os.path.join(out, "corpus", "scenes", "scene_00000.png")
    before = (open(manifest, "rb").read(), open(scene, "rb").read())
    assert main(["gen-data", "--config", micro_run["ini"]]) == 0
    after = (open(manifest, "rb").read(), open(scene, "rb").read())
    assert before == after
