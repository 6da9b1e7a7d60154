import pytest

from relume.config import (CONFIG_VERSION, ConfigError, default_config_text,
                           load_config)


def write(tmp_path, text):
    path = tmp_path / "run.ini"
    path.write_text(text)
    return path


MINIMAL = "[run]\nversion = 1\n"


def test_minimal_config_gets_defaults(tmp_path):
    cfg = load_config(write(tmp_path, MINIMAL))
    assert cfg.run.version == CONFIG_VERSION
    assert cfg.run.seed == 0
    assert cfg.run.out_root == "runs/desk"
    assert cfg.corpus.resolution == 64
    assert cfg.corpus.scenes == 5000
    assert cfg.decouple.kind_conditioning is True
    assert cfg.triplets.gamma == 0.98
    assert cfg.transfer.adapter_rank == 8
    assert cfg.eval.count == 80
    assert cfg.service.port == 8765


def test_default_text_round_trips(tmp_path):
    text = default_config_text(out_root="elsewhere")
    cfg = load_config(write(tmp_path, text))
    assert cfg.run.out_root == "elsewhere"
    assert cfg == load_config(write(tmp_path, text))


def test_missing_version_rejected(tmp_path):
    with pytest.raises(ConfigError, match="run.version"):
        load_config(write(tmp_path, "[corpus]\nscenes = 10\n"))


def test_wrong_version_rejected(tmp_path):
    with pytest.raises(ConfigError, match="version 99"):
        load_config(write(tmp_path, "[run]\nversion = 99\n"))


def test_missing_file_rejected(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.ini")


def test_unknown_section_rejected(tmp_path):
    with pytest.raises(ConfigError, match=r"unknown section \[lighting\]"):
        load_config(write(tmp_path, MINIMAL + "[lighting]\nx = 1\n"))


def test_unknown_key_rejected(tmp_path):
    with pytest.raises(ConfigError, match="corpus.size"):
        load_config(write(tmp_path, MINIMAL + "[corpus]\nsize = 10\n"))


def test_unparsable_value_rejected(tmp_path):
    with pytest.raises(ConfigError, match="corpus.scenes"):
        load_config(write(tmp_path, MINIMAL + "[corpus]\nscenes = many\n"))


def test_bool_parsing(tmp_path):
    base = MINIMAL + "[decouple]\nkind_conditioning = %s\n"
    assert load_config(
        write(tmp_path, base % "off")).decouple.kind_conditioning is False
    assert load_config(
        write(tmp_path, base % "YES")).decouple.kind_conditioning is True
    with pytest.raises(ConfigError, match="kind_conditioning"):
        load_config(write(tmp_path, base % "maybe"))


@pytest.mark.parametrize("line,pattern", [
    ("[decouple]\nsynth_mix = 1.5", "synth_mix"),
    ("[decouple]\nlearning_rate = 0", "learning_rate"),
    ("[triplets]\ngamma = 0", "gamma"),
    ("[eval]\nmin_correlation = -2", "min_correlation"),
    ("[service]\nport = 0", "port"),
    ("[service]\nport = 70000", "port"),
    ("[corpus]\nresolution = 4", "resolution"),
])
def test_out_of_range_rejected(tmp_path, line, pattern):
    with pytest.raises(ConfigError, match=pattern):
        load_config(write(tmp_path, MINIMAL + line + "\n"))


def test_split_cross_checks(tmp_path):
    text = MINIMAL + "[corpus]\nscenes = 100\nlights = 50\n"
    with pytest.raises(ConfigError, match="train_scenes"):
        load_config(write(tmp_path, text + "[decouple]\ntrain_scenes = 100\n"
                          "train_lights = 10\n"))
    with pytest.raises(ConfigError, match="train_lights"):
        load_config(write(tmp_path, text + "[decouple]\ntrain_scenes = 10\n"
                          "train_lights = 80\n"))


def test_eval_count_vs_embedder_dim(tmp_path):
    with pytest.raises(ConfigError, match="eval.count"):
        load_config(write(tmp_path, MINIMAL + "[eval]\ncount = 64\n"))


def test_overrides_take_precedence(tmp_path):
    path = write(tmp_path, MINIMAL + "[corpus]\nscenes = 4000\n")
    cfg = load_config(path, {"corpus.scenes": "6000", "run.seed": "5"})
    assert cfg.corpus.scenes == 6000
    assert cfg.run.seed == 5


def test_override_validated_like_file_values(tmp_path):
    path = write(tmp_path, MINIMAL)
    with pytest.raises(ConfigError, match="unknown"):
        load_config(path, {"corpus.size": "1"})
    with pytest.raises(ConfigError, match="unknown section"):
        load_config(path, {"nope.key": "1"})
    with pytest.raises(ConfigError, match="seed"):
        load_config(path, {"run.seed": "-3"})


def test_duplicate_key_rejected(tmp_path):
    with pytest.raises(ConfigError, match="parse"):
        load_config(write(tmp_path,
                          "[run]\nversion = 1\nversion = 2\n"))
