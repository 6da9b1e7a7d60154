"""Shared fixtures: one micro pipeline run reused across test modules.

The micro configuration trades all quality for speed; it exists to
exercise the pipeline plumbing, not to produce usable models.
"""

import os

import pytest

MICRO = """
[run]
version = 1
seed = 0
out_root = {root}

[corpus]
resolution = 32
scenes = 36
lights = 14
master_seed = 77

[decouple]
train_scenes = 24
train_lights = 10
removal_iterations = 8
extraction_iterations = 8
batch_size = 4
base_width = 16
depth = 2
timesteps = 100

[embedder]
dim = 16
iterations = 30
batch_size = 16
min_corpus = 20

[triplets]
gamma = 0.999
selection_threshold = 0.0
re_removal_threshold = 1.0
n_steps = 4
source_count = 48
unlit_fraction = 0.1

[transfer]
base_iterations = 8
stage1_iterations = 6
stage2_iterations = 8
batch_size = 4
adapter_rank = 4
n_steps = 4

[eval]
count = 17
n_steps = 4
seed = 123
"""


def write_micro_config(root, text=MICRO):
    path = os.path.join(root, "run.ini")
    with open(path, "w") as f:
        f.write(text.format(root=os.path.join(root, "out")))
    return path


@pytest.fixture(scope="session")
def micro_run(tmp_path_factory):
    """Full pipeline pass over the micro config; shared read-only."""
    from relume.cli import main

    root = str(tmp_path_factory.mktemp("micro"))
    ini = write_micro_config(root)
    for cmd in ("gen-data", "train-decouple", "build-triplets",
                "train-transfer", "evaluate", "report"):
        assert main([cmd, "--config", ini]) == 0, cmd
    return {"root": root, "ini": ini, "out": os.path.join(root, "out")}
