"""Run configuration: a versioned key-value text file with one section
per pipeline stage.

The section dataclasses below are the schema; field metadata carries the
value type and allowed range. Unknown sections or keys are rejected, as
are out-of-range values. CLI flags override file values (the CLI passes
them in as ``overrides``) before any validation runs, so a flag can fix
a broken file value but is checked just as strictly.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields

CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


def _key(kind, default=None, lo=None, hi=None, lo_open=False):
    return field(default=default,
                 metadata={"kind": kind, "lo": lo, "hi": hi,
                           "lo_open": lo_open})


@dataclass(frozen=True)
class RunSection:
    version: int = _key("int")
    seed: int = _key("int", 0, lo=0)
    out_root: str = _key("path", "runs/desk")


@dataclass(frozen=True)
class CorpusSection:
    resolution: int = _key("int", 64, lo=8)
    scenes: int = _key("int", 5000, lo=1)
    lights: int = _key("int", 1000, lo=1)
    master_seed: int = _key("int", 77, lo=0)


@dataclass(frozen=True)
class DecoupleSection:
    train_scenes: int = _key("int", 3500, lo=1)
    train_lights: int = _key("int", 700, lo=1)
    removal_iterations: int = _key("int", 3000, lo=1)
    extraction_iterations: int = _key("int", 3000, lo=1)
    batch_size: int = _key("int", 12, lo=1)
    learning_rate: float = _key("float", 2e-4, lo=0.0, lo_open=True)
    synth_mix: float = _key("float", 0.8, lo=0.0, hi=1.0)
    base_width: int = _key("int", 48, lo=8)
    depth: int = _key("int", 3, lo=1)
    timesteps: int = _key("int", 1000, lo=2)
    kind_conditioning: bool = _key("bool", True)
    unlit_prob: float = _key("float", 0.05, lo=0.0, hi=1.0)


@dataclass(frozen=True)
class EmbedderSection:
    dim: int = _key("int", 64, lo=4)
    iterations: int = _key("int", 2500, lo=1)
    batch_size: int = _key("int", 32, lo=1)
    learning_rate: float = _key("float", 1e-3, lo=0.0, lo_open=True)
    min_corpus: int = _key("int", 1000, lo=1)


@dataclass(frozen=True)
class TripletSection:
    gamma: float = _key("float", 0.98, lo=0.0, hi=1.0, lo_open=True)
    selection_threshold: float = _key("float", 0.15, lo=0.0, hi=1.0)
    re_removal_threshold: float = _key("float", 0.30, lo=0.0, hi=1.0)
    n_steps: int = _key("int", 20, lo=1)
    source_count: int = _key("int", 1200, lo=1)
    unlit_fraction: float = _key("float", 0.15, lo=0.0, hi=1.0)


@dataclass(frozen=True)
class TransferSection:
    base_iterations: int = _key("int", 1200, lo=1)
    stage1_iterations: int = _key("int", 600, lo=1)
    stage2_iterations: int = _key("int", 2400, lo=1)
    batch_size: int = _key("int", 12, lo=1)
    base_lr: float = _key("float", 2e-4, lo=0.0, lo_open=True)
    stage1_lr: float = _key("float", 1e-4, lo=0.0, lo_open=True)
    stage2_lr: float = _key("float", 2e-4, lo=0.0, lo_open=True)
    adapter_rank: int = _key("int", 8, lo=1)
    n_steps: int = _key("int", 20, lo=1)


@dataclass(frozen=True)
class EvalSection:
    count: int = _key("int", 80, lo=2)
    n_steps: int = _key("int", 20, lo=1)
    tau_content: float = _key("float", 0.30, lo=0.0, hi=1.0)
    dark_mean_max: float = _key("float", 0.05, lo=0.0, hi=1.0)
    min_correlation: float = _key("float", 0.7, lo=-1.0, hi=1.0)
    seed: int = _key("int", 123, lo=0)


@dataclass(frozen=True)
class ServiceSection:
    host: str = _key("str", "127.0.0.1")
    port: int = _key("int", 8765, lo=1, hi=65535)
    bundle: str = _key("path", "")
    extraction: str = _key("path", "")
    lights_dir: str = _key("path", "")


_SECTIONS = {
    "run": RunSection,
    "corpus": CorpusSection,
    "decouple": DecoupleSection,
    "embedder": EmbedderSection,
    "triplets": TripletSection,
    "transfer": TransferSection,
    "eval": EvalSection,
    "service": ServiceSection,
}


@dataclass(frozen=True)
class RunConfig:
    run: RunSection
    corpus: CorpusSection
    decouple: DecoupleSection
    embedder: EmbedderSection
    triplets: TripletSection
    transfer: TransferSection
    eval: EvalSection
    service: ServiceSection


def _parse_value(section, f, raw):
    kind = f.metadata["kind"]
    name = f"{section}.{f.name}"
    try:
        if kind == "int":
            value = int(raw)
        elif kind == "float":
            value = float(raw)
        elif kind == "bool":
            low = str(raw).strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        else:
            return str(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: cannot parse {raw!r} as {kind}")
    lo, hi = f.metadata["lo"], f.metadata["hi"]
    if lo is not None and (value < lo or
                           (f.metadata["lo_open"] and value == lo)):
        raise ConfigError(f"{name}: {value} below minimum {lo}")
    if hi is not None and value > hi:
        raise ConfigError(f"{name}: {value} above maximum {hi}")
    return value


def load_config(path, overrides=None) -> RunConfig:
    """Parse and validate a config file. overrides maps "section.key"
    to raw string values and takes precedence over the file."""
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    parser.optionxform = str
    try:
        parser.read(path)
    except configparser.Error as e:
        raise ConfigError(f"cannot parse {path}: {e}")

    raw = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key, value in parser.items(section):
            raw[f"{section}.{key}"] = value
    for dotted, value in (overrides or {}).items():
        section = dotted.split(".", 1)[0]
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section in override {dotted!r}")
        raw[dotted] = value

    known = {f"{s}.{f.name}" for s, cls in _SECTIONS.items()
             for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(unknown)}")

    built = {}
    for section, cls in _SECTIONS.items():
        values = {}
        for f in fields(cls):
            dotted = f"{section}.{f.name}"
            if dotted in raw:
                values[f.name] = _parse_value(section, f, raw[dotted])
            elif f.default is not None:
                values[f.name] = f.default
            else:
                raise ConfigError(f"missing required key {dotted}")
        built[section] = cls(**values)

    if built["run"].version != CONFIG_VERSION:
        raise ConfigError(
            f"config version {built['run'].version} not supported; this "
            f"build reads version {CONFIG_VERSION}")
    if built["decouple"].train_scenes >= built["corpus"].scenes:
        raise ConfigError("decouple.train_scenes must leave held-out scenes")
    if built["decouple"].train_lights >= built["corpus"].lights:
        raise ConfigError("decouple.train_lights must leave held-out lights")
    if built["eval"].count <= built["embedder"].dim:
        raise ConfigError(
            "eval.count must exceed embedder.dim for distribution distances")
    return RunConfig(**built)


def default_config_text(out_root="runs/desk") -> str:
    """Render a complete config file with every key at its default."""
    lines = []
    for section, cls in _SECTIONS.items():
        lines.append(f"[{section}]")
        for f in fields(cls):
            if f.name == "version":
                value = CONFIG_VERSION
            elif section == "run" and f.name == "out_root":
                value = out_root
            else:
                value = f.default
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name} = {value}")
        lines.append("")
    return "\n".join(lines)
