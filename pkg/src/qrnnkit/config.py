"""Run configuration: a line-oriented `section.key = value` text format.

Precedence is defaults, then file, then command-line overrides.  Unknown
keys are rejected outright; values are validated against the declared
type with the offending line number in the error.
"""

import os
from dataclasses import dataclass, field, fields
from importlib import resources

from .errors import ConfigError


@dataclass
class ModelConfig:
    layers: int = 2
    hidden: int = 64
    embed: int = 64
    k: int = 2
    k_first: int = 0          # 0 means "same as k"; used by the first (encoder) layer
    pooling: str = "fo"
    masked: bool = True       # LM/classifier stacks and the MT encoder
    dense: bool = False
    reverse_source: bool = True
    readout: str = "mean"     # classifier: mean | final


@dataclass
class TrainConfig:
    optimizer: str = "sgd"
    lr: float = 1.0
    lr_flat_epochs: int = 6
    lr_decay: float = 1.0
    rmsprop_alpha: float = 0.9
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    eps: float = 1e-8
    max_grad_norm: float = 10.0   # 0 disables rescaling
    l2: float = 0.0
    epochs: int = 10
    batch_size: int = 20
    bptt: int = 105
    zoneout: float = 0.0
    dropout: float = 0.0
    beam_width: int = 4
    beam_alpha: float = 0.0
    beam_max_len: int = 128


@dataclass
class DataConfig:
    train: str = ""
    valid: str = ""
    valid_fraction: float = 0.1
    src_train: str = ""
    tgt_train: str = ""
    src_valid: str = ""
    tgt_valid: str = ""
    labeled_train: str = ""
    labeled_valid: str = ""
    level: str = "char"
    vocab_max: int = 0            # 0 means unlimited
    max_chars: int = 300
    embeddings: str = ""


@dataclass
class BenchConfig:
    hidden: int = 320
    k: int = 2
    reps: int = 5
    warmup: int = 2
    mode: str = "training"
    batches: str = "8,16,32,64,128,256"
    seqlens: str = "32,64,128,256,512"
    json: bool = False


@dataclass
class RunConfig:
    task: str = "lm"
    seed: int = 42
    out: str = "runs/out"
    threads: int = 0              # 0 means library default
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)


_TOP_KEYS = {"task": str, "seed": int, "out": str, "threads": int}
_SECTIONS = {"model": ModelConfig, "train": TrainConfig, "data": DataConfig,
             "bench": BenchConfig}
# Keys excluded from the checkpoint-embedded echo: they describe where and
# how a run executes, not what the model is.
_RUNTIME_KEYS = ("out", "threads")


def _known_keys():
    keys = dict(_TOP_KEYS)
    for section, cls in _SECTIONS.items():
        for f in fields(cls):
            keys[f"{section}.{f.name}"] = f.type if isinstance(f.type, type) else \
                type(getattr(cls(), f.name))
    return keys


_KNOWN = _known_keys()


def _parse_value(key, text, lineno=None):
    want = _KNOWN[key]
    where = f" (line {lineno})" if lineno is not None else ""
    text = text.strip()
    if want is bool:
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected true/false, got {text!r}{where}")
    try:
        if want is int:
            return int(text)
        if want is float:
            return float(text)
    except ValueError:
        raise ConfigError(
            f"{key}: expected {want.__name__}, got {text!r}{where}") from None
    return text


def _assign(cfg, key, value):
    if "." in key:
        section, name = key.split(".", 1)
        setattr(getattr(cfg, section), name, value)
    else:
        setattr(cfg, key, value)


def _apply_lines(cfg, lines, origin):
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}: line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _KNOWN:
            raise ConfigError(f"{origin}: line {lineno}: unknown key {key!r}")
        _assign(cfg, key, _parse_value(key, value, lineno))


def parse_config(path=None, overrides=()):
    """Build a RunConfig from an optional file plus `key=value` overrides."""
    cfg = RunConfig()
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            _apply_lines(cfg, fh.read().splitlines(), str(path))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected key=value")
        key, _, value = item.partition("=")
        key = key.strip()
        if key not in _KNOWN:
            raise ConfigError(f"unknown key {key!r}")
        _assign(cfg, key, _parse_value(key, value))
    _validate(cfg)
    return cfg


def parse_config_text(text, overrides=()):
    """Like parse_config but from in-memory text (checkpoint config echoes)."""
    cfg = RunConfig()
    _apply_lines(cfg, text.splitlines(), "<config echo>")
    for item in overrides:
        key, _, value = item.partition("=")
        key = key.strip()
        if key not in _KNOWN:
            raise ConfigError(f"unknown key {key!r}")
        _assign(cfg, key, _parse_value(key, value))
    _validate(cfg)
    return cfg


def _validate(cfg):
    if cfg.task not in ("lm", "classify", "translate", "bench", "dump-states"):
        raise ConfigError(f"unknown task {cfg.task!r}")
    if cfg.model.pooling not in ("f", "fo", "ifo"):
        raise ConfigError(f"model.pooling must be f/fo/ifo, got {cfg.model.pooling!r}")
    if not 0.0 <= cfg.train.zoneout < 1.0:
        raise ConfigError("train.zoneout must be in [0, 1)")
    if not 0.0 <= cfg.train.dropout < 1.0:
        raise ConfigError("train.dropout must be in [0, 1)")
    if cfg.data.level not in ("char", "word"):
        raise ConfigError("data.level must be char or word")
    if cfg.model.readout not in ("mean", "final"):
        raise ConfigError("model.readout must be mean or final")


def render_config(cfg, include_runtime=True):
    """Canonical text form of a config (the echo written next to outputs)."""
    lines = []
    for key in sorted(_KNOWN):
        if not include_runtime and key in _RUNTIME_KEYS:
            continue
        if "." in key:
            section, name = key.split(".", 1)
            value = getattr(getattr(cfg, section), name)
        else:
            value = getattr(cfg, key)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def preset_path(name):
    """Filesystem path of a shipped preset (`ptb-medium`, with or without .cfg)."""
    if not name.endswith(".cfg"):
        name += ".cfg"
    ref = resources.files("qrnnkit").joinpath("presets", name)
    if not ref.is_file():
        raise ConfigError(f"no preset named {name!r}")
    return str(ref)


def resolve_config_arg(value):
    """--config accepts a real path or a shipped preset name."""
    if value is None:
        return None
    if os.path.exists(value):
        return value
    return preset_path(value)
