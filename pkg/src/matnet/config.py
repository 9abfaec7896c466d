"""Experiment configuration: a sectioned ``key = value`` file.

Example::

    [experiment]
    kind = ffn-classify
    seed = 1

    [model]
    hidden = 20x20
    depth = 30

Every section maps to a dataclass; unknown sections or keys are rejected and
``[experiment] seed`` has no default.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import typing
from dataclasses import dataclass, field
from pathlib import Path

KINDS = ("ffn-classify", "autoencoder", "seq2seq", "spectrogram-classify", "graph-nodes", "param-count")


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending ``section.key``."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


Shape = typing.Tuple[int, int]


@dataclass
class ExperimentSection:
    kind: str = ""
    seed: int | None = None
    name: str = "run"
    timing: bool = False


@dataclass
class ModelSection:
    input_shape: Shape = (28, 28)
    hidden: Shape = (20, 20)
    depth: int = 2
    cell: str = "lstm"
    skip: str = "none"
    activation: str = "relu"
    output_activation: str = "sigmoid"
    batch_norm: bool = False
    input_dropout: float = 0.0
    hidden_dropout: float = 0.0
    front_end: str = "none"
    front_shape: Shape = (16, 16)
    front_maps: int = 8
    graph_model: str = "cln"
    hidden_units: int = 20
    heads: int = 10
    height: int = 5
    neighbors: int = 50
    loss: str = "mse"


@dataclass
class OptimizerSection:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    l1: float = 0.0
    l2: float = 0.0


@dataclass
class DataSection:
    source: str = "synthetic"
    images: str = ""
    labels: str = ""
    edges: str = ""
    features: str = ""
    node_labels: str = ""
    n_train: int = 1000
    n_val: int = 0
    n_test: int = 0
    n_classes: int = 10
    frame: int = 64
    seq_len: int = 20
    enc_len: int = 15
    n_digits: int = 2
    noise_ratio: float = 0.0
    noise_kind: str = "mask"
    patch: int = 5
    patches: int = 0
    channels: int = 64
    samples: int = 256
    window: int = 64
    overlap: int = 56
    nodes: int = 300
    feature_dim: int = 50


@dataclass
class StoppingSection:
    epochs: int = 10
    patience: int = 10


@dataclass
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    model: ModelSection = field(default_factory=ModelSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    data: DataSection = field(default_factory=DataSection)
    stopping: StoppingSection = field(default_factory=StoppingSection)


_CHOICES = {
    "experiment.kind": KINDS,
    "model.cell": ("rnn", "lstm", "gru"),
    "model.skip": ("none", "highway", "resnet"),
    "model.activation": ("identity", "sigmoid", "tanh", "relu"),
    "model.output_activation": ("identity", "sigmoid", "tanh", "relu"),
    "model.front_end": ("none", "tensor-map"),
    "model.graph_model": ("cln", "attention-cln", "vector-cln", "gcn"),
    "model.loss": ("mse", "bce"),
    "data.source": ("synthetic", "idx", "files"),
    "data.noise_kind": ("mask", "gaussian"),
}


def _parse_value(kind, raw: str, where: str):
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError
        if kind in (int, typing.Optional[int]):
            return int(raw)
        if kind is float:
            return float(raw)
        if kind == Shape:
            parts = raw.lower().replace(" ", "").split("x")
            if len(parts) != 2:
                raise ValueError
            return (int(parts[0]), int(parts[1]))
        return raw
    except ValueError:
        raise ConfigError(where, f"cannot parse {raw!r}") from None


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return "x".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("config", str(exc).splitlines()[0]) from None
    cfg = ExperimentConfig()
    sections = {f.name: f for f in dataclasses.fields(cfg)}
    for name in parser.sections():
        if name not in sections:
            raise ConfigError(name, f"unknown section [{name}]")
        section = getattr(cfg, name)
        hints = typing.get_type_hints(type(section))
        for key, raw in parser.items(name):
            where = f"{name}.{key}"
            if key not in hints:
                raise ConfigError(where, f"unknown key {key!r} in section [{name}]")
            setattr(section, key, _parse_value(hints[key], raw, where))
    validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def dump_config(cfg: ExperimentConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for sec in dataclasses.fields(cfg):
        section = getattr(cfg, sec.name)
        parser[sec.name] = {
            f.name: _format_value(getattr(section, f.name))
            for f in dataclasses.fields(section)
            if getattr(section, f.name) is not None
        }
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def validate(cfg: ExperimentConfig) -> None:
    if cfg.experiment.seed is None:
        raise ConfigError("experiment.seed", "a seed is required")
    if not cfg.experiment.kind:
        raise ConfigError("experiment.kind", f"required; one of {', '.join(KINDS)}")
    for where, choices in _CHOICES.items():
        sec, key = where.split(".")
        value = getattr(getattr(cfg, sec), key)
        if value not in choices:
            raise ConfigError(where, f"{value!r} is not one of {', '.join(choices)}")
    m = cfg.model
    for key in ("input_shape", "hidden", "front_shape"):
        if min(getattr(m, key)) < 1:
            raise ConfigError(f"model.{key}", "dimensions must be positive")
    for key in ("input_dropout", "hidden_dropout"):
        if not 0.0 <= getattr(m, key) < 1.0:
            raise ConfigError(f"model.{key}", "dropout rate must be in [0, 1)")
    positive = {
        "model.depth": m.depth, "model.front_maps": m.front_maps, "model.hidden_units": m.hidden_units,
        "model.heads": m.heads, "model.height": m.height, "model.neighbors": m.neighbors,
        "optimizer.batch_size": cfg.optimizer.batch_size, "data.n_train": cfg.data.n_train,
        "data.n_classes": cfg.data.n_classes, "data.frame": cfg.data.frame,
        "data.seq_len": cfg.data.seq_len, "data.enc_len": cfg.data.enc_len,
        "data.window": cfg.data.window, "data.nodes": cfg.data.nodes,
        "data.feature_dim": cfg.data.feature_dim, "stopping.epochs": cfg.stopping.epochs,
        "stopping.patience": cfg.stopping.patience,
    }
    for where, value in positive.items():
        if value < 1:
            raise ConfigError(where, "must be >= 1")
    if cfg.optimizer.lr <= 0:
        raise ConfigError("optimizer.lr", "must be positive")
    if cfg.optimizer.l1 < 0 or cfg.optimizer.l2 < 0:
        raise ConfigError("optimizer.l1" if cfg.optimizer.l1 < 0 else "optimizer.l2", "must be non-negative")
    if not 0.0 <= cfg.data.noise_ratio <= 1.0:
        raise ConfigError("data.noise_ratio", "must be in [0, 1]")
    if cfg.data.enc_len >= cfg.data.seq_len:
        raise ConfigError("data.enc_len", "must be shorter than data.seq_len")
    if cfg.data.n_val < 0 or cfg.data.n_test < 0:
        raise ConfigError("data.n_val" if cfg.data.n_val < 0 else "data.n_test", "must be non-negative")
    if not 0 <= cfg.data.overlap < cfg.data.window:
        raise ConfigError("data.overlap", "must be in [0, window)")
    if cfg.data.source == "idx" and not (cfg.data.images and cfg.data.labels):
        raise ConfigError("data.images", "idx source needs images and labels paths")
    if cfg.data.source == "files" and not (cfg.data.edges and cfg.data.features and cfg.data.node_labels):
        raise ConfigError("data.edges", "files source needs edges, features and node_labels paths")
