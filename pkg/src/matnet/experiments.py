"""One builder per experiment kind, turning a config into data, model and task."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from . import data as D
from .config import ConfigError, ExperimentConfig
from .graph import GCN, ColumnNetwork
from .layers import MatrixAutoencoder, MatrixFFN, parameter_count
from .recurrent import Seq2Seq, SequenceClassifier
from .tensor import named_arrays
from .training import (Adam, ClassificationTask, EpochRecord, NodeClassificationTask, ReconstructionTask,
                       Split, StoppingRule, TrainingRecord, stack_outputs, train_loop)


@dataclass
class Prepared:
    task: Any
    split: Split
    batch_size: int
    extra: Callable[[], dict] = field(default=lambda: {})  # non-trainable arrays to save


@dataclass
class RunResult:
    record: TrainingRecord
    arrays: dict[str, np.ndarray]
    summary: dict


def _partition(n_train: int, n_val: int, n_test: int):
    a, b = n_train, n_train + n_val
    return slice(0, a), slice(a, b), slice(b, b + n_test)


def _tuple_split(inputs, targets, cfg: ExperimentConfig) -> Split:
    d = cfg.data
    tr, va, te = _partition(d.n_train, d.n_val, d.n_test)
    return Split((inputs[tr], targets[tr]),
                 (inputs[va], targets[va]) if d.n_val else None,
                 (inputs[te], targets[te]) if d.n_test else None)


def _images(cfg: ExperimentConfig, rng) -> D.LabeledMatrixSet:
    d = cfg.data
    total = d.n_train + d.n_val + d.n_test
    if d.source == "idx":
        ds = D.load_idx(d.images, d.labels)
        if len(ds) < total:
            raise ConfigError("data.n_train", f"needs {total} images but {d.images} holds {len(ds)}")
        return ds.subset(slice(0, total))
    if d.source != "synthetic":
        raise ConfigError("data.source", f"{d.source!r} is not valid for image experiments")
    return D.synthetic_digits(total, rng, d.n_classes, cfg.model.input_shape)


def build_ffn_classify(cfg: ExperimentConfig, rng) -> Prepared:
    ds = _images(cfg, rng)
    m = cfg.model
    net = MatrixFFN(ds.shape, m.hidden, m.depth, rng, act=m.activation, skip=m.skip,
                    batch_norm=m.batch_norm, n_classes=ds.n_classes,
                    input_dropout=m.input_dropout, hidden_dropout=m.hidden_dropout)

    def extra():
        out = {}
        for k, s in enumerate(net.bn_stats):
            out[f"state.bn.{k}.running_mean"] = s.running_mean
            out[f"state.bn.{k}.running_var"] = s.running_var
        return out

    return Prepared(ClassificationTask(net), _tuple_split(ds.images, ds.labels, cfg),
                    cfg.optimizer.batch_size, extra)


def build_autoencoder(cfg: ExperimentConfig, rng) -> Prepared:
    ds = _images(cfg, rng)
    d, m = cfg.data, cfg.model
    net = MatrixAutoencoder(ds.shape, m.hidden, m.depth, rng, act=m.activation, out_act=m.output_activation)
    clean = ds.images
    noisy = D.add_noise(clean, d.noise_ratio, rng, d.noise_kind) if d.noise_ratio else clean.copy()
    split = _tuple_split(noisy, clean, cfg)
    if d.patches:
        # held-out inputs get occluding patches instead of training noise
        tr, va, te = _partition(d.n_train, d.n_val, d.n_test)
        occluded = D.corrupt_patches(clean, d.patch, d.patches, rng)
        split.val = (occluded[va], clean[va]) if d.n_val else None
        split.test = (occluded[te], clean[te]) if d.n_test else None
    return Prepared(ReconstructionTask(net, loss=m.loss), split, cfg.optimizer.batch_size)


def build_seq2seq(cfg: ExperimentConfig, rng) -> Prepared:
    d, m = cfg.data, cfg.model
    total = d.n_train + d.n_val + d.n_test
    if d.frame >= 28:
        glyphs = D.synthetic_digits(64, rng, shape=(28, 28))
    else:
        glyphs = D.blob_glyphs(8, rng, size=max(2, d.frame // 4))
    seqs = D.moving_digits(glyphs, total, rng, length=d.seq_len, frame=d.frame, n_digits=d.n_digits).sequences
    horizon = d.seq_len - d.enc_len
    net = Seq2Seq((d.frame, d.frame), m.hidden, rng, cell=m.cell, act="tanh", out_act=m.output_activation,
                  input_dropout=m.input_dropout, hidden_dropout=m.hidden_dropout)

    def forward(p, X, training, rng_):
        return stack_outputs(net.forward(p, X, horizon, training, rng_))

    task = ReconstructionTask(net, loss=m.loss, forward=forward)
    return Prepared(task, _tuple_split(seqs[:, :d.enc_len], seqs[:, d.enc_len:], cfg), cfg.optimizer.batch_size)


def spectrogram_inputs(signals: np.ndarray, window: int = 64, overlap: int = 56, maps: int | None = None):
    """Trials ``(N, channels, samples)`` to time-major log spectrograms.

    Returns ``(N, frames, channels, bins)``, or with ``maps`` set
    ``(N, frames, maps, channels // maps, bins)`` for a tensor-matrix front end.
    """
    spec = np.log1p(np.stack([D.stft_spectrogram(s, window, overlap) for s in signals]))
    X = np.moveaxis(spec, -1, 1)
    if maps is not None:
        n, t, c, b = X.shape
        if c % maps:
            raise ValueError(f"{c} channels do not split into {maps} maps")
        X = X.reshape(n, t, maps, c // maps, b)
    return X


def build_spectrogram_classify(cfg: ExperimentConfig, rng) -> Prepared:
    d, m = cfg.data, cfg.model
    total = d.n_train + d.n_val + d.n_test
    if d.channels % m.front_maps and m.front_end == "tensor-map":
        raise ConfigError("model.front_maps", f"must divide data.channels ({d.channels})")
    if d.samples < d.window:
        raise ConfigError("data.samples", "must be at least data.window")
    signals, labels = D.synthetic_eeg(total, rng, channels=d.channels, samples=d.samples,
                                      active_channels=max(1, d.channels // 4))
    tensor_front = m.front_end == "tensor-map"
    X = spectrogram_inputs(signals, d.window, d.overlap, m.front_maps if tensor_front else None)
    net = SequenceClassifier(X.shape[2:], m.hidden, 2, rng, cell=m.cell, act="tanh",
                             front_shape=m.front_shape if tensor_front else None,
                             input_dropout=m.input_dropout)
    return Prepared(ClassificationTask(net), _tuple_split(X, labels, cfg), cfg.optimizer.batch_size)


_CLN_VARIANTS = {"cln": "mean", "attention-cln": "attention", "vector-cln": "vector"}


def build_graph_nodes(cfg: ExperimentConfig, rng) -> Prepared:
    d, m = cfg.data, cfg.model
    if d.source == "files":
        g = D.load_graph(d.edges, d.features, d.node_labels, rng, n_test=d.n_test, n_val=d.n_val)
    elif d.source == "synthetic":
        g = D.synthetic_graph(d.nodes, d.n_classes, rng, n_features=d.feature_dim,
                              n_test=d.n_test, n_val=d.n_val)
    else:
        raise ConfigError("data.source", f"{d.source!r} is not valid for graph experiments")
    n_classes = int(g.labels.max()) + 1
    if m.graph_model == "gcn":
        net = GCN(g, m.hidden_units, n_classes, rng, act=m.activation)
    else:
        net = ColumnNetwork(g, m.hidden_units, n_classes, rng, height=m.height,
                            variant=_CLN_VARIANTS[m.graph_model], heads=m.heads,
                            neighbors=m.neighbors, act=m.activation)
    if g.split is None:
        train = np.arange(g.node_count)
        val = test = None
    else:
        train = g.nodes_in("train")
        val, test = g.nodes_in("val"), g.nodes_in("test")
    y = g.labels
    split = Split((train, y[train]),
                  (val, y[val]) if val is not None and len(val) else None,
                  (test, y[test]) if test is not None and len(test) else None)
    # every step runs the whole graph, so train on all labelled nodes at once
    return Prepared(NodeClassificationTask(net), split, len(train))


BUILDERS = {
    "ffn-classify": build_ffn_classify,
    "autoencoder": build_autoencoder,
    "seq2seq": build_seq2seq,
    "spectrogram-classify": build_spectrogram_classify,
    "graph-nodes": build_graph_nodes,
}


def param_count_summary(cfg: ExperimentConfig) -> dict:
    (c1, r1), (c2, r2) = cfg.model.input_shape, cfg.model.hidden
    counts = parameter_count(c1, r1, c2, r2)
    return {"c1": c1, "r1": r1, "c2": c2, "r2": r2,
            "matrix": counts.matrix_count, "vector": counts.vector_count}


def run_experiment(cfg: ExperimentConfig, on_epoch: Callable[[EpochRecord], None] | None = None) -> RunResult:
    """Train the configured model; ``param-count`` is handled by the caller."""
    if cfg.experiment.kind not in BUILDERS:
        raise ConfigError("experiment.kind", f"{cfg.experiment.kind!r} has no training pathway")
    rng = np.random.default_rng(cfg.experiment.seed)
    prep = BUILDERS[cfg.experiment.kind](cfg, rng)
    o = cfg.optimizer
    record = train_loop(prep.task, prep.split, Adam(o.lr, o.beta1, o.beta2, o.eps),
                        StoppingRule(cfg.stopping.patience), cfg.stopping.epochs, rng,
                        batch_size=prep.batch_size, l1=o.l1, l2=o.l2,
                        time_epochs=cfg.experiment.timing, on_epoch=on_epoch)
    arrays = dict(named_arrays(prep.task.params))
    summary = {
        "name": cfg.experiment.name,
        "kind": cfg.experiment.kind,
        "seed": cfg.experiment.seed,
        "params": int(sum(a.size for a in arrays.values())),
        "epochs": len(record.epochs),
        "best_epoch": record.best_epoch,
        "best_val_loss": record.best_val_loss,
        "stopped_early": record.stopped_early,
        "metric_name": prep.task.metric_name,
    }
    if prep.split.test is not None:
        test_loss, test_metric = prep.task.evaluate(*prep.split.test)
        summary["test_loss"], summary["test_metric"] = test_loss, test_metric
    arrays.update(prep.extra())
    return RunResult(record, arrays, summary)
