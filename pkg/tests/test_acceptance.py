"""Acceptance criteria, one test each, at the stated tolerances.

Every test prints a single ``PASS`` / ``FAIL`` line (visible in ``pytest -v``
output) before asserting.
"""

import os
import time
from pathlib import Path

import numpy as np
import pytest

from matnet import tensor as T
from matnet.cli import main
from matnet.config import parse_config
from matnet.data import blob_glyphs, moving_digits, stft_spectrogram
from matnet.experiments import run_experiment
from matnet.graph import (AttentionHeadParams, Graph, attention_matrix, chebyshev_graph_filter, cln_aggregate,
                          cln_update, gcn_propagate, init_cln_update, normalized_adjacency, scaled_laplacian)
from matnet.layers import (Mat1Params, TensorMapParams, expand_to_dense, ffn_layer, highway_block, init_mat2,
                           mat1, mat2, parameter_count, resnet_block, tensor_matrix_map)
from matnet.recurrent import (MatrixCell, RecurrentState, Seq2Seq, matrix_seq2seq_parameter_count,
                              vector_seq2seq_parameter_count)
from matnet.training import Adam, ReconstructionTask, Split, StoppingRule, stack_outputs, train_loop

from conftest import gradient_error


@pytest.fixture
def verdict(capsys):
    def emit(number: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
        assert ok, detail

    return emit


def test_criterion_01_low_rank_equivalence(verdict):
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        c1, r1, c2, r2 = rng.integers(1, 9, size=4)
        p = Mat1Params(rng.standard_normal((c1, c2)), rng.standard_normal((r1, r2)), rng.standard_normal((c2, r2)))
        X = rng.standard_normal((c1, r1))
        W, b = expand_to_dense(p)
        for act in ("identity", "tanh", "relu"):
            f = T.activation(act)
            diff = T.vectorize(f(mat1(X, p))) - f(W.T @ T.vectorize(X) + b)
            worst = max(worst, float(np.abs(diff).max()))
    elapsed = time.perf_counter() - start
    verdict(1, worst <= 1e-10 and elapsed < 5.0,
            f"low-rank equivalence max-abs {worst:.2e} (<= 1e-10) in {elapsed:.2f}s (< 5s)")


def _gradient_cases(rng):
    def weighted(fn, shape):
        w = rng.standard_normal(shape)
        return lambda p: T.sum_all(T.hadamard(fn(p), w))

    def mat1p(c1, r1, c2, r2):
        return Mat1Params(rng.standard_normal((c1, c2)), rng.standard_normal((r1, r2)), rng.standard_normal((c2, r2)))

    def cell_case(kind):
        cell = MatrixCell(kind, (3, 2), (2, 3), rng)
        C = rng.standard_normal((2, 3)) if kind == "lstm" else None

        def fn(p):
            state = cell.step(p["X"], RecurrentState(p["H"], C), p["cell"])
            return T.add(state.H, state.C) if kind == "lstm" else state.H

        return weighted(fn, (2, 3)), {"X": rng.standard_normal((3, 2)), "H": rng.standard_normal((2, 3)),
                                      "cell": cell.params}

    g = Graph(5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 2)])
    head = AttentionHeadParams.random(rng, 3, 0.5)
    head.c[...] = 0.2
    cases = {
        "mat1": (weighted(lambda p: T.tanh(mat1(p["X"], p["p"])), (2, 5)),
                 {"X": rng.standard_normal((3, 4)), "p": mat1p(3, 4, 2, 5)}),
        "mat2": (weighted(lambda p: T.tanh(mat2(p["P"], p["Q"], p["p"])), (2, 5)),
                 {"P": rng.standard_normal((3, 4)), "Q": rng.standard_normal((2, 2)),
                  "p": init_mat2(rng, (3, 4), (2, 2), (2, 5))}),
        "highway": (weighted(lambda p: highway_block(p["H"], p["g"], p["c"], "tanh"), (3, 4)),
                    {"H": rng.standard_normal((3, 4)), "g": mat1p(3, 4, 3, 4), "c": mat1p(3, 4, 3, 4)}),
        "resnet": (weighted(lambda p: resnet_block(p["H"], lambda h: ffn_layer(h, p["c"], "tanh")), (3, 4)),
                   {"H": rng.standard_normal((3, 4)), "c": mat1p(3, 4, 3, 4)}),
        "tensor-matrix map": (weighted(lambda p: tensor_matrix_map(p["X"], p["p"]), (2, 5)),
                              {"X": rng.standard_normal((3, 2, 3)),
                               "p": TensorMapParams(rng.standard_normal((3, 2, 2)), rng.standard_normal((3, 3, 5)))}),
        "rnn step": cell_case("rnn"),
        "lstm step": cell_case("lstm"),
        "gru step": cell_case("gru"),
        "cln update": (weighted(lambda p: cln_update(p["H"], cln_aggregate(p["H"], normalized_adjacency(g)),
                                                     p["u"], "tanh"), (5, 3)),
                       {"H": rng.standard_normal((5, 3)), "u": init_cln_update(rng, 3, 3)}),
        "attention head": (weighted(lambda p: T.matmul(attention_matrix(p["H"], p["head"], g), p["H"]), (5, 3)),
                           {"H": rng.standard_normal((5, 3)), "head": head}),
        "gcn layer": (weighted(lambda p: T.relu(gcn_propagate(p["X"], g, p["Theta"])), (5, 2)),
                      {"X": rng.standard_normal((5, 4)), "Theta": rng.standard_normal((4, 2))}),
    }
    return cases


def test_criterion_02_gradient_suite(verdict):
    start = time.perf_counter()
    errors = {name: gradient_error(fn, params, joint=True) for name, (fn, params) in _gradient_cases(np.random.default_rng(202)).items()}
    elapsed = time.perf_counter() - start
    worst = max(errors, key=errors.get)
    bad = [n for n, e in errors.items() if e > 1e-4]
    verdict(2, not bad and elapsed < 60.0,
            f"{len(errors)} layer/cell gradient checks, worst {worst} at {errors[worst]:.2e} (<= 1e-4), "
            f"{elapsed:.2f}s (< 60s)" + (f"; failing: {', '.join(bad)}" if bad else ""))


def test_criterion_03_parameter_counts(verdict):
    layer = parameter_count(28, 28, 50, 50)
    matrix = matrix_seq2seq_parameter_count((64, 64), (200, 200), "rnn")
    vector = vector_seq2seq_parameter_count(64 * 64, 2000, "rnn")
    ok = (layer == (5300, 1_962_500) and 250_000 <= matrix <= 500_000 and 20_000_000 <= vector <= 35_000_000)
    verdict(3, ok, f"layer {layer.matrix_count} vs {layer.vector_count}; "
                   f"seq2seq matrix {matrix:,} in [250K, 500K], vector {vector:,} in [20M, 35M]")


def _mnist_paths():
    root = os.environ.get("MATNET_MNIST_DIR")
    if not root:
        return None
    for suffix in ("", ".gz"):
        images = Path(root) / f"train-images-idx3-ubyte{suffix}"
        labels = Path(root) / f"train-labels-idx1-ubyte{suffix}"
        if images.exists() and labels.exists():
            return images, labels
    return None


DEEP_FFN = """
[experiment]
kind = ffn-classify
name = deep30
seed = 0

[model]
input_shape = 28x28
hidden = 20x20
depth = 30
activation = relu
batch_norm = false

[data]
n_train = 5000

[stopping]
epochs = 30
patience = 30
"""


def test_criterion_04_deep_matrix_ffn_trains(verdict):
    text = DEEP_FFN
    source = "synthetic digits"
    mnist = _mnist_paths()
    if mnist:
        text = text.replace("n_train = 5000", f"source = idx\nimages = {mnist[0]}\nlabels = {mnist[1]}\nn_train = 5000")
        source = "MNIST"
    cfg = parse_config(text)
    start = time.perf_counter()
    result = run_experiment(cfg)
    elapsed = time.perf_counter() - start
    losses = np.array([e.train_loss for e in result.record.epochs])
    means = losses.reshape(6, 5).mean(axis=1)
    monotone = bool(np.all(np.diff(means) < 0))
    train_error = 1.0 - result.record.epochs[-1].metric  # no val split: metric is on the training set
    ok = len(losses) == 30 and monotone and train_error <= 0.15 and elapsed < 900
    verdict(4, ok, f"30-layer 20x20 FFN on 5000 {source}: 5-epoch loss means "
                   f"{' > '.join(f'{m:.4f}' for m in means)} ({'strictly decreasing' if monotone else 'NOT monotone'}), "
                   f"train error {train_error:.3f} (<= 0.15), {elapsed:.0f}s (< 900s)")


def test_criterion_05_cln_equivalence(verdict):
    rng = np.random.default_rng(505)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(1, 13))
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.35]
        H = rng.standard_normal((n, int(rng.integers(1, 6))))
        # independent oracle: neighbor sets straight from the edge list
        nbrs = {i: set() for i in range(n)}
        for i, j in pairs:
            nbrs[i].add(j)
            nbrs[j].add(i)
        expect = np.zeros_like(H)
        for i in range(n):
            if nbrs[i]:
                expect[i] = np.sum([H[j] for j in sorted(nbrs[i])], axis=0) / len(nbrs[i])
        got = cln_aggregate(H, normalized_adjacency(Graph(n, pairs)))
        worst = max(worst, float(np.abs(got - expect).max()))
    elapsed = time.perf_counter() - start
    verdict(5, worst <= 1e-12 and elapsed < 1.0,
            f"matrix aggregation vs per-node mean on 50 graphs: max-abs {worst:.2e} (<= 1e-12), {elapsed:.3f}s (< 1s)")


def test_criterion_06_gcn_and_chebyshev(verdict):
    g = Graph(2, [(0, 1)])
    out = gcn_propagate(np.array([[1.0], [0.0]]), g, np.array([[1.0]]))
    exact = np.array_equal(out, [[0.5], [0.5]])
    L = scaled_laplacian(g)
    x = np.array([0.3, -1.7])
    t0, t1 = 0.9, -0.4
    cheb = float(np.abs(chebyshev_graph_filter(L, x, [t0, t1]) - (t0 * x + t1 * (L @ x))).max())
    verdict(6, exact and cheb <= 1e-12,
            f"two-node GCN output {out.ravel().tolist()} (exactly [0.5, 0.5]: {exact}); "
            f"Chebyshev K=2 max-abs {cheb:.1e} (<= 1e-12)")


def test_criterion_07_stft(verdict):
    rng = np.random.default_rng(707)
    shape = stft_spectrogram(rng.standard_normal((64, 256))).shape
    n = np.arange(256)
    tone = stft_spectrogram(np.cos(2 * np.pi * 4 * n / 64)[None, :])
    peaks = tone[0].argmax(axis=0)
    verdict(7, shape == (64, 32, 25) and bool(np.all(peaks == 3)),
            f"64x256 -> {shape} (expect (64, 32, 25)); bin-4 tone peaks at row {sorted(set(peaks.tolist()))} (expect [3])")


def test_criterion_08_seq2seq_smoke(verdict):
    rng = np.random.default_rng(808)
    seqs = moving_digits(blob_glyphs(8, rng), 32, rng, length=20, frame=16, n_digits=1).sequences
    X, Y = seqs[:, :15], seqs[:, 15:]
    net = Seq2Seq((16, 16), (10, 10), rng, cell="lstm")
    task = ReconstructionTask(net, forward=lambda p, x, tr, r: stack_outputs(net.forward(p, x, 5, tr, r)))
    start = time.perf_counter()
    before = task.evaluate(X, Y)[1]
    record = train_loop(task, Split((X, Y)), Adam(), None, 100, rng, batch_size=32)
    after = task.evaluate(X, Y)[1]
    elapsed = time.perf_counter() - start
    ok = record.steps == 100 and after < 0.5 * before and elapsed < 300
    verdict(8, ok, f"matrix LSTM seq2seq 15->5 on 16x16: MSE {before:.4f} -> {after:.4f} after {record.steps} Adam "
                   f"steps (ratio {after / before:.2f} < 0.5), {elapsed:.0f}s (< 300s)")


EEG = """
[experiment]
kind = spectrogram-classify
name = eeg
seed = 0

[model]
hidden = 20x20
cell = lstm
{front}

[data]
n_train = 120
n_val = 40
n_test = 40

[stopping]
epochs = 30
"""


def test_criterion_09_spectrogram_classification(verdict):
    plain = run_experiment(parse_config(EEG.format(front=""))).summary
    mapped = run_experiment(parse_config(EEG.format(
        front="front_end = tensor-map\nfront_shape = 16x16\nfront_maps = 8"))).summary
    a, b = plain["test_metric"], mapped["test_metric"]
    verdict(9, a >= 0.95 and b >= a,
            f"200 synthetic trials: matrix LSTM test accuracy {a:.3f} (>= 0.95), "
            f"tensor-matrix front end {b:.3f} (>= plain)")


def test_criterion_10_early_stopping(verdict):
    class Scripted:
        metric_name = "accuracy"
        params = {"w": np.zeros((1, 1))}
        script = [1.0] + [1.0] * 10 + [0.1] * 5

        def __init__(self):
            self.calls = 0

        def loss(self, p, X, y, training=False, rng=None):
            return T.sum_all(T.hadamard(p["w"], p["w"]))

        def evaluate(self, X, y):
            self.calls += 1
            return self.script[self.calls - 1], 0.0

    task = Scripted()
    data = Split((np.zeros((2, 1, 1)), np.zeros(2)), (np.zeros((1, 1, 1)), np.zeros(1)))
    record = train_loop(task, data, Adam(), StoppingRule(patience=10), 100, np.random.default_rng(0))
    ok = record.stopped_early and len(record.epochs) == 11
    verdict(10, ok, f"val losses [1.0] + 10 x [1.0]: stopped={record.stopped_early} after {len(record.epochs)} "
                    f"epochs (expect stop at the 10th non-improving epoch, 11 total)")


DETERMINISM = {
    "ffn-classify": "[model]\ninput_shape = 10x10\nhidden = 5x5\ndepth = 3\nskip = highway\nhidden_dropout = 0.1\n"
                    "[data]\nn_train = 64\nn_val = 16\n",
    "seq2seq": "[model]\nhidden = 4x4\n[data]\nframe = 8\nseq_len = 6\nenc_len = 4\nn_digits = 1\nn_train = 8\nn_val = 4\n",
    "graph-nodes": "[model]\ngraph_model = attention-cln\nhidden_units = 4\nheight = 2\nheads = 2\nneighbors = 3\n"
                   "[data]\nnodes = 40\nn_classes = 2\nfeature_dim = 6\nn_val = 8\nn_test = 8\n",
}


def test_criterion_11_determinism(verdict, tmp_path, capsys):
    identical = {}
    for kind, body in DETERMINISM.items():
        cfg = tmp_path / f"{kind}.ini"
        cfg.write_text(f"[experiment]\nkind = {kind}\nseed = 11\n[stopping]\nepochs = 3\n" + body)
        outs = [tmp_path / f"{kind}-{k}" for k in range(2)]
        codes = [main(["run", str(cfg), "--out", str(o)]) for o in outs]
        blobs = [(o / "metrics.jsonl").read_bytes() for o in outs]
        identical[kind] = codes == [0, 0] and blobs[0] == blobs[1] and len(blobs[0]) > 0
    capsys.readouterr()
    verdict(11, all(identical.values()),
            "rerun with same config and seed gives byte-identical metrics: "
            + ", ".join(f"{k}={v}" for k, v in identical.items()))
