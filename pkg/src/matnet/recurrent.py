"""Matrix RNN, LSTM and GRU cells, unrolling, and a seq2seq encoder-decoder.

Every gate is a two-branch matrix mapping of the current input and the
previous hidden matrix (see :func:`matnet.layers.mat2`), so hidden states
and LSTM memory cells are matrices throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .layers import (Mat1Params, Mat2Params, dropout, init_mat1, init_mat2, init_tensor_map, mat1,
                     mat2, tensor_matrix_map)
from .tensor import ShapeError, value_of


@dataclass
class RecurrentState:
    H: object
    C: object = None


@dataclass
class LSTMParams:
    i: Mat2Params
    f: Mat2Params
    o: Mat2Params
    c: Mat2Params


@dataclass
class GRUParams:
    z: Mat2Params
    r: Mat2Params
    h: Mat2Params


GATES = {"rnn": 1, "lstm": 4, "gru": 3}


def rnn_step(X, H_prev, p: Mat2Params, act="tanh"):
    return T.activation(act)(mat2(X, H_prev, p))


def lstm_step(X, state: RecurrentState, p: LSTMParams) -> RecurrentState:
    H_prev, C_prev = state.H, state.C
    I = T.sigmoid(mat2(X, H_prev, p.i))
    F = T.sigmoid(mat2(X, H_prev, p.f))
    O = T.sigmoid(mat2(X, H_prev, p.o))
    C_hat = T.tanh(mat2(X, H_prev, p.c))
    if value_of(C_prev).shape[-2:] != value_of(I).shape[-2:]:
        raise ShapeError("memory cell shape differs from gate shape", value_of(C_prev).shape, value_of(I).shape)
    C = T.add(T.hadamard(F, C_prev), T.hadamard(I, C_hat))
    H = T.hadamard(O, T.tanh(C))
    return RecurrentState(H, C)


def gru_step(X, H_prev, p: GRUParams, act="tanh"):
    # Interpolates toward the candidate state, i.e. the usual GRU update.
    Z = T.sigmoid(mat2(X, H_prev, p.z))
    R = T.sigmoid(mat2(X, H_prev, p.r))
    H_cand = T.activation(act)(mat2(X, T.hadamard(R, H_prev), p.h))
    return T.add(T.hadamard(T.sub(1.0, Z), H_prev), T.hadamard(Z, H_cand))


class MatrixCell:
    """A recurrent cell of kind ``rnn``, ``lstm`` or ``gru`` with its parameters."""

    def __init__(self, kind: str, input_shape, hidden_shape, rng: np.random.Generator,
                 act="tanh", gain: float = 1.0):
        if kind not in GATES:
            raise ValueError(f"unknown cell kind {kind!r}; expected one of {sorted(GATES)}")
        self.kind = kind
        self.input_shape = tuple(input_shape)
        self.hidden_shape = tuple(hidden_shape)
        self.act = act

        def gate():
            return init_mat2(rng, self.input_shape, self.hidden_shape, self.hidden_shape, gain)

        if kind == "rnn":
            self.params = gate()
        elif kind == "lstm":
            self.params = LSTMParams(gate(), gate(), gate(), gate())
        else:
            self.params = GRUParams(gate(), gate(), gate())

    def zero_state(self, batch_shape: tuple[int, ...] = ()) -> RecurrentState:
        H = np.zeros(batch_shape + self.hidden_shape)
        return RecurrentState(H, H.copy() if self.kind == "lstm" else None)

    def step(self, X, state: RecurrentState, params=None) -> RecurrentState:
        p = self.params if params is None else params
        if self.kind == "lstm":
            return lstm_step(X, state, p)
        if self.kind == "gru":
            return RecurrentState(gru_step(X, state.H, p, self.act))
        return RecurrentState(rnn_step(X, state.H, p, self.act))

    def parameter_count(self) -> int:
        return sum(a.size for a in T.named_arrays(self.params).values())


def unroll(cell: MatrixCell, inputs: Sequence, H0=None, C0=None, params=None) -> list[RecurrentState]:
    """Apply ``cell`` along ``inputs`` and return every state (H0 excluded).

    Missing initial states are zero matrices.  With the inputs on a tape the
    whole chain is recorded, so a backward pass is full BPTT.
    """
    if len(inputs) < 1:
        raise ValueError("need at least one input")
    shape = value_of(inputs[0]).shape
    for k, X in enumerate(inputs):
        if value_of(X).shape != shape:
            raise ShapeError(f"input {k} has a different shape", value_of(X).shape, shape)
    state = cell.zero_state(shape[:-2])
    if H0 is not None:
        state.H = H0
    if C0 is not None:
        state.C = C0
    states = []
    for X in inputs:
        state = cell.step(X, state, params)
        states.append(state)
    return states


def time_major(X) -> list:
    """Split an ``(N, T, ...)`` array into a list of T ``(N, ...)`` arrays."""
    X = np.asarray(X, dtype=np.float64)
    return [X[:, t] for t in range(X.shape[1])]


def seq2seq_forward(encoder: MatrixCell, decoder: MatrixCell, head: Mat1Params, inputs: Sequence,
                    horizon: int, out_act="sigmoid", enc_params=None, dec_params=None,
                    hidden_dropout: float = 0.0, rng=None, training: bool = False) -> list:
    """Encode ``inputs`` and emit ``horizon`` predicted matrices.

    The decoder starts from the final encoder state and is fed zero matrices
    (no readout of its own predictions).  Each output is
    ``out_act(mat1(H_t; head))``.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if encoder.hidden_shape != decoder.hidden_shape:
        raise ShapeError("encoder and decoder hidden shapes differ", encoder.hidden_shape, decoder.hidden_shape)
    states = unroll(encoder, inputs, params=enc_params)
    state = states[-1]
    if (encoder.kind == "lstm") != (decoder.kind == "lstm"):
        state = RecurrentState(state.H, decoder.zero_state(value_of(state.H).shape[:-2]).C)
    batch = value_of(inputs[0]).shape[:-2]
    zero_in = np.zeros(batch + decoder.input_shape)
    outputs = []
    act = T.activation(out_act)
    for _ in range(horizon):
        state = decoder.step(zero_in, state, dec_params)
        H = dropout(state.H, hidden_dropout, rng, training)
        outputs.append(act(mat1(H, head)))
    return outputs


class Seq2Seq:
    """Matrix seq2seq model predicting the last frames of a sequence."""

    def __init__(self, frame_shape, hidden, rng: np.random.Generator, cell: str = "lstm",
                 act="tanh", out_act="sigmoid", input_dropout: float = 0.0, hidden_dropout: float = 0.0):
        self.frame_shape = tuple(frame_shape)
        self.encoder = MatrixCell(cell, frame_shape, hidden, rng, act)
        self.decoder = MatrixCell(cell, frame_shape, hidden, rng, act)
        self.out_act = out_act
        self.input_dropout = input_dropout
        self.hidden_dropout = hidden_dropout
        self.params = {
            "encoder": self.encoder.params,
            "decoder": self.decoder.params,
            "head": init_mat1(rng, hidden, frame_shape),
        }

    def forward(self, p, X, horizon: int, training: bool = False, rng=None) -> list:
        inputs = [dropout(x, self.input_dropout, rng, training) for x in time_major(X)]
        return seq2seq_forward(self.encoder, self.decoder, p["head"], inputs, horizon, self.out_act,
                               p["encoder"], p["decoder"], self.hidden_dropout, rng, training)


class SequenceClassifier:
    """Matrix recurrent classifier over a sequence of matrices (or 3-tensors).

    With ``front_shape`` set, each time step's ``(m, a, b)`` tensor is first
    projected to a ``front_shape`` matrix by a tensor-matrix mapping.  The
    final hidden matrix is mapped to a ``1 x n_classes`` logit row.
    """

    def __init__(self, input_shape, hidden, n_classes: int, rng: np.random.Generator,
                 cell: str = "lstm", act="tanh", front_shape=None, input_dropout: float = 0.0):
        input_shape = tuple(input_shape)
        self.input_dropout = input_dropout
        self.params = {}
        if front_shape is not None:
            if len(input_shape) != 3:
                raise ValueError("a tensor-matrix front end needs (m, a, b) inputs")
            self.params["front"] = init_tensor_map(rng, input_shape[0], input_shape[1:], front_shape)
            cell_in = tuple(front_shape)
        else:
            cell_in = input_shape
        self.cell = MatrixCell(cell, cell_in, hidden, rng, act)
        self.params["cell"] = self.cell.params
        self.params["head"] = init_mat1(rng, hidden, (1, n_classes))

    def forward(self, p, X, training: bool = False, rng=None):
        steps = time_major(X)
        if "front" in p:
            steps = [tensor_matrix_map(x, p["front"]) for x in steps]
        steps = [dropout(x, self.input_dropout, rng, training) for x in steps]
        H = unroll(self.cell, steps, params=p["cell"])[-1].H
        logits = mat1(H, p["head"])
        shape = value_of(logits).shape
        return T.reshape(logits, shape[:-2] + (shape[-1],))


def matrix_seq2seq_parameter_count(frame_shape, hidden_shape, cell: str = "rnn") -> int:
    """Encoder + decoder + output head of the matrix seq2seq model."""
    (cx, rx), (ch, rh) = frame_shape, hidden_shape
    per_gate = cx * ch + rx * rh + ch * ch + rh * rh + ch * rh
    head = ch * cx + rh * rx + cx * rx
    return 2 * GATES[cell] * per_gate + head


def vector_seq2seq_parameter_count(input_size: int, hidden_size: int, cell: str = "rnn") -> int:
    """Same topology with dense vector layers."""
    per_gate = input_size * hidden_size + hidden_size * hidden_size + hidden_size
    head = hidden_size * input_size + input_size
    return 2 * GATES[cell] * per_gate + head
