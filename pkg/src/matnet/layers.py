"""Feed-forward matrix layers.

The building block maps a ``c1 x r1`` matrix to a ``c2 x r2`` matrix with a
row-mapping ``U`` (c1 x c2), a column-mapping ``V`` (r1 x r2) and a bias
``B`` (c2 x r2)::

    mat1(X) = U^T X V + B

All functions here work on plain arrays and on tape nodes alike, and accept a
leading batch axis on the input.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import tensor as T
from .tensor import ShapeError, value_of


@dataclass
class Mat1Params:
    U: np.ndarray  # c1 x c2
    V: np.ndarray  # r1 x r2
    B: np.ndarray  # c2 x r2

    @property
    def in_shape(self) -> tuple[int, int]:
        return (value_of(self.U).shape[0], value_of(self.V).shape[0])

    @property
    def out_shape(self) -> tuple[int, int]:
        return value_of(self.B).shape

    def parameter_count(self) -> int:
        return sum(value_of(a).size for a in (self.U, self.V, self.B))


@dataclass
class Mat2Params:
    Up: np.ndarray
    Vp: np.ndarray
    Uq: np.ndarray
    Vq: np.ndarray
    B: np.ndarray

    def parameter_count(self) -> int:
        return sum(value_of(a).size for a in (self.Up, self.Vp, self.Uq, self.Vq, self.B))


@dataclass
class TensorMapParams:
    U: np.ndarray  # m x c1 x c2
    V: np.ndarray  # m x r1 x r2

    def parameter_count(self) -> int:
        return value_of(self.U).size + value_of(self.V).size


class ParamCount(NamedTuple):
    matrix_count: int
    vector_count: int


# ---------------------------------------------------------------------------
# Initialization


def glorot(rng: np.random.Generator, rows: int, cols: int, gain: float = 1.0) -> np.ndarray:
    a = gain * np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-a, a, size=(rows, cols))


def init_mat1(rng: np.random.Generator, in_shape: Sequence[int], out_shape: Sequence[int],
              gain: float = 1.0) -> Mat1Params:
    """Uniform Glorot per factor, zero bias.

    ``gain`` multiplies each factor's range, so the composite map's scale
    moves by ``gain**2``.
    """
    (c1, r1), (c2, r2) = in_shape, out_shape
    return Mat1Params(glorot(rng, c1, c2, gain), glorot(rng, r1, r2, gain), np.zeros((c2, r2)))


def init_mat2(rng: np.random.Generator, p_shape: Sequence[int], q_shape: Sequence[int],
              out_shape: Sequence[int], gain: float = 1.0) -> Mat2Params:
    (cp, rp), (cq, rq), (c2, r2) = p_shape, q_shape, out_shape
    return Mat2Params(
        glorot(rng, cp, c2, gain), glorot(rng, rp, r2, gain),
        glorot(rng, cq, c2, gain), glorot(rng, rq, r2, gain),
        np.zeros((c2, r2)),
    )


def init_tensor_map(rng: np.random.Generator, maps: int, in_shape: Sequence[int],
                    out_shape: Sequence[int]) -> TensorMapParams:
    (c1, r1), (c2, r2) = in_shape, out_shape
    return TensorMapParams(
        np.stack([glorot(rng, c1, c2) for _ in range(maps)]) / np.sqrt(maps),
        np.stack([glorot(rng, r1, r2) for _ in range(maps)]),
    )


# ---------------------------------------------------------------------------
# Mappings


def bilinear(X, U, V):
    """U^T X V without bias."""
    xs, us, vs = value_of(X).shape, value_of(U).shape, value_of(V).shape
    if xs[-2] != us[-2] or xs[-1] != vs[-2]:
        raise ShapeError("bilinear map: X must be U.rows x V.rows", xs, us, vs)
    return T.matmul(T.matmul(T.transpose(U), X), V)


def mat1(X, p: Mat1Params):
    """U^T X V + B."""
    out = bilinear(X, p.U, p.V)
    if value_of(out).shape[-2:] != value_of(p.B).shape:
        raise ShapeError("bias shape differs from U^T X V", value_of(out).shape, value_of(p.B).shape)
    return T.add(out, p.B)


def mat2(P, Q, p: Mat2Params):
    """Up^T P Vp + Uq^T Q Vq + B."""
    a = bilinear(P, p.Up, p.Vp)
    b = bilinear(Q, p.Uq, p.Vq)
    if value_of(a).shape[-2:] != value_of(b).shape[-2:]:
        raise ShapeError("mat2 branches disagree", value_of(a).shape, value_of(b).shape)
    return T.add(T.add(a, b), p.B)


def ffn_layer(X, p: Mat1Params, act="relu"):
    return T.activation(act)(mat1(X, p))


def parameter_count(c1: int, r1: int, c2: int, r2: int) -> ParamCount:
    """Parameters of a c1 x r1 -> c2 x r2 layer: matrix form vs the dense vector form."""
    if min(c1, r1, c2, r2) < 1:
        raise ValueError("dimensions must be >= 1")
    return ParamCount(c1 * c2 + r1 * r2 + c2 * r2, c1 * r1 * c2 * r2 + c2 * r2)


def expand_to_dense(p: Mat1Params) -> tuple[np.ndarray, np.ndarray]:
    """The dense ``(c1*r1) x (c2*r2)`` weight and bias equivalent to ``p``.

    Column ``i*r2 + j`` is the row-major flattening of the outer product
    ``U[:, i] V[:, j]^T``, so ``W.T @ vectorize(X) + b`` equals
    ``vectorize(U^T X V + B)``.
    """
    U, V, B = (value_of(a) for a in (p.U, p.V, p.B))
    c1, c2 = U.shape
    r1, r2 = V.shape
    W = np.empty((c1 * r1, c2 * r2))
    for i in range(c2):
        for j in range(r2):
            W[:, i * r2 + j] = np.outer(U[:, i], V[:, j]).reshape(-1)
    return W, B.reshape(-1, 1).copy()


# ---------------------------------------------------------------------------
# Skip connections


def highway_block(H_prev, gate: Mat1Params, cand: Mat1Params, act="relu"):
    """(1 - Z) * H_prev + Z * act(mat1(H_prev; cand)),  Z = sigm(mat1(H_prev; gate))."""
    Z = T.sigmoid(mat1(H_prev, gate))
    H_cand = T.activation(act)(mat1(H_prev, cand))
    hs, zs = value_of(H_prev).shape, value_of(Z).shape
    if hs[-2:] != zs[-2:]:
        raise ShapeError("highway gate must preserve the hidden shape", hs, zs)
    return T.add(T.hadamard(T.sub(1.0, Z), H_prev), T.hadamard(Z, H_cand))


def resnet_block(H_prev, residual: Callable):
    """H_prev + F(H_prev) for a shape-preserving subnet F."""
    F = residual(H_prev)
    if value_of(F).shape != value_of(H_prev).shape:
        raise ShapeError("residual subnet changed the shape", value_of(H_prev).shape, value_of(F).shape)
    return T.add(H_prev, F)


# ---------------------------------------------------------------------------
# Tensor -> matrix


def tensor_matrix_map(X, p: TensorMapParams):
    """sum_i U_i^T X_i V_i over the map axis; X is (m, c1, r1) or (N, m, c1, r1)."""
    xs, us, vs = value_of(X).shape, value_of(p.U).shape, value_of(p.V).shape
    if len(xs) < 3 or xs[-3] != us[0] or us[0] != vs[0]:
        raise ShapeError("tensor map: map counts differ", xs, us, vs)
    if xs[-2] != us[1] or xs[-1] != vs[1]:
        raise ShapeError("tensor map: map shape mismatch", xs, us, vs)
    per_map = T.matmul(T.matmul(T.transpose(p.U), X), p.V)
    return T.sum_axis(per_map, -3)


# ---------------------------------------------------------------------------
# Attention read


def attention_read(P, alphas, tol: float = 1e-9):
    """Read rows of ``P`` with the simplex weights in each column of ``alphas``.

    ``alphas`` is ``rows(P) x k``; row j of the output is ``alphas[:, j]^T P``.
    """
    a = value_of(alphas)
    if a.ndim != 2 or a.shape[0] != value_of(P).shape[-2]:
        raise ShapeError("attention weights must be rows(P) x k", a.shape, value_of(P).shape)
    if (a < -tol).any() or (np.abs(a.sum(axis=0) - 1.0) > tol).any():
        raise ValueError("attention weights must lie on the probability simplex")
    return T.matmul(T.transpose(alphas), P)


# ---------------------------------------------------------------------------
# Batch norm and dropout


@dataclass
class BatchNormState:
    """Running statistics for :func:`batch_norm` (not trainable)."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1

    @classmethod
    def create(cls, shape: Sequence[int], momentum: float = 0.1) -> "BatchNormState":
        return cls(np.zeros(tuple(shape)), np.ones(tuple(shape)), momentum)


def batch_norm(X, gamma, beta, state: BatchNormState | None = None,
               eps: float = 1e-5, training: bool = True):
    """Normalize each matrix entry across the batch axis, then scale and shift.

    ``X`` is ``(N, c, r)``.  In training mode the batch statistics are used and
    ``state``'s running statistics are updated; in eval mode the running
    statistics are used instead.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = value_of(X)
    g, b = value_of(gamma), value_of(beta)
    if training:
        if x.ndim != 3 or x.shape[0] == 0:
            raise ValueError("training-mode batch norm needs a nonempty (N, c, r) batch")
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        if state is not None:
            m = state.momentum
            n = x.shape[0]
            unbiased = var * n / (n - 1) if n > 1 else var
            state.running_mean = (1 - m) * state.running_mean + m * mean
            state.running_var = (1 - m) * state.running_var + m * unbiased
    else:
        if state is None:
            raise ValueError("eval-mode batch norm needs running statistics")
        mean, var = state.running_mean, state.running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x - mean) * inv_std
    out = g * x_hat + b

    def back(grad):
        g_gamma = (grad * x_hat).reshape(-1, *g.shape).sum(axis=0)
        g_beta = grad.reshape(-1, *g.shape).sum(axis=0)
        gx_hat = grad * g
        if training:
            n = x.shape[0]
            gx = inv_std / n * (n * gx_hat - gx_hat.sum(axis=0) - x_hat * (gx_hat * x_hat).sum(axis=0))
        else:
            gx = gx_hat * inv_std
        return gx, g_gamma, g_beta

    return T.record(out, (X, gamma, beta), back)


def dropout(X, rate: float, rng: np.random.Generator | None = None, training: bool = True):
    """Inverted dropout: zero with probability ``rate``, rescale survivors."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return X
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    keep = rng.random(value_of(X).shape) >= rate
    return T.hadamard(X, keep / (1.0 - rate))


# ---------------------------------------------------------------------------
# Networks


@dataclass
class FFNParams:
    layers: list  # Mat1Params, or (gate, cand) pairs for highway
    head: Mat1Params | None = None
    norms: list = field(default_factory=list)  # {"gamma", "beta"} per hidden layer


class MatrixFFN:
    """A stack of matrix layers with optional skip connections and a matrix head.

    With ``n_classes`` set the head maps the last hidden matrix to a
    ``1 x n_classes`` row of logits via ``U (c x 1)`` and ``V (r x K)``.
    """

    def __init__(self, in_shape, hidden, depth: int, rng: np.random.Generator,
                 act="relu", skip: str = "none", batch_norm: bool = False,
                 n_classes: int | None = None, input_dropout: float = 0.0,
                 hidden_dropout: float = 0.0, gain: float = 1.0):
        if depth < 1:
            raise ValueError("depth must be >= 1")
        if skip not in ("none", "highway", "resnet"):
            raise ValueError(f"unknown skip connection {skip!r}")
        self.in_shape = tuple(in_shape)
        self.hidden = tuple(hidden)
        self.depth = depth
        self.act = act
        self.skip = skip
        self.use_bn = batch_norm
        self.input_dropout = input_dropout
        self.hidden_dropout = hidden_dropout
        layers = [init_mat1(rng, self.in_shape, self.hidden, gain)]
        for _ in range(depth - 1):
            if skip == "highway":
                gate = init_mat1(rng, self.hidden, self.hidden, gain)
                gate.B[...] = -1.0  # start biased toward carrying the input
                layers.append([gate, init_mat1(rng, self.hidden, self.hidden, gain)])
            else:
                layers.append(init_mat1(rng, self.hidden, self.hidden, gain))
        head = None
        if n_classes is not None:
            head = init_mat1(rng, self.hidden, (1, n_classes))
        norms = []
        self.bn_stats: list[BatchNormState] = []
        if batch_norm:
            norms = [{"gamma": np.ones(self.hidden), "beta": np.zeros(self.hidden)} for _ in range(depth)]
            self.bn_stats = [BatchNormState.create(self.hidden) for _ in range(depth)]
        self.params = FFNParams(layers, head, norms)

    def hidden_forward(self, p: FFNParams, X, training: bool = False, rng=None):
        H = dropout(X, self.input_dropout, rng, training)
        for k, layer in enumerate(p.layers):
            if k == 0 or self.skip == "none":
                H = mat1(H, layer)
                if self.use_bn:
                    norm = p.norms[k]
                    H = batch_norm(H, norm["gamma"], norm["beta"], self.bn_stats[k], training=training)
                H = T.activation(self.act)(H)
            elif self.skip == "highway":
                H = highway_block(H, layer[0], layer[1], self.act)
            else:
                H = resnet_block(H, lambda h, layer=layer: ffn_layer(h, layer, self.act))
            H = dropout(H, self.hidden_dropout, rng, training)
        return H

    def forward(self, p: FFNParams, X, training: bool = False, rng=None):
        H = self.hidden_forward(p, X, training, rng)
        if p.head is None:
            return H
        logits = mat1(H, p.head)  # (N, 1, K)
        shape = value_of(logits).shape
        return T.reshape(logits, shape[:-2] + (shape[-1],))


class MatrixAutoencoder:
    """Deep matrix autoencoder with tied weights.

    The encoder maps ``X -> U^T X V + B``; the mirrored decoder layer reuses
    the same ``U, V`` as ``U Y V^T + B'`` with its own bias.
    """

    def __init__(self, in_shape, hidden, depth: int, rng: np.random.Generator,
                 act="relu", out_act="sigmoid"):
        if depth < 1:
            raise ValueError("depth must be >= 1")
        self.in_shape = tuple(in_shape)
        self.hidden = tuple(hidden)
        self.act = act
        self.out_act = out_act
        shapes = [self.in_shape] + [self.hidden] * depth
        enc = [init_mat1(rng, shapes[k], shapes[k + 1]) for k in range(depth)]
        dec_bias = [np.zeros(shapes[k]) for k in range(depth)]
        self.params = {"encoder": enc, "decoder_bias": dec_bias}

    def forward(self, p, X, training: bool = False, rng=None):
        H = X
        for layer in p["encoder"]:
            H = ffn_layer(H, layer, self.act)
        n = len(p["encoder"])
        for k in reversed(range(n)):
            layer = p["encoder"][k]
            H = T.add(T.matmul(T.matmul(layer.U, H), T.transpose(layer.V)), p["decoder_bias"][k])
            H = T.activation(self.out_act if k == 0 else self.act)(H)
        return H
