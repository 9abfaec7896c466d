"""Graph propagation in matrix form.

Node states are stacked row-wise into a ``|V| x d`` matrix ``H``, so neighbor
aggregation is a left multiplication (``A_norm @ H``) and the per-node update
is a right multiplication.  Covers Column Networks with mean or multi-head
attention aggregation, a flattened-neighbor vector baseline, and GCN
propagation with its Chebyshev background.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .layers import glorot
from .tensor import ShapeError, value_of

DENSE_THRESHOLD = 4096


@dataclass
class Graph:
    node_count: int
    edges: np.ndarray  # (E, 2) undirected pairs, stored once with i < j
    features: np.ndarray | None = None
    labels: np.ndarray | None = None
    split: np.ndarray | None = None  # per-node "train" / "val" / "test"
    _neighbors: list = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= self.node_count):
            bad = edges[(edges < 0).any(axis=1) | (edges >= self.node_count).any(axis=1)][0]
            raise ValueError(f"edge {tuple(bad)} has a node id outside [0, {self.node_count})")
        edges = edges[edges[:, 0] != edges[:, 1]]
        edges = np.sort(edges, axis=1)
        self.edges = np.unique(edges, axis=0) if edges.size else edges.reshape(0, 2)
        if self.features is not None:
            self.features = np.asarray(self.features, dtype=np.float64)
            if self.features.shape[0] != self.node_count:
                raise ValueError(f"feature matrix has {self.features.shape[0]} rows "
                                 f"for {self.node_count} nodes")

    @property
    def neighbors(self) -> list[np.ndarray]:
        if self._neighbors is None:
            adj = [[] for _ in range(self.node_count)]
            for i, j in self.edges:
                adj[i].append(j)
                adj[j].append(i)
            self._neighbors = [np.array(sorted(a), dtype=np.int64) for a in adj]
        return self._neighbors

    @property
    def degrees(self) -> np.ndarray:
        return np.array([len(n) for n in self.neighbors], dtype=np.int64)

    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.node_count, self.node_count))
        if len(self.edges):
            A[self.edges[:, 0], self.edges[:, 1]] = 1.0
            A[self.edges[:, 1], self.edges[:, 0]] = 1.0
        return A

    def nodes_in(self, part: str) -> np.ndarray:
        if self.split is None:
            raise ValueError("graph has no split assignment")
        return np.flatnonzero(np.asarray(self.split) == part)


# ---------------------------------------------------------------------------
# Mean aggregation


def normalized_adjacency(g: Graph, sampled: Sequence[np.ndarray] | None = None) -> np.ndarray:
    """Row i holds 1/|N(i)| on i's neighbors; isolated nodes give a zero row."""
    nbrs = g.neighbors if sampled is None else sampled
    A = np.zeros((g.node_count, g.node_count))
    for i, n in enumerate(nbrs):
        if len(n):
            A[i, n] = 1.0 / len(n)
    return A


def cln_aggregate(H, A_norm):
    """Neighbor means of the rows of ``H``: ``A_norm @ H``."""
    hs, As = value_of(H).shape, value_of(A_norm).shape
    if len(As) != 2 or As[0] != As[1] or As[1] != hs[-2]:
        raise ShapeError("aggregation needs a |V| x |V| matrix and |V| x d states", As, hs)
    return T.matmul(A_norm, H)


def neighbor_mean(H, g: Graph, sampled: Sequence[np.ndarray] | None = None,
                  dense_threshold: int = DENSE_THRESHOLD):
    """Mean aggregation; builds the dense matrix only for small graphs."""
    if g.node_count <= dense_threshold:
        return cln_aggregate(H, normalized_adjacency(g, sampled))
    nbrs = g.neighbors if sampled is None else sampled
    rows = np.concatenate([np.full(len(n), i) for i, n in enumerate(nbrs)]).astype(np.intp)
    cols = np.concatenate(nbrs).astype(np.intp)
    w = np.concatenate([np.full(len(n), 1.0 / len(n)) for n in nbrs if len(n)])
    hv = value_of(H)
    out = np.zeros_like(hv)
    np.add.at(out, rows, w[:, None] * hv[cols])

    def back(grad):
        gh = np.zeros_like(hv)
        np.add.at(gh, cols, w[:, None] * grad[rows])
        return (gh,)

    return T.record(out, (H,), back)


# ---------------------------------------------------------------------------
# Column network update


@dataclass
class NodeMapParams:
    """Per-node two-branch map ``P @ Wp + Q @ Wq + 1 b``."""

    Wp: np.ndarray
    Wq: np.ndarray
    b: np.ndarray  # 1 x d


@dataclass
class ClnUpdateParams:
    gate: NodeMapParams
    cand: NodeMapParams


def init_cln_update(rng: np.random.Generator, d: int, d_agg: int, gate_bias: float = 0.0) -> ClnUpdateParams:
    def node_map(bias):
        return NodeMapParams(glorot(rng, d, d), glorot(rng, d_agg, d), np.full((1, d), bias))

    return ClnUpdateParams(node_map(gate_bias), node_map(0.0))


def node_map(P, Q, p: NodeMapParams):
    n = value_of(P).shape[0]
    bias = T.matmul(np.ones((n, 1)), p.b)
    return T.add(T.add(T.matmul(P, p.Wp), T.matmul(Q, p.Wq)), bias)


def cln_update(H_prev, H_agg, p: ClnUpdateParams, act="relu"):
    """Highway step for every node, conditioned on its own state and its aggregate."""
    hs, gs = value_of(H_prev).shape, value_of(H_agg).shape
    if len(hs) != 2 or len(gs) != 2 or hs[0] != gs[0]:
        raise ShapeError("node states and aggregates must be |V| x d", hs, gs)
    Z = T.sigmoid(node_map(H_prev, H_agg, p.gate))
    H_cand = T.activation(act)(node_map(H_prev, H_agg, p.cand))
    return T.add(T.hadamard(T.sub(1.0, Z), H_prev), T.hadamard(Z, H_cand))


# ---------------------------------------------------------------------------
# Attention


@dataclass
class AttentionHeadParams:
    """Bilinear scorer ``g(x, y) = x^T W y + a^T x + b^T y + c``."""

    W: np.ndarray  # d x d
    a: np.ndarray  # d x 1
    b: np.ndarray  # d x 1
    c: np.ndarray  # 1 x 1

    @classmethod
    def zeros(cls, d: int) -> "AttentionHeadParams":
        return cls(np.zeros((d, d)), np.zeros((d, 1)), np.zeros((d, 1)), np.zeros((1, 1)))

    @classmethod
    def random(cls, rng: np.random.Generator, d: int, scale: float = 0.1) -> "AttentionHeadParams":
        return cls(scale * rng.standard_normal((d, d)), scale * rng.standard_normal((d, 1)),
                   scale * rng.standard_normal((d, 1)), np.zeros((1, 1)))


def neighbor_mask(g: Graph, sampled: Sequence[np.ndarray] | None = None) -> np.ndarray:
    nbrs = g.neighbors if sampled is None else sampled
    mask = np.zeros((g.node_count, g.node_count), dtype=bool)
    for i, n in enumerate(nbrs):
        mask[i, n] = True
    return mask


def attention_scores(H, head: AttentionHeadParams):
    """All pairwise scores g(h_i, h_j) as a |V| x |V| matrix."""
    n = value_of(H).shape[0]
    ones_col = np.ones((n, 1))
    pair = T.matmul(T.matmul(H, head.W), T.transpose(H))
    src = T.matmul(T.matmul(H, head.a), ones_col.T)
    dst = T.matmul(ones_col, T.transpose(T.matmul(H, head.b)))
    const = T.matmul(T.matmul(ones_col, head.c), ones_col.T)
    return T.add(T.add(pair, src), T.add(dst, const))


def attention_matrix(H, head: AttentionHeadParams, g: Graph,
                     sampled: Sequence[np.ndarray] | None = None):
    """Softmax of bilinear scores over each node's (sampled) neighborhood."""
    if sampled is not None:
        for i, (s, full) in enumerate(zip(sampled, g.neighbors)):
            if not np.isin(s, full).all():
                raise ValueError(f"sampled neighbors of node {i} are not all neighbors")
    return T.masked_row_softmax(attention_scores(H, head), neighbor_mask(g, sampled))


def multi_attention_aggregate(H, heads: Sequence[AttentionHeadParams], g: Graph,
                              sampled: Sequence[np.ndarray] | None = None):
    """Concatenate ``Lambda_i @ H`` over heads column-wise: |V| x (n d)."""
    if len(heads) < 1:
        raise ValueError("need at least one attention head")
    return T.concat([T.matmul(attention_matrix(H, h, g, sampled), H) for h in heads], axis=-1)


# ---------------------------------------------------------------------------
# Neighbor sampling


def sample_neighbors(g: Graph, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Up to ``k`` distinct neighbors per node, drawn without replacement."""
    if k < 1:
        raise ValueError("k must be >= 1")
    out = []
    for n in g.neighbors:
        if len(n) <= k:
            out.append(n.copy())
        else:
            out.append(np.sort(rng.choice(n, size=k, replace=False)))
    return out


def capped_neighbors(g: Graph, k: int) -> list[np.ndarray]:
    """Deterministic cap: the ``k`` lowest-index neighbors."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return [n[:k].copy() for n in g.neighbors]


# ---------------------------------------------------------------------------
# Vector baseline


def neighbor_blocks(H, sampled: Sequence[np.ndarray], k: int):
    """Stack each node's neighbor states into a zero-padded ``k x d`` block."""
    n = value_of(H).shape[0]
    index = np.full((n, k), n, dtype=np.intp)
    for i, s in enumerate(sampled):
        s = s[:k]
        index[i, :len(s)] = s
    d = value_of(H).shape[1]
    padded = T.concat([H, np.zeros((1, d))], axis=0)
    return T.take_rows(padded, index)


def vector_aggregate(H, sampled: Sequence[np.ndarray], k: int, W, b):
    """Flatten each node's neighbor block and apply a dense map: |V| x d_out."""
    blocks = neighbor_blocks(H, sampled, k)
    n, _, d = value_of(blocks).shape
    flat = T.reshape(blocks, (n, k * d))
    return T.add(T.matmul(flat, W), T.matmul(np.ones((n, 1)), b))


# ---------------------------------------------------------------------------
# GCN and Chebyshev filters


def gcn_propagation_matrix(g: Graph) -> np.ndarray:
    """D~^{-1/2} (A + I) D~^{-1/2}."""
    A = g.adjacency() + np.eye(g.node_count)
    d = A.sum(axis=1)
    # one rounding per entry instead of two
    return A / np.sqrt(np.outer(d, d))


def gcn_propagate(X, g: Graph, Theta):
    xs, ts = value_of(X).shape, value_of(Theta).shape
    if xs[0] != g.node_count or xs[-1] != ts[0]:
        raise ShapeError("GCN needs |V| x d features and a d x d' map", xs, ts)
    return T.matmul(T.matmul(gcn_propagation_matrix(g), X), Theta)


def normalized_laplacian(g: Graph) -> np.ndarray:
    """I - D^{-1/2} A D^{-1/2}; isolated nodes contribute no off-diagonal terms."""
    A = g.adjacency()
    d = A.sum(axis=1)
    s = np.divide(1.0, np.sqrt(d), out=np.zeros_like(d), where=d > 0)
    return np.eye(g.node_count) - s[:, None] * A * s[None, :]


def scaled_laplacian(g: Graph, lambda_max: float = 2.0) -> np.ndarray:
    return 2.0 * normalized_laplacian(g) / lambda_max - np.eye(g.node_count)


def chebyshev_eval(K: int, x) -> np.ndarray:
    """T_0(x) .. T_{K-1}(x) by the three-term recursion."""
    if K < 1:
        raise ValueError("order K must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    out = [np.ones_like(x)]
    if K > 1:
        out.append(x.copy())
    for _ in range(2, K):
        out.append(2.0 * x * out[-1] - out[-2])
    return np.stack(out)


def chebyshev_graph_filter(L_scaled: np.ndarray | Callable, x, theta: Sequence[float]) -> np.ndarray:
    """sum_k theta_k T_k(L~) x, using only applications of L~ to vectors."""
    K = len(theta)
    if K < 1:
        raise ValueError("need at least one coefficient")
    apply = L_scaled if callable(L_scaled) else (lambda v, L=np.asarray(L_scaled): L @ v)
    x = np.asarray(x, dtype=np.float64)
    t_prev, t_cur = x, None
    out = theta[0] * t_prev
    if K > 1:
        t_cur = apply(x)
        out = out + theta[1] * t_cur
    for k in range(2, K):
        t_prev, t_cur = t_cur, 2.0 * apply(t_cur) - t_prev
        out = out + theta[k] * t_cur
    return out


# ---------------------------------------------------------------------------
# Node classifiers


class ColumnNetwork:
    """Column network for node classification.

    ``variant`` picks the aggregation: ``mean`` (normalized adjacency),
    ``attention`` (multi-head bilinear attention) or ``vector`` (dense map of
    the flattened neighbor block).  Neighbors are resampled on every training
    forward pass and capped deterministically otherwise.
    """

    def __init__(self, graph: Graph, hidden: int, n_classes: int, rng: np.random.Generator,
                 height: int = 5, variant: str = "mean", heads: int = 10, neighbors: int = 50,
                 act="relu"):
        if variant not in ("mean", "attention", "vector"):
            raise ValueError(f"unknown column network variant {variant!r}")
        self.graph = graph
        self.variant = variant
        self.height = height
        self.k = neighbors
        self.act = act
        d_in = graph.features.shape[1]
        d_agg = hidden * heads if variant == "attention" else hidden
        layers = []
        for _ in range(height):
            layer = {"update": init_cln_update(rng, hidden, d_agg)}
            if variant == "attention":
                layer["heads"] = [AttentionHeadParams.random(rng, hidden) for _ in range(heads)]
            elif variant == "vector":
                layer["W"] = glorot(rng, neighbors * hidden, hidden)
                layer["b"] = np.zeros((1, hidden))
            layers.append(layer)
        self.params = {
            "input": {"W": glorot(rng, d_in, hidden), "b": np.zeros((1, hidden))},
            "layers": layers,
            "output": {"W": glorot(rng, hidden, n_classes), "b": np.zeros((1, n_classes))},
        }

    def forward(self, p, training: bool = False, rng=None):
        g = self.graph
        n = g.node_count
        ones = np.ones((n, 1))
        H = T.activation(self.act)(T.add(T.matmul(g.features, p["input"]["W"]), T.matmul(ones, p["input"]["b"])))
        for layer in p["layers"]:
            sampled = sample_neighbors(g, self.k, rng) if training else capped_neighbors(g, self.k)
            if self.variant == "mean":
                agg = neighbor_mean(H, g, sampled)
            elif self.variant == "attention":
                agg = multi_attention_aggregate(H, layer["heads"], g, sampled)
            else:
                agg = vector_aggregate(H, sampled, self.k, layer["W"], layer["b"])
            H = cln_update(H, agg, layer["update"], self.act)
        return T.add(T.matmul(H, p["output"]["W"]), T.matmul(ones, p["output"]["b"]))


class GCN:
    """Two-layer graph convolutional classifier."""

    def __init__(self, graph: Graph, hidden: int, n_classes: int, rng: np.random.Generator, act="relu"):
        self.graph = graph
        self.act = act
        d_in = graph.features.shape[1]
        self.params = {"Theta1": glorot(rng, d_in, hidden), "Theta2": glorot(rng, hidden, n_classes)}

    def forward(self, p, training: bool = False, rng=None):
        H = T.activation(self.act)(gcn_propagate(self.graph.features, self.graph, p["Theta1"]))
        return gcn_propagate(H, self.graph, p["Theta2"])
