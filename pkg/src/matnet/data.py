"""Dataset loading, synthesis and preprocessing.

Loaders are pure functions of their files; synthesizers are pure functions of
their ``rng``.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .graph import Graph

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class FormatError(ValueError):
    """A data file does not match its declared format."""


@dataclass
class LabeledMatrixSet:
    images: np.ndarray  # (N, rows, cols)
    labels: np.ndarray  # (N,)
    n_classes: int = 10

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError("label outside class range")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def shape(self) -> tuple[int, int]:
        return self.images.shape[1:]

    def subset(self, index) -> "LabeledMatrixSet":
        return LabeledMatrixSet(self.images[index], self.labels[index], self.n_classes)


@dataclass
class SequenceSet:
    sequences: np.ndarray  # (N, T, rows, cols)

    @property
    def length(self) -> int:
        return self.sequences.shape[1]

    @property
    def frame_shape(self) -> tuple[int, int]:
        return self.sequences.shape[2:]

    def __len__(self) -> int:
        return len(self.sequences)


# ---------------------------------------------------------------------------
# IDX


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path, expected_magic: int) -> np.ndarray:
    """Read an unsigned-byte IDX file (big-endian header)."""
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise FormatError(f"{path}: bad magic number 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise FormatError(f"{path}: truncated data, expected {size} bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        f.write(struct.pack(f">{array.ndim}I", *array.shape))
        f.write(array.tobytes())


def load_idx(images_path, labels_path) -> LabeledMatrixSet:
    """MNIST-style image/label pair; pixels scaled to [0, 1]."""
    images = read_idx(images_path, IDX_IMAGE_MAGIC)
    labels = read_idx(labels_path, IDX_LABEL_MAGIC)
    if len(images) != len(labels):
        raise FormatError(f"image file has {len(images)} items but label file has {len(labels)}")
    n_classes = max(10, int(labels.max()) + 1) if len(labels) else 10
    return LabeledMatrixSet(images.astype(np.float64) / 255.0, labels.astype(np.int64), n_classes)


# ---------------------------------------------------------------------------
# Synthetic digits


def _stroke_image(rng: np.random.Generator, shape, n_strokes: int) -> np.ndarray:
    rows, cols = shape
    img = np.zeros(shape)
    yy, xx = np.mgrid[0:rows, 0:cols]
    for _ in range(n_strokes):
        p0 = rng.uniform([rows * 0.2, cols * 0.2], [rows * 0.8, cols * 0.8])
        p1 = rng.uniform([rows * 0.2, cols * 0.2], [rows * 0.8, cols * 0.8])
        for t in np.linspace(0.0, 1.0, 12):
            cy, cx = p0 + t * (p1 - p0)
            img = np.maximum(img, np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / 2.0))
    return img


def digit_prototypes(n_classes: int = 10, shape=(28, 28), seed: int = 7) -> np.ndarray:
    """Fixed stroke templates, one per class (independent of any run seed)."""
    rng = np.random.default_rng(seed)
    return np.stack([_stroke_image(rng, shape, 3) for _ in range(n_classes)])


def synthetic_digits(n: int, rng: np.random.Generator, n_classes: int = 10, shape=(28, 28),
                     max_shift: int = 2, noise: float = 0.1) -> LabeledMatrixSet:
    """Stand-in for MNIST: jittered, noisy copies of per-class stroke templates."""
    protos = digit_prototypes(n_classes, shape)
    labels = rng.integers(0, n_classes, size=n)
    images = np.empty((n,) + tuple(shape))
    for k, c in enumerate(labels):
        dy, dx = rng.integers(-max_shift, max_shift + 1, size=2)
        img = np.roll(protos[c], (dy, dx), axis=(0, 1))
        images[k] = np.clip(img + noise * rng.standard_normal(shape), 0.0, 1.0)
    return LabeledMatrixSet(images, labels.astype(np.int64), n_classes)


# ---------------------------------------------------------------------------
# Corruption


def corrupt_patches(x: np.ndarray, patch: int = 5, count: int = 1, rng: np.random.Generator | None = None,
                    positions: Sequence[tuple[int, int]] | None = None) -> np.ndarray:
    """Copy of ``x`` with ``count`` black ``patch x patch`` squares fully inside it."""
    x = np.array(x, dtype=np.float64)
    rows, cols = x.shape[-2:]
    if patch > rows or patch > cols:
        raise ValueError(f"patch {patch} larger than image {rows}x{cols}")
    if positions is None:
        if count and rng is None:
            raise ValueError("random patch placement needs an rng")
        positions = [(int(rng.integers(0, rows - patch + 1)), int(rng.integers(0, cols - patch + 1)))
                     for _ in range(count)]
    for r, c in positions:
        if not (0 <= r <= rows - patch and 0 <= c <= cols - patch):
            raise ValueError(f"patch at ({r}, {c}) leaves the image")
        x[..., r:r + patch, c:c + patch] = 0.0
    return x


def add_noise(x: np.ndarray, ratio: float, rng: np.random.Generator, kind: str = "mask") -> np.ndarray:
    """Masking noise zeroes each entry with probability ``ratio``; ``gaussian``
    adds N(0, ratio^2) noise instead, clipped to the [0, 1] pixel range."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"noise ratio must be in [0, 1], got {ratio}")
    x = np.asarray(x, dtype=np.float64)
    if kind == "mask":
        return np.where(rng.random(x.shape) < ratio, 0.0, x)
    if kind == "gaussian":
        return np.clip(x + ratio * rng.standard_normal(x.shape), 0.0, 1.0)
    raise ValueError(f"unknown noise kind {kind!r}")


# ---------------------------------------------------------------------------
# Moving digits


def bounce(position: int, velocity: int, limit: int) -> tuple[int, int]:
    """Advance one step inside [0, limit], reflecting off either edge."""
    p = position + velocity
    if p < 0:
        p, velocity = -p, -velocity
    elif p > limit:
        p, velocity = 2 * limit - p, -velocity
    return min(max(p, 0), limit), velocity


def moving_digits(base, n_sequences: int, rng: np.random.Generator, length: int = 20, frame: int = 64,
                  n_digits: int = 2, velocities=None, positions=None) -> SequenceSet:
    """Sequences of ``n_digits`` glyphs bouncing around a ``frame x frame`` canvas.

    ``base`` is a LabeledMatrixSet or an ``(K, h, w)`` stack of glyphs.
    Velocities are integers in [-3, 3] per axis, never both zero, unless
    given explicitly as an ``(n_sequences, n_digits, 2)`` array (positions
    likewise).  Overlapping pixels combine by max.
    """
    glyphs = base.images if isinstance(base, LabeledMatrixSet) else np.asarray(base, dtype=np.float64)
    h, w = glyphs.shape[1:]
    if frame < max(h, w):
        raise ValueError(f"frame {frame} smaller than glyph {h}x{w}")
    limits = np.array([frame - h, frame - w])
    out = np.zeros((n_sequences, length, frame, frame))
    for s in range(n_sequences):
        for d in range(n_digits):
            glyph = glyphs[rng.integers(0, len(glyphs))]
            if positions is not None:
                pos = np.array(positions[s][d], dtype=int)
            else:
                pos = np.array([rng.integers(0, limits[0] + 1), rng.integers(0, limits[1] + 1)])
            if velocities is not None:
                vel = np.array(velocities[s][d], dtype=int)
            else:
                vel = np.zeros(2, dtype=int)
                while not vel.any():
                    vel = rng.integers(-3, 4, size=2)
            for t in range(length):
                r, c = pos
                np.maximum(out[s, t, r:r + h, c:c + w], glyph, out=out[s, t, r:r + h, c:c + w])
                for axis in range(2):
                    pos[axis], vel[axis] = bounce(pos[axis], vel[axis], limits[axis])
    return SequenceSet(out)


def blob_glyphs(n: int, rng: np.random.Generator, size: int = 4) -> np.ndarray:
    """Small random binary-ish glyphs for low-resolution motion tasks."""
    glyphs = (rng.random((n, size, size)) < 0.6).astype(np.float64)
    glyphs[:, size // 2, size // 2] = 1.0
    return glyphs


# ---------------------------------------------------------------------------
# Spectrograms


def stft_spectrogram(signals: np.ndarray, window: int = 64, overlap: int = 56) -> np.ndarray:
    """Magnitude spectrogram ``(channels, window // 2, frames)``.

    Each channel is detrended by its temporal mean, cut into Hamming-windowed
    frames with hop ``window - overlap``, and transformed; the zero-frequency
    bin is dropped and bins ``1 .. window // 2`` kept.
    """
    x = np.asarray(signals, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    samples = x.shape[-1]
    if samples < window:
        raise ValueError(f"{samples} samples is shorter than the window {window}")
    hop = window - overlap
    if hop < 1:
        raise ValueError("overlap must be smaller than the window")
    x = x - x.mean(axis=-1, keepdims=True)
    frames = (samples - window) // hop + 1
    starts = hop * np.arange(frames)
    segs = x[..., starts[:, None] + np.arange(window)]  # (..., frames, window)
    spec = np.abs(np.fft.rfft(segs * np.hamming(window), axis=-1))[..., 1:window // 2 + 1]
    return np.swapaxes(spec, -1, -2)


def synthetic_eeg(n_trials: int, rng: np.random.Generator, channels: int = 64, samples: int = 256,
                  rate: float = 256.0, active_channels: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Two-class stand-in for EEG trials.

    Both classes are white noise plus a sinusoidal burst on the first
    ``active_channels`` channels; class 0 bursts near 12 Hz and class 1 near
    32 Hz, with random phase and amplitude per channel.
    """
    active_channels = min(active_channels, channels)
    labels = np.arange(n_trials) % 2
    rng.shuffle(labels)
    t = np.arange(samples) / rate
    X = rng.standard_normal((n_trials, channels, samples))
    for k, c in enumerate(labels):
        base = 12.0 if c == 0 else 32.0
        freq = base + rng.uniform(-1.0, 1.0)
        phase = rng.uniform(0, 2 * np.pi, size=(active_channels, 1))
        amp = rng.uniform(0.8, 1.5, size=(active_channels, 1))
        X[k, :active_channels] += amp * np.sin(2 * np.pi * freq * t + phase)
    return X, labels.astype(np.int64)


# ---------------------------------------------------------------------------
# Graphs


def assign_split(node_count: int, rng: np.random.Generator, n_test: int = 1000, n_val: int = 100) -> np.ndarray:
    if n_test + n_val >= node_count:
        raise ValueError(f"cannot hold out {n_test} test and {n_val} validation nodes from {node_count}")
    order = rng.permutation(node_count)
    split = np.full(node_count, "train", dtype=object)
    split[order[:n_test]] = "test"
    split[order[n_test:n_test + n_val]] = "val"
    return split


def load_graph(edges_path, features_path, labels_path, rng: np.random.Generator | None = None,
               n_test: int = 1000, n_val: int = 100) -> Graph:
    """Edge list (two integer columns) plus headerless CSV features and labels."""
    features = np.loadtxt(features_path, delimiter=",", ndmin=2)
    labels = np.loadtxt(labels_path, delimiter=",", dtype=np.int64, ndmin=1)
    n = features.shape[0]
    if labels.shape[0] != n:
        raise FormatError(f"label file has {labels.shape[0]} rows but feature file has {n}")
    edges = np.loadtxt(edges_path, dtype=np.int64, ndmin=2)
    if edges.size and edges.shape[1] != 2:
        raise FormatError(f"{edges_path}: expected two columns, found {edges.shape[1]}")
    split = None
    if n_test or n_val:
        split = assign_split(n, rng if rng is not None else np.random.default_rng(0), n_test, n_val)
    return Graph(n, edges.reshape(-1, 2), features, labels, split)


def write_graph(directory, g: Graph) -> tuple[Path, Path, Path]:
    directory = Path(directory)
    paths = directory / "edges.txt", directory / "features.csv", directory / "labels.csv"
    np.savetxt(paths[0], g.edges, fmt="%d")
    np.savetxt(paths[1], g.features, delimiter=",", fmt="%.17g")
    np.savetxt(paths[2], g.labels, fmt="%d")
    return paths


def synthetic_graph(n_nodes: int, n_classes: int, rng: np.random.Generator, n_features: int = 50,
                    avg_degree: float = 4.0, homophily: float = 0.8, feature_noise: float = 1.0,
                    n_test: int = 0, n_val: int = 0) -> Graph:
    """Planted-partition graph with class-correlated count features."""
    labels = rng.integers(0, n_classes, size=n_nodes)
    m = int(n_nodes * avg_degree / 2)
    src = rng.integers(0, n_nodes, size=4 * m)
    dst = rng.integers(0, n_nodes, size=4 * m)
    same = labels[src] == labels[dst]
    keep = np.where(same, rng.random(4 * m) < homophily, rng.random(4 * m) < (1 - homophily))
    edges = np.stack([src[keep], dst[keep]], axis=1)[:m]
    topic = rng.random((n_classes, n_features)) < 0.2
    rates = np.where(topic[labels], 1.0, 0.1) * feature_noise
    features = rng.poisson(rates).astype(np.float64)
    split = assign_split(n_nodes, rng, n_test, n_val) if (n_test or n_val) else None
    return Graph(n_nodes, edges, features, labels.astype(np.int64), split)
