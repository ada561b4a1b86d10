"""Graph storage, adjacency normalization and the two matrix kernels.

Dense matrices are plain 2-D ``numpy.float32`` arrays (row-major). Sparse
matrices use :class:`CsrMatrix`, whose product with a dense operand
accumulates each output row strictly left to right so that results do not
depend on how the work is scheduled.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import InputError

DenseMatrix = np.ndarray

__all__ = [
    "CsrMatrix",
    "DenseMatrix",
    "Graph",
    "dense_matmul",
    "normalize_adjacency",
    "self_loop_adjacency",
    "spmm",
]


@dataclass(frozen=True, eq=False)
class CsrMatrix:
    num_rows: int
    num_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        offsets = np.asarray(self.row_offsets, dtype=np.int64)
        cols = np.asarray(self.col_indices, dtype=np.int64)
        vals = np.asarray(self.values, dtype=np.float32)
        object.__setattr__(self, "row_offsets", offsets)
        object.__setattr__(self, "col_indices", cols)
        object.__setattr__(self, "values", vals)
        for arr in (offsets, cols, vals):
            arr.setflags(write=False)

        if self.num_rows < 0 or self.num_cols < 0:
            raise InputError("negative matrix dimension")
        if offsets.shape != (self.num_rows + 1,):
            raise InputError("row_offsets must have num_rows + 1 entries")
        if offsets[0] != 0 or offsets[-1] != len(cols) or len(cols) != len(vals):
            raise InputError("row_offsets inconsistent with col_indices/values")
        if np.any(np.diff(offsets) < 0):
            raise InputError("row_offsets must be non-decreasing")
        if len(cols):
            if cols.min() < 0 or cols.max() >= self.num_cols:
                raise InputError("column index out of range")
            # strictly increasing inside a row <=> every in-row step is positive
            step = np.diff(cols)
            row_start = np.zeros(len(cols), dtype=bool)
            row_start[offsets[:-1][np.diff(offsets) > 0]] = True
            if np.any(step[~row_start[1:]] <= 0):
                raise InputError("column indices must be strictly increasing within a row")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.num_rows, self.num_cols)

    @property
    def nnz(self) -> int:
        return len(self.values)

    def row_lengths(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    def row_indices(self) -> np.ndarray:
        return np.repeat(np.arange(self.num_rows), self.row_lengths())

    @classmethod
    def from_dense(cls, dense) -> CsrMatrix:
        dense = np.asarray(dense, dtype=np.float32)
        if dense.ndim != 2:
            raise InputError("expected a 2-D array")
        rows, cols = np.nonzero(dense)
        offsets = np.zeros(dense.shape[0] + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=dense.shape[0]), out=offsets[1:])
        return cls(dense.shape[0], dense.shape[1], offsets, cols, dense[rows, cols])

    @classmethod
    def from_coo(cls, rows, cols, values, shape) -> CsrMatrix:
        """Build from unsorted, duplicate-free coordinates."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        order = np.lexsort((cols, rows))
        offsets = np.zeros(shape[0] + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=shape[0]), out=offsets[1:])
        return cls(shape[0], shape[1], offsets, cols[order], np.asarray(values)[order])

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=np.float32)
        out[self.row_indices(), self.col_indices] = self.values
        return out

    def transpose(self) -> CsrMatrix:
        return CsrMatrix.from_coo(
            self.col_indices, self.row_indices(), self.values, (self.num_cols, self.num_rows)
        )

    def row_sums(self) -> np.ndarray:
        return spmm(self, np.ones((self.num_cols, 1), dtype=np.float32))[:, 0]


def _undirected_pairs(edges, num_nodes: int) -> np.ndarray:
    """Deduplicated (u < v) pairs with self loops removed."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if len(edges) and (edges.min() < 0 or edges.max() >= num_nodes):
        raise InputError(f"edge endpoint out of range for {num_nodes} nodes")
    lo = np.minimum(edges[:, 0], edges[:, 1])
    hi = np.maximum(edges[:, 0], edges[:, 1])
    keep = lo != hi
    pairs = np.stack([lo[keep], hi[keep]], axis=1)
    if len(pairs) == 0:
        return pairs
    return np.unique(pairs, axis=0)


def _symmetric_csr(pairs: np.ndarray, pair_values, diag_values, num_nodes: int) -> CsrMatrix:
    nodes = np.arange(num_nodes)
    rows = np.concatenate([pairs[:, 0], pairs[:, 1], nodes])
    cols = np.concatenate([pairs[:, 1], pairs[:, 0], nodes])
    vals = np.concatenate([pair_values, pair_values, diag_values]).astype(np.float32)
    return CsrMatrix.from_coo(rows, cols, vals, (num_nodes, num_nodes))


def normalize_adjacency(edges, num_nodes: int) -> CsrMatrix:
    """Symmetrically normalized adjacency with self loops, D^-1/2 (A + I) D^-1/2.

    Duplicate edges and self loops in ``edges`` are collapsed first, so the
    self loop on every node is counted exactly once.
    """
    if num_nodes < 1:
        raise InputError("graph needs at least one node")
    pairs = _undirected_pairs(edges, num_nodes)
    degree = np.ones(num_nodes, dtype=np.float64)
    np.add.at(degree, pairs[:, 0], 1.0)
    np.add.at(degree, pairs[:, 1], 1.0)
    pair_values = 1.0 / np.sqrt(degree[pairs[:, 0]] * degree[pairs[:, 1]])
    return _symmetric_csr(pairs, pair_values, 1.0 / degree, num_nodes)


def self_loop_adjacency(edges, num_nodes: int) -> CsrMatrix:
    """Binary A + I used for sum aggregation."""
    if num_nodes < 1:
        raise InputError("graph needs at least one node")
    pairs = _undirected_pairs(edges, num_nodes)
    return _symmetric_csr(pairs, np.ones(len(pairs)), np.ones(num_nodes), num_nodes)


def spmm(a: CsrMatrix, x) -> np.ndarray:
    """Sparse times dense.

    Output row ``i`` is accumulated over the stored entries of row ``i`` in
    storage order. The loop runs over entry *position* within a row and is
    vectorized across rows, which keeps the per-row summation order fixed.
    """
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[0] != a.num_cols:
        raise InputError(f"spmm shape mismatch: {a.shape} x {x.shape}")
    dtype = np.result_type(x.dtype, np.float32)
    out = np.zeros((a.num_rows, x.shape[1]), dtype=dtype)
    if a.nnz == 0:
        return out
    lengths = a.row_lengths()
    by_length = np.argsort(-lengths, kind="stable")
    neg_sorted = -lengths[by_length]
    starts = a.row_offsets[:-1]
    values = a.values.astype(dtype, copy=False)
    for j in range(int(lengths.max())):
        count = int(np.searchsorted(neg_sorted, -j, side="left"))
        rows = by_length[:count]
        idx = starts[rows] + j
        out[rows] += values[idx, None] * x[a.col_indices[idx]]
    return out


def dense_matmul(a, b) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise InputError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return np.matmul(a, b)


@dataclass(eq=False)
class Graph:
    """Node-classification graph.

    ``adjacency`` is the normalized operator used by GCN-style layers and
    ``sum_adjacency`` the binary A + I used by GIN. ``splits`` holds the
    train, validation and test node indices in that order.
    """

    adjacency: CsrMatrix
    features: np.ndarray
    labels: np.ndarray
    splits: tuple[np.ndarray, np.ndarray, np.ndarray]
    sum_adjacency: CsrMatrix | None = None
    name: str | None = None
    num_classes: int = field(default=0)

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.splits = tuple(np.asarray(s, dtype=np.int64) for s in self.splits)
        n = self.adjacency.num_rows
        if self.adjacency.num_cols != n:
            raise InputError("adjacency must be square")
        if self.sum_adjacency is not None and self.sum_adjacency.shape != (n, n):
            raise InputError("sum_adjacency shape mismatch")
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise InputError("features must have one row per node")
        if self.labels.shape != (n,):
            raise InputError("labels must have one entry per node")
        if len(self.splits) != 3:
            raise InputError("expected train/val/test splits")
        seen = np.zeros(n, dtype=bool)
        for split in self.splits:
            if len(split) and (split.min() < 0 or split.max() >= n):
                raise InputError("split index out of range")
            if np.any(seen[split]) or len(np.unique(split)) != len(split):
                raise InputError("splits must be pairwise disjoint")
            seen[split] = True
        if self.labels.min(initial=0) < 0:
            raise InputError("labels must be non-negative")
        if not self.num_classes:
            self.num_classes = int(self.labels.max(initial=-1)) + 1

    @classmethod
    def from_edges(cls, edges, features, labels, splits, name=None, num_classes=0) -> Graph:
        n = np.asarray(features).shape[0]
        return cls(
            adjacency=normalize_adjacency(edges, n),
            features=features,
            labels=labels,
            splits=splits,
            sum_adjacency=self_loop_adjacency(edges, n),
            name=name,
            num_classes=num_classes,
        )

    @property
    def num_nodes(self) -> int:
        return self.adjacency.num_rows

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def train_idx(self) -> np.ndarray:
        return self.splits[0]

    @property
    def val_idx(self) -> np.ndarray:
        return self.splits[1]

    @property
    def test_idx(self) -> np.ndarray:
        return self.splits[2]

    def split(self, name: str) -> np.ndarray:
        return {"train": self.splits[0], "val": self.splits[1], "test": self.splits[2]}[name]

    @cached_property
    def aggregated_features(self) -> np.ndarray:
        """Normalized aggregation of the input features, reused by every first layer."""
        return spmm(self.adjacency, self.features)

    @cached_property
    def sum_aggregated_features(self) -> np.ndarray:
        if self.sum_adjacency is None:
            raise InputError("graph has no sum adjacency")
        return spmm(self.sum_adjacency, self.features)
