"""Data model for attributed multiplex networks and the sparse kernels.

A graph holds one binary symmetric adjacency matrix per edge type, a dense
node-attribute matrix and optional integer class labels.  Everything
downstream (aggregation, convolution, walk counting) consumes this module.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class GraphDataError(ValueError):
    """Malformed or out-of-range graph construction input."""


def canonical_sparse(mat) -> sp.csr_matrix:
    """Return ``mat`` as canonical CSR: duplicates summed, explicit zeros
    dropped, column indices sorted within each row."""
    out = sp.csr_matrix(mat)
    out.sum_duplicates()
    out.eliminate_zeros()
    out.sort_indices()
    return out


def build_subgraph_adjacencies(edge_list, n, num_edge_types):
    """Build one symmetric binary n-by-n adjacency matrix per edge type.

    ``edge_list`` holds ``(u, v, edge_type)`` triples.  Both ``(u, v)`` and
    ``(v, u)`` are set; repeated records collapse to a single unit entry.

    Raises :class:`GraphDataError` identifying the offending record when an
    endpoint or edge type is out of range.
    """
    if n < 0 or num_edge_types < 1:
        raise GraphDataError(
            f"need n >= 0 and num_edge_types >= 1, got n={n}, "
            f"num_edge_types={num_edge_types}"
        )
    rows = [[] for _ in range(num_edge_types)]
    cols = [[] for _ in range(num_edge_types)]
    for i, (u, v, r) in enumerate(edge_list):
        if not (0 <= u < n) or not (0 <= v < n):
            raise GraphDataError(
                f"edge record {i}: node id out of range in ({u}, {v}, {r}), "
                f"node count is {n}"
            )
        if not (0 <= r < num_edge_types):
            raise GraphDataError(
                f"edge record {i}: edge type {r} out of range, "
                f"declared {num_edge_types} edge types"
            )
        rows[r].append(u)
        cols[r].append(v)
        rows[r].append(v)
        cols[r].append(u)
    mats = []
    for r in range(num_edge_types):
        data = np.ones(len(rows[r]), dtype=np.float64)
        m = sp.coo_matrix((data, (rows[r], cols[r])), shape=(n, n)).tocsr()
        m.sum_duplicates()
        m.data[:] = 1.0  # duplicates collapse to binary
        mats.append(canonical_sparse(m))
    return mats


def spmm(a, b):
    """Sparse-times-dense product ``a @ b`` as a dense float64 array."""
    if a.shape[1] != b.shape[0]:
        raise ValueError(
            f"spmm dimension mismatch: sparse is {a.shape}, dense is {b.shape}"
        )
    return np.asarray(a @ np.asarray(b, dtype=np.float64))


def weighted_sum(mats, weights):
    """Entry-wise weighted sum of same-shaped sparse matrices.

    Entries that cancel to exactly zero are dropped from the pattern.
    """
    if len(mats) != len(weights):
        raise ValueError(
            f"got {len(mats)} matrices but {len(weights)} weights"
        )
    if not mats:
        raise ValueError("need at least one matrix")
    shape = mats[0].shape
    for m in mats[1:]:
        if m.shape != shape:
            raise ValueError(
                f"matrix dimension mismatch: {m.shape} vs {shape}"
            )
    acc = sp.csr_matrix(shape, dtype=np.float64)
    for w, m in zip(weights, mats):
        acc = acc + float(w) * m
    return canonical_sparse(acc)


def undirected_pairs(adjacency):
    """Unique node pairs (u <= v) present in a symmetric adjacency,
    as an int array of shape (k, 2)."""
    coo = sp.triu(adjacency, k=0).tocoo()
    return np.column_stack([coo.row, coo.col]).astype(np.int64)


@dataclass
class AmhenGraph:
    """Attributed multiplex heterogeneous network.

    Immutable after construction; safe to share across threads.

    node_types   : (n,) int array, one type id per node
    adjacencies  : one symmetric binary CSR matrix per edge type
    features     : (n, m) float64 attribute matrix
    labels       : (n,) int array, -1 marks unlabeled nodes
    """

    node_types: np.ndarray
    adjacencies: list = field(repr=False)
    features: np.ndarray = field(repr=False)
    labels: np.ndarray | None = None
    num_node_types: int | None = None

    def __post_init__(self):
        self.node_types = np.asarray(self.node_types, dtype=np.int64)
        self.features = np.asarray(self.features, dtype=np.float64)
        n = self.features.shape[0]
        if self.node_types.shape != (n,):
            raise GraphDataError(
                f"node_types has shape {self.node_types.shape}, "
                f"expected ({n},) to match the feature rows"
            )
        if not self.adjacencies:
            raise GraphDataError("need at least one edge type")
        self.adjacencies = [canonical_sparse(a) for a in self.adjacencies]
        for r, a in enumerate(self.adjacencies):
            if a.shape != (n, n):
                raise GraphDataError(
                    f"adjacency {r} has shape {a.shape}, expected ({n}, {n})"
                )
            if (a != a.T).nnz != 0:
                raise GraphDataError(f"adjacency {r} is not symmetric")
        if not np.all(np.isfinite(self.features)):
            raise GraphDataError("features contain non-finite values")
        if self.labels is None:
            self.labels = np.full(n, -1, dtype=np.int64)
        else:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n,):
                raise GraphDataError(
                    f"labels has shape {self.labels.shape}, expected ({n},)"
                )
        if self.num_node_types is None:
            self.num_node_types = int(self.node_types.max()) + 1 if n else 0
        elif n and int(self.node_types.max()) >= self.num_node_types:
            raise GraphDataError(
                f"node type {int(self.node_types.max())} out of range, "
                f"declared {self.num_node_types} node types"
            )

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def num_edge_types(self) -> int:
        return len(self.adjacencies)

    def labeled_ids(self):
        return np.flatnonzero(self.labels >= 0)

    def with_adjacencies(self, adjacencies) -> "AmhenGraph":
        """Copy of this graph with the adjacency stack replaced."""
        return AmhenGraph(
            node_types=self.node_types,
            adjacencies=adjacencies,
            features=self.features,
            labels=self.labels,
            num_node_types=self.num_node_types,
        )
