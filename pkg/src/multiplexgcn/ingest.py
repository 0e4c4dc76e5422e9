"""Dataset files, deterministic splits and negative sampling.

File formats (UTF-8, LF):
  meta.txt      first line ``n <int> m <int> num_edge_types <int>
                num_node_types <int>``, then one ``node_id node_type``
                line per node
  edges.tsv     ``src<TAB>dst<TAB>edge_type``; ``#`` comment lines allowed
  features.tsv  ``node_id f_1 ... f_m``
  labels.tsv    ``node_id class_id`` (optional; missing nodes unlabeled)
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass

import numpy as np

from .graph import (AmhenGraph, GraphDataError, build_subgraph_adjacencies,
                    undirected_pairs)

logger = logging.getLogger(__name__)

META_FILE = "meta.txt"
EDGES_FILE = "edges.tsv"
FEATURES_FILE = "features.tsv"
LABELS_FILE = "labels.tsv"

DEFAULT_LINK_RATIOS = (0.85, 0.05, 0.10)
DEFAULT_NODE_RATIOS = (0.8, 0.1, 0.1)


class LoadError(ValueError):
    """Parse or consistency failure, pointing at the offending file line."""


class SplitError(ValueError):
    """A partition cannot be formed as requested."""


def _data_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            yield lineno, line


def _parse_int(token, path, lineno, what):
    try:
        return int(token)
    except ValueError:
        raise LoadError(f"{path}:{lineno}: {what} is not an integer: "
                        f"{token!r}") from None


def load_graph(edges_path, features_path, labels_path=None, meta_path=None):
    """Load and validate a graph from the text formats above.

    A missing or absent labels file leaves every node unlabeled (-1).
    """
    if meta_path is None:
        raise ValueError("meta_path is required")
    lines = _data_lines(meta_path)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise LoadError(f"{meta_path}:1: empty meta file") from None
    tokens = header.split()
    if (len(tokens) != 8 or tokens[0] != "n" or tokens[2] != "m"
            or tokens[4] != "num_edge_types" or tokens[6] != "num_node_types"):
        raise LoadError(
            f"{meta_path}:{lineno}: expected 'n <int> m <int> "
            f"num_edge_types <int> num_node_types <int>', got {header!r}"
        )
    n = _parse_int(tokens[1], meta_path, lineno, "n")
    m = _parse_int(tokens[3], meta_path, lineno, "m")
    num_edge_types = _parse_int(tokens[5], meta_path, lineno,
                                "num_edge_types")
    num_node_types = _parse_int(tokens[7], meta_path, lineno,
                                "num_node_types")

    node_types = np.full(n, -1, dtype=np.int64)
    for lineno, line in lines:
        tokens = line.split()
        if len(tokens) != 2:
            raise LoadError(f"{meta_path}:{lineno}: expected "
                            f"'node_id node_type', got {line!r}")
        i = _parse_int(tokens[0], meta_path, lineno, "node id")
        t = _parse_int(tokens[1], meta_path, lineno, "node type")
        if not 0 <= i < n:
            raise LoadError(f"{meta_path}:{lineno}: node id {i} out of "
                            f"range for n={n}")
        if not 0 <= t < num_node_types:
            raise LoadError(f"{meta_path}:{lineno}: node type {t} out of "
                            f"range ({num_node_types} declared)")
        node_types[i] = t
    if np.any(node_types < 0):
        missing = int(np.flatnonzero(node_types < 0)[0])
        raise LoadError(f"{meta_path}: node {missing} has no type line")

    edges = []
    for lineno, line in _data_lines(edges_path):
        tokens = line.split()
        if len(tokens) != 3:
            raise LoadError(f"{edges_path}:{lineno}: expected "
                            f"'src dst edge_type', got {line!r}")
        u = _parse_int(tokens[0], edges_path, lineno, "src")
        v = _parse_int(tokens[1], edges_path, lineno, "dst")
        r = _parse_int(tokens[2], edges_path, lineno, "edge type")
        if not (0 <= u < n and 0 <= v < n):
            raise LoadError(f"{edges_path}:{lineno}: node id out of range "
                            f"in ({u}, {v}) for n={n}")
        if not 0 <= r < num_edge_types:
            raise LoadError(f"{edges_path}:{lineno}: edge type {r} out of "
                            f"range ({num_edge_types} declared)")
        edges.append((u, v, r))

    features = np.zeros((n, m), dtype=np.float64)
    seen = np.zeros(n, dtype=bool)
    for lineno, line in _data_lines(features_path):
        tokens = line.split()
        if len(tokens) != m + 1:
            raise LoadError(
                f"{features_path}:{lineno}: expected node id plus {m} "
                f"feature values, got {len(tokens) - 1}"
            )
        i = _parse_int(tokens[0], features_path, lineno, "node id")
        if not 0 <= i < n:
            raise LoadError(f"{features_path}:{lineno}: node id {i} out of "
                            f"range for n={n}")
        if seen[i]:
            raise LoadError(f"{features_path}:{lineno}: duplicate feature "
                            f"row for node {i}")
        try:
            features[i] = [float(t) for t in tokens[1:]]
        except ValueError:
            raise LoadError(f"{features_path}:{lineno}: non-numeric "
                            f"feature value") from None
        seen[i] = True
    if not seen.all():
        missing = int(np.flatnonzero(~seen)[0])
        raise LoadError(f"{features_path}: no feature row for node "
                        f"{missing}")

    labels = np.full(n, -1, dtype=np.int64)
    if labels_path is not None and os.path.exists(labels_path):
        for lineno, line in _data_lines(labels_path):
            tokens = line.split()
            if len(tokens) != 2:
                raise LoadError(f"{labels_path}:{lineno}: expected "
                                f"'node_id class_id', got {line!r}")
            i = _parse_int(tokens[0], labels_path, lineno, "node id")
            c = _parse_int(tokens[1], labels_path, lineno, "class id")
            if not 0 <= i < n:
                raise LoadError(f"{labels_path}:{lineno}: node id {i} out "
                                f"of range for n={n}")
            if c < 0:
                raise LoadError(f"{labels_path}:{lineno}: class id must be "
                                f">= 0, got {c}")
            labels[i] = c

    try:
        adjacencies = build_subgraph_adjacencies(edges, n, num_edge_types)
    except GraphDataError as exc:  # range errors already caught above
        raise LoadError(f"{edges_path}: {exc}") from exc
    return AmhenGraph(node_types=node_types, adjacencies=adjacencies,
                      features=features, labels=labels,
                      num_node_types=num_node_types)


def load_dataset(directory):
    """Load a graph from a directory laid out with the standard filenames."""
    return load_graph(
        edges_path=os.path.join(directory, EDGES_FILE),
        features_path=os.path.join(directory, FEATURES_FILE),
        labels_path=os.path.join(directory, LABELS_FILE),
        meta_path=os.path.join(directory, META_FILE),
    )


def write_dataset(g, directory):
    """Write a graph back out in the exact formats load_graph reads."""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, META_FILE), "w", encoding="utf-8") as fh:
        fh.write(f"n {g.n} m {g.num_features} num_edge_types "
                 f"{g.num_edge_types} num_node_types {g.num_node_types}\n")
        for i in range(g.n):
            fh.write(f"{i} {int(g.node_types[i])}\n")
    with open(os.path.join(directory, EDGES_FILE), "w",
              encoding="utf-8") as fh:
        for r, adj in enumerate(g.adjacencies):
            for u, v in undirected_pairs(adj):
                fh.write(f"{u}\t{v}\t{r}\n")
    with open(os.path.join(directory, FEATURES_FILE), "w",
              encoding="utf-8") as fh:
        for i in range(g.n):
            values = "\t".join(f"{x:.17g}" for x in g.features[i])
            fh.write(f"{i}\t{values}\n")
    with open(os.path.join(directory, LABELS_FILE), "w",
              encoding="utf-8") as fh:
        for i in np.flatnonzero(g.labels >= 0):
            fh.write(f"{i}\t{int(g.labels[i])}\n")


# ---------------------------------------------------------------------------
# Splits

@dataclass
class LinkSplit:
    """Per-edge-type positive/negative pair partitions.

    All positive and negative sets are pairwise disjoint; every negative
    pair is absent from its edge type's full adjacency and connects nodes
    whose types match an observed endpoint-type combination of that edge
    type.
    """

    train_pos: list
    val_pos: list
    test_pos: list
    train_neg: list
    val_neg: list
    test_neg: list
    seed: int
    ratios: tuple = DEFAULT_LINK_RATIOS

    @property
    def num_edge_types(self) -> int:
        return len(self.train_pos)


@dataclass
class NodeSplit:
    train_ids: np.ndarray
    val_ids: np.ndarray
    test_ids: np.ndarray
    seed: int
    ratios: tuple = DEFAULT_NODE_RATIOS


def _round_half_up(x):
    return int(np.floor(x + 0.5))


def _check_ratios(ratios):
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ValueError(f"ratios must be three non-negative values, "
                         f"got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")


def _partition_sizes(k, ratios, strict, what):
    if strict and k < 3:
        raise SplitError(f"{what} has only {k} members; need at least 3 "
                         f"(one per partition)")
    if k >= 3:
        n_val = max(1, _round_half_up(ratios[1] * k))
        n_test = max(1, _round_half_up(ratios[2] * k))
    else:
        n_val = _round_half_up(ratios[1] * k)
        n_test = _round_half_up(ratios[2] * k)
    while k - n_val - n_test < 1 and (n_val > 0 or n_test > 0):
        if n_val >= n_test and n_val > 0:
            n_val -= 1
        else:
            n_test -= 1
    n_train = k - n_val - n_test
    if strict and min(n_train, n_val, n_test) < 1:
        raise SplitError(f"{what}: cannot give every partition at least "
                         f"one member with ratios {ratios}")
    return n_train, n_val, n_test


def _endpoint_categories(adj, node_types):
    """Unordered node-type pairs observed among an adjacency's edges."""
    pairs = undirected_pairs(adj)
    cats = set()
    for u, v in pairs:
        a, b = int(node_types[u]), int(node_types[v])
        cats.add((min(a, b), max(a, b)))
    return sorted(cats)


class _NegativeSampler:
    """Uniform draws from the unobserved, type-compatible node pairs of one
    edge type, without replacement across calls."""

    def __init__(self, adj, node_types, categories):
        self.adj = adj
        self.node_types = np.asarray(node_types)
        self.categories = categories
        self.nodes_by_type = {
            t: np.flatnonzero(self.node_types == t)
            for t in {t for cat in categories for t in cat}
        }
        weights = []
        for a, b in categories:
            na = len(self.nodes_by_type[a])
            nb = len(self.nodes_by_type[b])
            weights.append(na * (na - 1) // 2 if a == b else na * nb)
        total = float(sum(weights))
        self.cumulative = (np.cumsum(weights) / total if total > 0
                           else np.zeros(0))
        indptr, indices = adj.indptr, adj.indices
        self.row_sets = [set(indices[indptr[i]:indptr[i + 1]])
                         for i in range(adj.shape[0])]
        self.used = set()

    def _candidate(self, rng):
        c = int(np.searchsorted(self.cumulative, rng.random(), side="right"))
        a, b = self.categories[min(c, len(self.categories) - 1)]
        ua = self.nodes_by_type[a]
        ub = self.nodes_by_type[b]
        u = int(ua[rng.integers(len(ua))])
        v = int(ub[rng.integers(len(ub))])
        return (min(u, v), max(u, v))

    def _all_candidates(self):
        for a, b in self.categories:
            ua = self.nodes_by_type[a]
            ub = self.nodes_by_type[b]
            for u in ua:
                for v in ub:
                    if u < v:
                        yield (int(u), int(v))

    def draw(self, count, rng, strict=True, what="negatives"):
        if count == 0:
            return np.zeros((0, 2), dtype=np.int64)
        if not self.categories:
            if strict:
                raise SplitError(f"cannot sample {what}: edge type has no "
                                 f"observed edges to define endpoint types")
            return np.zeros((0, 2), dtype=np.int64)
        out = []
        attempts = 0
        cap = 100 * count + 1000
        while len(out) < count and attempts < cap:
            attempts += 1
            u, v = self._candidate(rng)
            if u == v or (u, v) in self.used or v in self.row_sets[u]:
                continue
            self.used.add((u, v))
            out.append((u, v))
        if len(out) < count:
            pool = [p for p in self._all_candidates()
                    if p not in self.used and p[1] not in self.row_sets[p[0]]]
            short = count - len(out)
            if len(pool) >= short:
                chosen = rng.choice(len(pool), size=short, replace=False)
                for c in chosen:
                    pair = pool[int(c)]
                    self.used.add(pair)
                    out.append(pair)
            elif strict:
                raise SplitError(
                    f"cannot sample {count} {what}: only "
                    f"{len(out) + len(pool)} unobserved compatible pairs "
                    f"exist (graph too dense)")
            else:
                for pair in pool:
                    self.used.add(pair)
                    out.append(pair)
                logger.warning("sampled only %d of %d requested %s",
                               len(out), count, what)
        return np.array(out, dtype=np.int64).reshape(-1, 2)


def split_links(g, ratios=DEFAULT_LINK_RATIOS, seed=0, strict=True):
    """Deterministic per-edge-type split of the positive pairs, plus
    equally sized negative sets drawn from unobserved type-compatible
    pairs.

    ``strict=False`` tolerates edge types too small to populate every
    partition and negative-pair shortfalls (both logged); the default
    raises.
    """
    _check_ratios(ratios)
    rng = np.random.default_rng(seed)
    parts = {k: [] for k in ("train_pos", "val_pos", "test_pos",
                             "train_neg", "val_neg", "test_neg")}
    for r, adj in enumerate(g.adjacencies):
        pairs = undirected_pairs(adj)
        k = len(pairs)
        n_train, n_val, n_test = _partition_sizes(
            k, ratios, strict, f"edge type {r}")
        order = rng.permutation(k)
        pairs = pairs[order]
        parts["train_pos"].append(pairs[:n_train])
        parts["val_pos"].append(pairs[n_train:n_train + n_val])
        parts["test_pos"].append(pairs[n_train + n_val:])
        sampler = _NegativeSampler(adj, g.node_types,
                                   _endpoint_categories(adj, g.node_types))
        for name, want in (("train_neg", n_train), ("val_neg", n_val),
                           ("test_neg", n_test)):
            parts[name].append(sampler.draw(
                want, rng, strict=strict,
                what=f"negatives for edge type {r}"))
    return LinkSplit(seed=seed, ratios=tuple(ratios), **parts)


def apply_training_adjacency(g, split):
    """Graph whose adjacencies contain only the training positives, so
    validation and test edges stay hidden from the aggregated matrix."""
    triples = []
    for r, pairs in enumerate(split.train_pos):
        for u, v in pairs:
            triples.append((int(u), int(v), r))
    return g.with_adjacencies(
        build_subgraph_adjacencies(triples, g.n, split.num_edge_types))


def sample_training_negatives(train_g, split, negatives_per_positive, rng):
    """Fresh negatives for one training epoch, rejection-checked against
    the training adjacency (the trainer never sees held-out edges)."""
    out = []
    for r, adj in enumerate(train_g.adjacencies):
        count = len(split.train_pos[r]) * negatives_per_positive
        if count == 0:
            continue
        sampler = _NegativeSampler(
            adj, train_g.node_types,
            _endpoint_categories(adj, train_g.node_types))
        neg = sampler.draw(count, rng, strict=False,
                           what=f"training negatives for edge type {r}")
        if len(neg):
            out.append(neg)
    if not out:
        raise SplitError("no training negatives could be sampled; the "
                         "graph is complete for every edge type")
    return np.vstack(out)


def split_nodes(g, ratios=DEFAULT_NODE_RATIOS, seed=0, stratified=True):
    """Deterministic split of the labeled nodes, stratified by class.

    A class with fewer than 3 labeled nodes raises; rerun with
    ``stratified=False`` to split the pooled labeled set instead.
    """
    _check_ratios(ratios)
    labeled = g.labeled_ids()
    if len(labeled) == 0:
        raise SplitError("graph has no labeled nodes")
    rng = np.random.default_rng(seed)
    groups = []
    if stratified:
        for c in np.unique(g.labels[labeled]):
            ids = labeled[g.labels[labeled] == c]
            if len(ids) < 3:
                raise SplitError(
                    f"class {int(c)} has only {len(ids)} labeled nodes; "
                    f"pass stratified=False to split without stratification")
            groups.append(ids)
    else:
        groups.append(labeled)
    train, val, test = [], [], []
    for ids in groups:
        k = len(ids)
        n_train, n_val, n_test = _partition_sizes(k, ratios, True,
                                                  "labeled node set")
        ids = ids[rng.permutation(k)]
        train.append(ids[:n_train])
        val.append(ids[n_train:n_train + n_val])
        test.append(ids[n_train + n_val:])
    return NodeSplit(
        train_ids=np.sort(np.concatenate(train)),
        val_ids=np.sort(np.concatenate(val)),
        test_ids=np.sort(np.concatenate(test)),
        seed=seed,
        ratios=tuple(ratios),
    )
