import numpy as np
import pytest

from multiplexgcn import synth
from multiplexgcn.graph import AmhenGraph, build_subgraph_adjacencies


@pytest.fixture
def toy_graph():
    return synth.toy_retail_graph()


def random_multiplex_graph(rng, n=12, num_edge_types=2, feature_dim=5,
                           edge_prob=0.25, num_classes=None,
                           num_node_types=1):
    """Small random graph for property tests; nodes get round-robin types."""
    node_types = np.arange(n) % num_node_types
    edges = []
    for r in range(num_edge_types):
        for u in range(n):
            for v in range(u + 1, n):
                if rng.random() < edge_prob:
                    edges.append((u, v, r))
    adjacencies = build_subgraph_adjacencies(edges, n, num_edge_types)
    features = rng.standard_normal((n, feature_dim))
    labels = (rng.integers(0, num_classes, size=n)
              if num_classes is not None else None)
    return AmhenGraph(node_types=node_types, adjacencies=adjacencies,
                      features=features, labels=labels,
                      num_node_types=num_node_types)
