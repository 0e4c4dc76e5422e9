"""Multiplex heterogeneous network embedding.

Learns node embeddings for attributed networks with several edge types by
aggregating per-relation adjacencies with trainable weights and propagating
attributes through activation-free graph convolution layers whose outputs
are fused across depths.

This top-level module is intentionally import-light (no numpy) so the CLI
entry point can pin threading environment variables before the numerical
stack loads.  Import the submodules directly::

    from multiplexgcn import graph, ingest, model, training, metrics
"""

__version__ = "0.1.0"
