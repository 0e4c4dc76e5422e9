"""Forward model: relation aggregation, activation-free convolution stack,
layer fusion, pair scoring and the classification head.

Every layer computes ``H_i = aggregated @ H_{i-1} @ W_i`` with no bias and
no nonlinearity, so the whole map is linear in the node attributes; the
fused embedding averages the per-layer outputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .graph import spmm, weighted_sum

CHECKPOINT_MAGIC = "multiplexgcn-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class ModelParams:
    """Trainable state.

    relation_weights : (R,) float64, one scalar per edge type
    layer_weights    : [W_1 (m x d), W_2..W_l (d x d)]
    classifier       : optional (num_classes x d) head for the node task
    """

    relation_weights: np.ndarray
    layer_weights: list
    classifier: np.ndarray | None = None

    def __post_init__(self):
        self.relation_weights = np.asarray(self.relation_weights,
                                           dtype=np.float64)
        self.layer_weights = [np.asarray(w, dtype=np.float64)
                              for w in self.layer_weights]
        if self.classifier is not None:
            self.classifier = np.asarray(self.classifier, dtype=np.float64)
        if not self.layer_weights:
            raise ValueError("need at least one convolution layer")

    @property
    def num_layers(self) -> int:
        return len(self.layer_weights)

    @property
    def dim(self) -> int:
        return self.layer_weights[-1].shape[1]

    @property
    def feature_dim(self) -> int:
        return self.layer_weights[0].shape[0]

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.relation_weights.copy(),
            [w.copy() for w in self.layer_weights],
            None if self.classifier is None else self.classifier.copy(),
        )


def init_params(num_edge_types, feature_dim, dim, num_layers,
                num_classes=None, seed=0):
    """Seeded initialization: relation weights all ones (the unweighted-sum
    baseline), layer and classifier weights uniform in
    +-sqrt(6 / (fan_in + fan_out))."""
    if num_layers < 1:
        raise ValueError(f"num_layers must be >= 1, got {num_layers}")
    rng = np.random.default_rng(seed)
    weights = []
    fan_in = feature_dim
    for _ in range(num_layers):
        bound = np.sqrt(6.0 / (fan_in + dim))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, dim)))
        fan_in = dim
    classifier = None
    if num_classes is not None:
        bound = np.sqrt(6.0 / (dim + num_classes))
        classifier = rng.uniform(-bound, bound, size=(num_classes, dim))
    return ModelParams(np.ones(num_edge_types), weights, classifier)


def aggregate(g, relation_weights):
    """Weighted sum of the per-relation adjacencies."""
    if len(relation_weights) != g.num_edge_types:
        raise ValueError(
            f"got {len(relation_weights)} relation weights for "
            f"{g.num_edge_types} edge types"
        )
    return weighted_sum(g.adjacencies, relation_weights)


@dataclass
class ForwardTrace:
    """Everything one forward pass produced, retained for backprop.

    ``fused`` is the embedding matrix; ``per_layer`` the individual layer
    outputs; ``layer_inputs`` the (post-dropout) input of each layer and
    ``propagated`` the sparse product ``aggregated @ layer_input``, both
    cached for the backward pass.  ``dropout_masks`` is None in eval mode.
    """

    aggregated: object = field(repr=False)
    per_layer: list = field(repr=False)
    fused: np.ndarray = field(repr=False)
    fusion_coeffs: np.ndarray
    layer_inputs: list = field(repr=False)
    propagated: list = field(repr=False)
    dropout_masks: list | None = field(default=None, repr=False)
    keep_prob: float = 1.0


def fusion_coefficients(num_layers, last_layer_only=False):
    if last_layer_only:
        coeffs = np.zeros(num_layers)
        coeffs[-1] = 1.0
        return coeffs
    return np.full(num_layers, 1.0 / num_layers)


def forward(g, params, mode="eval", rng=None, dropout=0.5,
            last_layer_only=False):
    """Run the convolution stack.

    In ``train`` mode each layer's input (the attributes for layer 1, the
    previous output otherwise) is dropped with probability ``dropout`` and
    rescaled by the keep probability; ``eval`` mode is deterministic.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if g.num_features != params.feature_dim:
        raise ValueError(
            f"graph has {g.num_features} features but the first layer "
            f"expects {params.feature_dim}"
        )
    use_dropout = mode == "train" and dropout > 0.0
    if use_dropout and rng is None:
        raise ValueError("train-mode dropout needs an rng")
    if not 0.0 <= dropout < 1.0:
        raise ValueError(f"dropout must be in [0, 1), got {dropout}")

    aggregated = aggregate(g, params.relation_weights)
    keep = 1.0 - dropout
    h = g.features
    per_layer, layer_inputs, propagated = [], [], []
    masks = [] if use_dropout else None
    for w in params.layer_weights:
        if use_dropout:
            mask = (rng.random(h.shape) < keep).astype(np.float64)
            masks.append(mask)
            layer_in = h * mask / keep
        else:
            layer_in = h
        s = spmm(aggregated, layer_in)
        h = s @ w
        layer_inputs.append(layer_in)
        propagated.append(s)
        per_layer.append(h)
    coeffs = fusion_coefficients(params.num_layers, last_layer_only)
    fused = sum(c * h_i for c, h_i in zip(coeffs, per_layer))
    return ForwardTrace(
        aggregated=aggregated,
        per_layer=per_layer,
        fused=fused,
        fusion_coeffs=coeffs,
        layer_inputs=layer_inputs,
        propagated=propagated,
        dropout_masks=masks,
        keep_prob=keep if use_dropout else 1.0,
    )


def score_pair(h, u, v):
    """Inner product of two embedding rows; sigmoid of it is the link
    probability at evaluation time."""
    return float(h[u] @ h[v])


def score_pairs(h, pairs):
    """Vectorized inner-product scores for an array of (u, v) pairs."""
    pairs = np.asarray(pairs)
    if pairs.size == 0:
        return np.zeros(0)
    return np.einsum("ij,ij->i", h[pairs[:, 0]], h[pairs[:, 1]])


def classify(classifier, h):
    """Row-wise softmax of ``h @ classifier.T``; rows sum to one."""
    if classifier is None:
        raise ValueError(
            "model has no classifier head (trained unsupervised?)"
        )
    logits = h @ classifier.T
    logits = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    return p / p.sum(axis=1, keepdims=True)


def _checkpoint_blocks(params):
    blocks = [("relation_weights", params.relation_weights)]
    for i, w in enumerate(params.layer_weights):
        blocks.append((f"layer_{i}", w))
    if params.classifier is not None:
        blocks.append(("classifier", params.classifier))
    return blocks


def save_checkpoint(path, params, extra=None):
    """Versioned binary dump: one JSON header line describing every block,
    then the raw little-endian float64 buffers in order.  Deterministic
    bytes for identical params, so artifacts replay bitwise."""
    blocks = _checkpoint_blocks(params)
    header = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "num_layers": params.num_layers,
        "dim": params.dim,
        "feature_dim": params.feature_dim,
        "num_edge_types": int(params.relation_weights.shape[0]),
        "num_classes": (None if params.classifier is None
                        else int(params.classifier.shape[0])),
        "blocks": [[name, list(arr.shape)] for name, arr in blocks],
        "extra": dict(extra or {}),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for _, arr in blocks:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(params, header)``."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("magic") != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a model checkpoint")
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(
                f"unsupported checkpoint version {header.get('version')}"
            )
        arrays = {}
        for name, shape in header["blocks"]:
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            arrays[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    layer_weights = [arrays[f"layer_{i}"]
                     for i in range(header["num_layers"])]
    params = ModelParams(
        relation_weights=arrays["relation_weights"],
        layer_weights=layer_weights,
        classifier=arrays.get("classifier"),
    )
    return params, header
