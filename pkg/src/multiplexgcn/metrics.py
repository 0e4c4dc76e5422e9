"""Ranking and classification metrics, link evaluation averaged over edge
types, and the downstream logistic-regression classifier."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit
from scipy.stats import rankdata

from . import model

LINK_METRIC_NAMES = ("roc_auc", "pr_auc", "f1")


@dataclass
class ScoredPairSet:
    """Scores with binary relevance labels for one edge type."""

    scores: np.ndarray
    labels: np.ndarray
    edge_type: int = 0

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels).astype(bool)
        if self.scores.shape != self.labels.shape:
            raise ValueError("scores and labels must have equal length")


def _require_both_classes(labels, name):
    labels = np.asarray(labels).astype(bool)
    pos = int(labels.sum())
    neg = len(labels) - pos
    if pos == 0 or neg == 0:
        raise ValueError(f"{name} needs both classes present "
                         f"({pos} positives, {neg} negatives)")
    return labels, pos, neg


def roc_auc(scores, labels):
    """Probability a random positive outscores a random negative, ties
    counted one half (the Mann-Whitney statistic)."""
    labels, pos, neg = _require_both_classes(labels, "roc_auc")
    ranks = rankdata(np.asarray(scores, dtype=np.float64))
    return float((ranks[labels].sum() - pos * (pos + 1) / 2.0) / (pos * neg))


def pr_auc(scores, labels):
    """Average precision: the step-wise integral of precision over recall
    at every distinct score threshold."""
    labels, pos, _ = _require_both_classes(labels, "pr_auc")
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order].astype(np.float64)
    tp = np.cumsum(y)
    fp = np.cumsum(1.0 - y)
    # keep only the last index of each tied-score group
    boundary = np.r_[s[1:] != s[:-1], True]
    precision = tp[boundary] / (tp[boundary] + fp[boundary])
    recall = tp[boundary] / pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def f1_binary(scores, labels, threshold=0.5):
    """F1 with positives predicted where sigmoid(score) >= threshold;
    0 by convention when nothing is predicted positive."""
    labels, _, _ = _require_both_classes(labels, "f1_binary")
    pred = expit(np.asarray(scores, dtype=np.float64)) >= threshold
    tp = int(np.sum(pred & labels))
    fp = int(np.sum(pred & ~labels))
    fn = int(np.sum(~pred & labels))
    if tp == 0:
        return 0.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


def macro_micro_f1(predicted, true):
    """(macro, micro) F1 for single-label multiclass predictions.

    Macro averages per-class F1 over the classes present in either the
    predictions or the truth; micro pools the confusion counts (and equals
    accuracy for single-label problems).
    """
    predicted = np.asarray(predicted)
    true = np.asarray(true)
    if predicted.shape != true.shape or predicted.size == 0:
        raise ValueError("predicted and true must be equal-length and "
                         "nonempty")
    classes = np.union1d(predicted, true)
    f1s = []
    tp_total = fp_total = fn_total = 0
    for c in classes:
        tp = int(np.sum((predicted == c) & (true == c)))
        fp = int(np.sum((predicted == c) & (true != c)))
        fn = int(np.sum((predicted != c) & (true == c)))
        f1s.append(0.0 if tp == 0 else 2.0 * tp / (2.0 * tp + fp + fn))
        tp_total += tp
        fp_total += fp
        fn_total += fn
    macro = float(np.mean(f1s))
    micro = (0.0 if tp_total == 0
             else 2.0 * tp_total / (2.0 * tp_total + fp_total + fn_total))
    return macro, float(micro)


@dataclass
class LinkEvalResult:
    per_type: dict  # edge type -> {metric: value}
    macro: dict     # unweighted mean over evaluated edge types
    partition: str


def scored_pairs_for_type(h, split, partition, edge_type):
    pos = np.asarray(getattr(split, f"{partition}_pos")[edge_type])
    neg = np.asarray(getattr(split, f"{partition}_neg")[edge_type])
    scores = np.concatenate([model.score_pairs(h, pos),
                             model.score_pairs(h, neg)])
    labels = np.concatenate([np.ones(len(pos), dtype=bool),
                             np.zeros(len(neg), dtype=bool)])
    return ScoredPairSet(scores, labels, edge_type)


def pooled_link_auc(h, split, partition="val"):
    """ROC-AUC of every pair in the partition, pooled across edge types.
    One number, used for model selection during training."""
    scores, labels = [], []
    for r in range(split.num_edge_types):
        scored = scored_pairs_for_type(h, split, partition, r)
        scores.append(scored.scores)
        labels.append(scored.labels)
    scores = np.concatenate(scores)
    labels = np.concatenate(labels)
    if not labels.any() or labels.all():
        raise ValueError(f"pooled {partition!r} pairs are single-class")
    return roc_auc(scores, labels)


def evaluate_links(h, split, partition="test"):
    """Link metrics per edge type plus their unweighted mean.

    Edge types whose partition is empty on either side are skipped; if no
    edge type is evaluable the call raises.
    """
    if partition not in ("val", "test", "train"):
        raise ValueError(f"unknown partition {partition!r}")
    per_type = {}
    for r in range(split.num_edge_types):
        scored = scored_pairs_for_type(h, split, partition, r)
        if not scored.labels.any() or scored.labels.all():
            continue
        per_type[r] = {
            "roc_auc": roc_auc(scored.scores, scored.labels),
            "pr_auc": pr_auc(scored.scores, scored.labels),
            "f1": f1_binary(scored.scores, scored.labels),
        }
    if not per_type:
        raise ValueError(f"no edge type has a nonempty {partition!r} "
                         f"partition to evaluate")
    macro = {name: float(np.mean([m[name] for m in per_type.values()]))
             for name in LINK_METRIC_NAMES}
    return LinkEvalResult(per_type=per_type, macro=macro,
                          partition=partition)


# ---------------------------------------------------------------------------
# Downstream multinomial logistic regression

@dataclass
class ClassifierModel:
    weights: np.ndarray  # (num_classes, dim)
    bias: np.ndarray     # (num_classes,)
    classes: np.ndarray  # original class ids, ascending
    final_loss: float = field(default=np.nan, repr=False)


def _softmax_rows(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(shifted)
    return p / p.sum(axis=1, keepdims=True)


def fit_logistic(h_train, y_train, l2=1e-3, iters=500, init=None):
    """Multinomial logistic regression by L-BFGS on the summed softmax
    cross entropy plus (l2/2)*||W||^2 (bias unpenalized), run to gradient
    norm < 1e-6 or the iteration cap.  Zero iterations leaves the zero
    init, i.e. a uniform-probability model."""
    h_train = np.asarray(h_train, dtype=np.float64)
    y_train = np.asarray(y_train)
    classes = np.unique(y_train)
    if len(classes) < 2:
        raise ValueError(f"need at least two classes, got {classes}")
    k = len(classes)
    dim = h_train.shape[1]
    y_idx = np.searchsorted(classes, y_train)
    onehot = np.zeros((len(y_idx), k))
    onehot[np.arange(len(y_idx)), y_idx] = 1.0

    def unpack(theta):
        w = theta[:k * dim].reshape(k, dim)
        b = theta[k * dim:]
        return w, b

    def objective(theta):
        w, b = unpack(theta)
        logits = h_train @ w.T + b
        m = logits.max(axis=1)
        logz = np.log(np.exp(logits - m[:, None]).sum(axis=1)) + m
        loss = float((logz - logits[np.arange(len(y_idx)), y_idx]).sum())
        loss += 0.5 * l2 * float(np.sum(w * w))
        gl = _softmax_rows(logits) - onehot
        gw = gl.T @ h_train + l2 * w
        gb = gl.sum(axis=0)
        return loss, np.concatenate([gw.ravel(), gb])

    theta0 = (np.zeros(k * dim + k) if init is None
              else np.asarray(init, dtype=np.float64))
    if iters <= 0:
        w, b = unpack(theta0)
        return ClassifierModel(weights=w.copy(), bias=b.copy(),
                               classes=classes,
                               final_loss=objective(theta0)[0])
    result = minimize(objective, theta0, jac=True, method="L-BFGS-B",
                      options={"maxiter": int(iters), "gtol": 1e-6,
                               "ftol": 1e-14, "maxfun": 10 * int(iters) + 10})
    w, b = unpack(result.x)
    return ClassifierModel(weights=w, bias=b, classes=classes,
                           final_loss=float(result.fun))


def predict_proba(clf, h):
    return _softmax_rows(np.asarray(h) @ clf.weights.T + clf.bias)


def predict(clf, h):
    """Class ids; argmax ties break to the lowest class index."""
    return clf.classes[np.argmax(predict_proba(clf, h), axis=1)]


def evaluate_nodes(h, labels, split, partition="test", l2=1e-3, iters=500):
    """Downstream scoring of embeddings on node classification: fit a
    logistic regression on the training ids, report (macro, micro) F1 on
    the requested partition."""
    ids = getattr(split, f"{partition}_ids")
    clf = fit_logistic(h[split.train_ids], np.asarray(labels)[split.train_ids],
                       l2=l2, iters=iters)
    pred = predict(clf, h[ids])
    macro, micro = macro_micro_f1(pred, np.asarray(labels)[ids])
    return {"macro_f1": macro, "micro_f1": micro}


# ---------------------------------------------------------------------------
# Report files

def write_metrics_report(path, rows):
    """TSV report; rows are (task, group, metric, value, seed) tuples where
    group is an edge type, a class tag, or 'macro'/'summary'."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("task\tgroup\tmetric\tvalue\tseed\n")
        for task, group, metric, value, seed in rows:
            fh.write(f"{task}\t{group}\t{metric}\t{value:.17g}\t{seed}\n")


def summary_rows(task, metric_values, seeds):
    """Mean +- std summary rows across a seed sweep."""
    rows = []
    for metric, values in metric_values.items():
        values = np.asarray(values, dtype=np.float64)
        rows.append((task, "summary_mean", metric, float(values.mean()),
                     ",".join(str(s) for s in seeds)))
        rows.append((task, "summary_std", metric,
                     float(values.std(ddof=0)),
                     ",".join(str(s) for s in seeds)))
    return rows
