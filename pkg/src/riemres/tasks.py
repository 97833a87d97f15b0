"""Decoders, losses, metrics, and graph feature propagation."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import PreconditionError


class FermiDiracDecoder:
    """Distance-to-probability link decoder ``1 / (exp((d^2 - r) / t) + 1)``.

    ``r`` is learned directly; ``t`` is kept positive through a softplus
    reparameterization.
    """

    def __init__(self, r_init: float = 2.0, t_init: float = 1.0):
        self.r = ad.Parameter(np.array(float(r_init)), name="fd_r")
        # softplus(t_raw) == t_init
        t_raw = np.log(np.expm1(float(t_init)))
        self.t_raw = ad.Parameter(np.array(t_raw), name="fd_t")

    def __call__(self, d):
        t = ad.softplus(ad.lift(self.t_raw))
        d = ad.lift(d)
        return ad.sigmoid(-(d * d - ad.lift(self.r)) / t)

    def parameters(self):
        return [self.r, self.t_raw]


def fermi_dirac_score(d, r: float, t: float):
    """Link probability for distance ``d``; strictly decreasing in ``d``."""
    if t <= 0:
        raise PreconditionError("temperature t must be positive")
    out = ad.sigmoid(-(ad.lift(d) * ad.lift(d) - float(r)) * (1.0 / float(t)))
    return out if isinstance(d, (ad.Node, ad.Parameter)) else out.value


def softmax_cross_entropy(scores, label: int):
    """Cross entropy of one score vector against an integer label."""
    scores = ad.lift(scores)
    n = scores.value.shape[-1]
    if not 0 <= label < n:
        raise PreconditionError(f"label {label} out of range 0..{n - 1}")
    shift = ad.stop_gradient(ad.lift(scores.value.max()))
    lse = ad.log(ad.sum_(ad.exp(scores - shift))) + shift
    return lse - scores[label]


def softmax_cross_entropy_batch(scores, labels):
    """Mean cross entropy over a batch; ``scores`` (N, C), ``labels`` (N,)."""
    scores = ad.lift(scores)
    labels = np.asarray(labels, dtype=np.intp)
    shift = ad.stop_gradient(ad.lift(scores.value.max(axis=-1, keepdims=True)))
    lse = ad.log(ad.sum_(ad.exp(scores - shift), axis=-1)) + ad.reshape(shift, (-1,))
    picked = scores[np.arange(labels.size), labels]
    return ad.mean(lse - picked)


def binary_cross_entropy(probs, labels):
    """Mean BCE of probabilities in (0,1) against 0/1 labels."""
    probs = ad.lift(probs)
    labels = np.asarray(labels, dtype=np.float64)
    eps = 1e-12
    clipped = ad.clip(probs, lo=eps, hi=1.0 - eps)
    return -ad.mean(labels * ad.log(clipped) + (1.0 - labels) * ad.log(1.0 - clipped))


def f1_micro(predicted, truth, num_classes: int | None = None) -> float:
    """Micro-averaged F1; equals accuracy for single-label multiclass."""
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.size == 0 or predicted.shape != truth.shape:
        raise PreconditionError("need equal-length, nonempty label arrays")
    # micro precision == micro recall == accuracy when every example carries
    # exactly one predicted and one true label
    return float((predicted == truth).mean())


def roc_auc(scores, labels) -> float:
    """Probability a random positive outranks a random negative; ties count 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = int((labels == 1).sum())
    neg = int((labels == 0).sum())
    if pos == 0 or neg == 0:
        raise PreconditionError("ROC AUC requires both classes present")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    rank = 1.0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        avg = (rank + rank + (j - i)) / 2.0
        ranks[order[i:j + 1]] = avg
        rank += j - i + 1
        i = j + 1
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg)


def normalized_adjacency(adjacency: np.ndarray, add_self_loops: bool = True) -> np.ndarray:
    """Symmetric normalization ``D^{-1/2}(A + I)D^{-1/2}``.

    Self-loops guarantee positive degrees, so isolated nodes stay well
    defined, and keep powers of the operator bounded.
    """
    a = np.asarray(adjacency, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise PreconditionError("adjacency must be square")
    if add_self_loops:
        a = a + np.eye(a.shape[0])
    deg = a.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(deg)
    return a * inv_sqrt[:, None] * inv_sqrt[None, :]


def graph_premultiply(adjacency: np.ndarray, power: int, features,
                      normalized: bool = True):
    """Propagate features by the k-th power of the (normalized) adjacency."""
    if power < 1:
        raise PreconditionError("power must be >= 1")
    a = np.asarray(adjacency, dtype=np.float64)
    feats = ad.value_of(features)
    if a.shape[0] != feats.shape[0]:
        raise PreconditionError("adjacency and feature row counts differ")
    op = normalized_adjacency(a) if normalized else a
    out = ad.lift(features)
    for _ in range(power):
        out = ad.lift(op) @ out
    return out if isinstance(features, (ad.Node, ad.Parameter)) else out.value


def propagation_operator(adjacency: np.ndarray, power: int,
                         normalized: bool = True) -> np.ndarray:
    """The dense matrix applied by ``graph_premultiply`` (for reuse per epoch)."""
    op = normalized_adjacency(adjacency) if normalized else np.asarray(
        adjacency, dtype=np.float64)
    return np.linalg.matrix_power(op, power)
