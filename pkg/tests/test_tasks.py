"""Decoders, losses, classification metrics, and graph propagation."""

import numpy as np
import pytest

from riemres import autodiff as ad
from riemres import tasks
from riemres.errors import PreconditionError


def test_fermi_dirac_closed_forms():
    # d^2 == r gives probability exactly one half
    assert abs(tasks.fermi_dirac_score(np.sqrt(2.0), r=2.0, t=1.0) - 0.5) < 1e-12
    # d = sqrt(3), r = 2, t = 1: sigmoid(-(3 - 2)) = 1 / (e + 1)
    got = tasks.fermi_dirac_score(np.sqrt(3.0), r=2.0, t=1.0)
    assert abs(got - 1.0 / (np.e + 1.0)) < 1e-12


def test_fermi_dirac_monotone_decreasing_in_distance():
    d = np.linspace(0.0, 5.0, 200)
    p = tasks.fermi_dirac_score(d, r=2.0, t=0.7)
    assert (np.diff(p) < 0).all()
    assert ((p > 0) & (p < 1)).all()


def test_fermi_dirac_rejects_nonpositive_temperature():
    with pytest.raises(PreconditionError):
        tasks.fermi_dirac_score(1.0, r=2.0, t=0.0)


def test_fermi_dirac_decoder_matches_score():
    dec = tasks.FermiDiracDecoder(r_init=2.0, t_init=1.0)
    d = np.array([0.5, 1.0, 2.0])
    got = ad.value_of(dec(d))
    want = tasks.fermi_dirac_score(d, r=2.0, t=1.0)
    assert np.abs(got - want).max() < 1e-12


def test_cross_entropy_uniform_scores():
    for c in (2, 3, 7):
        loss = ad.value_of(tasks.softmax_cross_entropy(np.zeros(c), 0))
        assert abs(loss - np.log(c)) < 1e-12


def test_cross_entropy_two_class_closed_form():
    # scores (1, 0): label 1 pays log(1 + e), label 0 pays log(1 + e) - 1
    scores = np.array([1.0, 0.0])
    loss1 = ad.value_of(tasks.softmax_cross_entropy(scores, 1))
    assert abs(loss1 - 1.3132616875182228) < 1e-12
    loss0 = ad.value_of(tasks.softmax_cross_entropy(scores, 0))
    assert abs(loss0 - 0.31326168751822286) < 1e-12


def test_cross_entropy_label_range():
    with pytest.raises(PreconditionError):
        tasks.softmax_cross_entropy(np.zeros(3), 3)


def test_cross_entropy_batch_matches_single():
    rng = np.random.default_rng(0)
    scores = rng.normal(size=(6, 4))
    labels = rng.integers(0, 4, size=6)
    got = ad.value_of(tasks.softmax_cross_entropy_batch(scores, labels))
    want = np.mean([ad.value_of(tasks.softmax_cross_entropy(s, int(l)))
                    for s, l in zip(scores, labels)])
    assert abs(got - want) < 1e-12


def test_cross_entropy_batch_gradient():
    rng = np.random.default_rng(1)
    p = ad.Parameter(rng.normal(size=(5, 3)), name="scores")
    labels = rng.integers(0, 3, size=5)
    with ad.Tape() as tape:
        loss = tasks.softmax_cross_entropy_batch(p, labels)
    g = tape.gradients(loss)[p]
    # analytic softmax gradient: (softmax - onehot) / N
    e = np.exp(p.data - p.data.max(axis=-1, keepdims=True))
    sm = e / e.sum(axis=-1, keepdims=True)
    sm[np.arange(5), labels] -= 1.0
    assert np.abs(g - sm / 5.0).max() < 1e-12


def test_binary_cross_entropy_closed_form():
    loss = ad.value_of(tasks.binary_cross_entropy(
        np.array([0.5, 0.5]), np.array([1, 0])))
    assert abs(loss - np.log(2.0)) < 1e-12


def test_f1_micro_examples():
    assert tasks.f1_micro([0, 1, 2, 1], [0, 1, 2, 1]) == 1.0
    assert tasks.f1_micro([0, 1, 2, 1], [0, 0, 2, 1]) == 0.75
    assert tasks.f1_micro([1, 1], [0, 0]) == 0.0


def test_f1_micro_rejects_empty_or_mismatched():
    with pytest.raises(PreconditionError):
        tasks.f1_micro([], [])
    with pytest.raises(PreconditionError):
        tasks.f1_micro([0, 1], [0])


def roc_auc_pair_oracle(scores, labels):
    # quadratic pair-counting definition, independent of the rank formula
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else (0.5 if p == n else 0.0)
    return total / (pos.size * neg.size)


def test_roc_auc_examples():
    assert tasks.roc_auc([0.1, 0.9], [0, 1]) == 1.0
    assert tasks.roc_auc([0.9, 0.1], [0, 1]) == 0.0
    assert tasks.roc_auc([0.5, 0.5], [0, 1]) == 0.5
    assert abs(tasks.roc_auc([0.1, 0.4, 0.35, 0.8],
                             [0, 0, 1, 1]) - 0.75) < 1e-12


def test_roc_auc_matches_pair_oracle():
    rng = np.random.default_rng(2)
    for _ in range(50):
        n = int(rng.integers(4, 51))
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        # quantized scores force ties through the tie-handling path
        scores = np.round(rng.normal(size=n), 1)
        assert tasks.roc_auc(scores, labels) == roc_auc_pair_oracle(scores, labels)


def test_roc_auc_rejects_single_class():
    with pytest.raises(PreconditionError):
        tasks.roc_auc([0.1, 0.9], [1, 1])


def test_normalized_adjacency_closed_forms():
    # edgeless graph: self-loops only, degree 1 everywhere
    assert np.abs(tasks.normalized_adjacency(np.zeros((3, 3))) - np.eye(3)).max() == 0
    # single edge on two nodes: (A + I) has degree 2 per row
    got = tasks.normalized_adjacency(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert np.abs(got - 0.5 * np.ones((2, 2))).max() < 1e-14


def test_normalized_adjacency_rejects_nonsquare():
    with pytest.raises(PreconditionError):
        tasks.normalized_adjacency(np.zeros((2, 3)))


def test_graph_premultiply_edgeless_is_identity():
    rng = np.random.default_rng(3)
    feats = rng.normal(size=(4, 3))
    out = tasks.graph_premultiply(np.zeros((4, 4)), 1, feats)
    assert np.abs(out - feats).max() < 1e-14


def test_graph_premultiply_two_node_average():
    feats = np.array([[2.0], [4.0]])
    out = tasks.graph_premultiply(np.array([[0.0, 1.0], [1.0, 0.0]]), 1, feats)
    assert np.abs(out - np.array([[3.0], [3.0]])).max() < 1e-14


def test_graph_premultiply_power_two_is_twice_power_one():
    rng = np.random.default_rng(4)
    adj = (rng.uniform(size=(6, 6)) < 0.4).astype(float)
    adj = np.triu(adj, 1)
    adj = adj + adj.T
    feats = rng.normal(size=(6, 2))
    once = tasks.graph_premultiply(adj, 1, feats)
    twice = tasks.graph_premultiply(adj, 1, once)
    assert np.abs(tasks.graph_premultiply(adj, 2, feats) - twice).max() < 1e-12


def test_graph_premultiply_validates_inputs():
    with pytest.raises(PreconditionError):
        tasks.graph_premultiply(np.zeros((3, 3)), 0, np.zeros((3, 2)))
    with pytest.raises(PreconditionError):
        tasks.graph_premultiply(np.zeros((3, 3)), 1, np.zeros((2, 2)))


def test_propagation_operator_matches_premultiply():
    rng = np.random.default_rng(5)
    adj = (rng.uniform(size=(5, 5)) < 0.5).astype(float)
    adj = np.triu(adj, 1)
    adj = adj + adj.T
    feats = rng.normal(size=(5, 3))
    op = tasks.propagation_operator(adj, 3)
    assert np.abs(op @ feats - tasks.graph_premultiply(adj, 3, feats)).max() < 1e-12
