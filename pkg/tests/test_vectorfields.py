"""Vector-field designs: embedded, feature-induced, and the four SPD forms."""

import numpy as np
import pytest

from riemres import autodiff as ad
from riemres import featuremaps as fm
from riemres import manifolds as mf
from riemres import vectorfields as vf
from riemres.errors import ConfigurationError


def identity_mlp(dim):
    net = vf.MLP([dim, dim], np.random.default_rng(0), nonlinearity=False)
    net.weights[0].data = np.eye(dim)
    net.biases[0].data = np.zeros(dim)
    return net


def zero_mlp(dim):
    net = vf.MLP([dim, dim], np.random.default_rng(0), nonlinearity=False,
                 zero_last=True)
    return net


# ---------------------------------------------------------------------------
# embedded design


def test_embedded_euclidean_is_the_raw_network():
    rng = np.random.default_rng(1)
    man = mf.make_manifold("euclidean", 3)
    net = vf.MLP([3, 5, 3], rng)
    field = vf.EmbeddedVectorField(man, net)
    x = rng.normal(size=(4, 3))
    assert np.allclose(ad.value_of(field.field(ad.lift(x))),
                       ad.value_of(net(ad.lift(x))), atol=1e-14)


def test_embedded_sphere_output_is_tangent():
    rng = np.random.default_rng(2)
    man = mf.make_manifold("sphere", 3)
    net = vf.MLP([4, 4], rng)
    field = vf.EmbeddedVectorField(man, net)
    x = man.random_point(rng, 6)
    out = ad.value_of(field.field(ad.lift(x)))
    assert np.abs((out * x).sum(axis=-1)).max() < 1e-9


def test_embedded_rejects_dim_mismatch():
    man = mf.make_manifold("euclidean", 3)
    with pytest.raises(ConfigurationError):
        vf.EmbeddedVectorField(man, vf.MLP([2, 2], np.random.default_rng(0)))


# ---------------------------------------------------------------------------
# feature-induced design


def test_feature_field_equals_transpose_composition():
    # with distance features in the positive half-space the field reduces to
    # W^T net(W x + b') for unit-norm rows W
    rng = np.random.default_rng(3)
    man = mf.make_manifold("euclidean", 3)
    bank = fm.HyperplaneBank.random(man, 4, rng)
    bank.offsets.data = np.zeros(4)
    # positive unit normals + positive inputs keep every |w.x| sign trivial
    w = np.abs(bank.weights.data)
    w /= np.sqrt((w * w).sum(axis=-1, keepdims=True))
    bank.weights.data = w
    net = vf.MLP([4, 4], rng)
    field = vf.FeatureInducedVectorField(bank, net)
    x = np.abs(rng.normal(size=(5, 3))) + 2.0
    out = ad.value_of(field.field(ad.lift(x)))
    want = ad.value_of(net(ad.lift(x @ w.T))) @ w
    assert np.abs(out - want).max() < 1e-10


def test_feature_field_deterministic_variant():
    # net = None means coefficients are the feature values themselves
    rng = np.random.default_rng(4)
    man = mf.make_manifold("euclidean", 2)
    bank = fm.HyperplaneBank.random(man, 1, rng)
    field = vf.FeatureInducedVectorField(bank, None)
    x = rng.normal(size=(3, 2)) + 5.0
    out = ad.value_of(field.field(ad.lift(x)))
    g = ad.value_of(bank.values(ad.lift(x)))
    want = ad.value_of(bank.combine_gradients(ad.lift(x), ad.lift(g)))
    assert np.abs(out - want).max() < 1e-12


def test_feature_field_propagation_mixes_rows():
    rng = np.random.default_rng(5)
    man = mf.make_manifold("euclidean", 2)
    bank = fm.HyperplaneBank.random(man, 3, rng)
    mix = np.full((4, 4), 0.25)
    field = vf.FeatureInducedVectorField(bank, None, propagate=mix)
    x = rng.normal(size=(4, 2))
    feats = ad.value_of(bank.values(ad.lift(x)))
    want = ad.value_of(bank.combine_gradients(ad.lift(x), ad.lift(mix @ feats)))
    assert np.abs(ad.value_of(field.field(ad.lift(x))) - want).max() < 1e-12


def test_feature_field_parameter_gradients():
    rng = np.random.default_rng(6)
    man = mf.make_manifold("poincare", 2)
    bank = fm.HorosphereBank.random(man, 3, rng)
    net = vf.MLP([3, 3], rng)
    field = vf.FeatureInducedVectorField(bank, net)
    x = rng.uniform(-0.3, 0.3, size=(4, 2))
    params = field.parameters()

    def build():
        out = field.field(ad.lift(x))
        return ad.sum_(out * out)

    with ad.Tape() as tape:
        loss = build()
    grads = tape.gradients(loss)
    numeric = ad.finite_diff_grad(lambda: float(ad.value_of(build())), params)
    for p in params:
        denom = max(float(np.abs(numeric[p]).max()), 1e-6)
        assert float(np.abs(grads[p] - numeric[p]).max()) / denom < 1e-4, p.name


# ---------------------------------------------------------------------------
# triangle packing


def test_upper_triangle_conventions():
    v = np.array([1.0, 2.0, 3.0])
    m = ad.value_of(vf.upper_to_sym(v, 2))
    assert np.allclose(m, [[1.0, 2.0], [2.0, 3.0]])
    back = ad.value_of(vf.sym_to_upper(m, 2))
    assert np.allclose(back, v)


def test_parsimonious_injection_example():
    man = mf.make_manifold("spd_affine", 2)
    field = vf.SPDParsimoniousVectorField(man, ad.Parameter(np.array([1.0, 0.0, 2.0])))
    out = ad.value_of(field.field(ad.lift(np.eye(2)[None])))
    assert np.allclose(out[0], [[1.0, 0.0], [0.0, 2.0]])


# ---------------------------------------------------------------------------
# SPD designs


def test_spd_embedded_identity_and_zero_nets():
    rng = np.random.default_rng(7)
    man = mf.make_manifold("spd_affine", 2)
    x = man.random_point(rng, 3)
    field = vf.SPDEmbeddedVectorField(man, identity_mlp(4))
    assert np.abs(ad.value_of(field.field(ad.lift(x))) - x).max() < 1e-12
    field = vf.SPDEmbeddedVectorField(man, zero_mlp(4))
    assert np.abs(ad.value_of(field.field(ad.lift(x)))).max() < 1e-14


def test_spd_embedded_output_symmetric():
    rng = np.random.default_rng(8)
    man = mf.make_manifold("spd_affine", 3)
    field = vf.SPDEmbeddedVectorField(man, vf.MLP([9, 9], rng))
    x = man.random_point(rng, 5)
    out = ad.value_of(field.field(ad.lift(x)))
    assert np.abs(out - np.swapaxes(out, -1, -2)).max() < 1e-12


def test_spd_structured_identity_net_is_identity():
    rng = np.random.default_rng(9)
    man = mf.make_manifold("spd_affine", 2)
    field = vf.SPDStructuredVectorField(man, identity_mlp(3))
    x = man.random_point(rng, 3)
    assert np.abs(ad.value_of(field.field(ad.lift(x))) - x).max() < 1e-12


def test_parsimonious_is_location_agnostic():
    rng = np.random.default_rng(10)
    man = mf.make_manifold("spd_affine", 3)
    field = vf.SPDParsimoniousVectorField(
        man, ad.Parameter(rng.normal(size=6), name="v"))
    x1, x2 = man.random_point(rng, 2)
    o1 = ad.value_of(field.field(ad.lift(x1[None])))
    o2 = ad.value_of(field.field(ad.lift(x2[None])))
    assert np.abs(o1 - o2).max() < 1e-14


def test_spectral_identity_cases():
    man = mf.make_manifold("spd_affine", 2)
    field = vf.SPDSpectralVectorField(man, ad.Parameter(np.zeros((2, 2))),
                                      identity_mlp(2))
    out = ad.value_of(field.field(ad.lift(np.eye(2)[None])))
    assert np.abs(out[0] - np.eye(2)).max() < 1e-10
    x = np.array([[2.0, 1.0], [1.0, 2.0]])[None]
    out = ad.value_of(field.field(ad.lift(x)))
    assert np.allclose(np.sort(np.linalg.eigvalsh(out[0])), [1.0, 3.0], atol=1e-9)
    zero = vf.SPDSpectralVectorField(man, ad.Parameter(np.zeros((2, 2))), zero_mlp(2))
    assert np.abs(ad.value_of(zero.field(ad.lift(x)))).max() < 1e-12


def test_spectral_spectrum_is_conjugation_invariant():
    rng = np.random.default_rng(11)
    man = mf.make_manifold("spd_affine", 3)
    field = vf.SPDSpectralVectorField(man, ad.Parameter(rng.normal(size=(3, 3)) * 0.1),
                                      vf.MLP([3, 3], rng))
    x = man.random_point(rng, 1)
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    a = np.linalg.eigvalsh(ad.value_of(field.field(ad.lift(x)))[0])
    b = np.linalg.eigvalsh(ad.value_of(field.field(ad.lift(
        (q @ x[0] @ q.T)[None])))[0])
    assert np.abs(np.sort(a) - np.sort(b)).max() < 1e-8


def test_all_fields_output_valid_tangents():
    rng = np.random.default_rng(12)
    cases = []
    eman = mf.make_manifold("euclidean", 3)
    cases.append((eman, vf.EmbeddedVectorField(eman, vf.MLP([3, 3], rng))))
    sman = mf.make_manifold("sphere", 3)
    cases.append((sman, vf.EmbeddedVectorField(sman, vf.MLP([4, 4], rng))))
    pman = mf.make_manifold("poincare", 3)
    cases.append((pman, vf.FeatureInducedVectorField(
        fm.HorosphereBank.random(pman, 4, rng), vf.MLP([4, 4], rng))))
    spd = mf.make_manifold("spd_affine", 3)
    for kind in ("spd_embedded", "spd_structured", "spd_parsimonious", "spd_spectral"):
        cases.append((spd, vf.make_spd_field(kind, spd, rng)))
    for man, field in cases:
        for _ in range(100):
            if isinstance(man, mf.PoincareBall):
                x = rng.uniform(-0.3, 0.3, size=(2, 3))
            else:
                x = man.random_point(rng, 2)
            out = ad.value_of(field.field(ad.lift(x)))
            assert np.isfinite(out).all()
            if isinstance(man, (mf.SPDAffineInvariant, mf.SPDLogEuclidean)):
                assert np.abs(out - np.swapaxes(out, -1, -2)).max() < 1e-9
            elif isinstance(man, mf.Sphere):
                assert np.abs((out * x).sum(axis=-1)).max() < 1e-9


def test_parameter_count_ordering():
    # one-layer nets: full vectorization >= upper triangle >= spectral extras
    rng = np.random.default_rng(13)
    spd = mf.make_manifold("spd_affine", 6)
    embedded = vf.make_spd_field("spd_embedded", spd, rng)
    structured = vf.make_spd_field("spd_structured", spd, rng)
    parsimonious = vf.make_spd_field("spd_parsimonious", spd, rng)
    spectral = vf.make_spd_field("spd_spectral", spd, rng)
    assert embedded.num_parameters() > structured.num_parameters()
    assert structured.num_parameters() > spectral.num_parameters()
    assert spectral.num_parameters() > parsimonious.num_parameters()


def test_make_spd_field_rejects_unknown_kind():
    rng = np.random.default_rng(14)
    spd = mf.make_manifold("spd_affine", 3)
    with pytest.raises(ConfigurationError):
        vf.make_spd_field("spd_mystery", spd, rng)


def test_mlp_zero_last_starts_at_zero():
    net = vf.MLP([3, 5, 3], np.random.default_rng(15), zero_last=True)
    out = ad.value_of(net(ad.lift(np.ones((2, 3)))))
    assert np.abs(out).max() == 0.0
    assert np.abs(net.weights[0].data).max() > 0  # only the last layer is zeroed
