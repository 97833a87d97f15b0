"""Parameterized vector fields: maps from points to tangent vectors.

Designs: ambient-network embedding with tangent projection; feature-map
induced fields combining Riemannian feature gradients; and the four SPD
designs (full vectorization, upper-triangle structured, constant tangent,
spectral).  Every field evaluates batched and returns coordinates satisfying
the target manifold's tangent invariants.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import linalg
from . import manifolds as mf
from .errors import ConfigurationError, NumericError
from .featuremaps import FeatureBank

# orthogonality drift beyond this is a hard error; drift past 1e-8 is assumed
# prevented by the skew parameterization
ORTHO_TOL = 1e-6


def _uniform_init(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class MLP:
    """Plain fully connected network with ReLU (optional) between layers."""

    def __init__(self, sizes, rng, nonlinearity: bool = True, name: str = "mlp",
                 zero_last: bool = False):
        self.sizes = list(sizes)
        self.nonlinearity = nonlinearity
        self.weights = []
        self.biases = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            w = np.zeros((fan_in, fan_out)) if (zero_last and last) else _uniform_init(
                rng, fan_in, (fan_in, fan_out))
            b = np.zeros(fan_out) if (zero_last and last) else _uniform_init(
                rng, fan_in, fan_out)
            self.weights.append(ad.Parameter(w, name=f"{name}_w{i}"))
            self.biases.append(ad.Parameter(b, name=f"{name}_b{i}"))

    @property
    def in_dim(self):
        return self.sizes[0]

    @property
    def out_dim(self):
        return self.sizes[-1]

    def __call__(self, x):
        out = ad.lift(x)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out = out @ ad.lift(w) + ad.lift(b)
            if self.nonlinearity and i != last:
                out = ad.relu(out)
        return out

    def parameters(self):
        return self.weights + self.biases

    def num_parameters(self):
        return sum(p.data.size for p in self.parameters())


class VectorField:
    manifold: mf.Manifold

    def field(self, x):
        """Tangent coordinates at each point of the batch ``x``."""
        raise NotImplementedError

    def parameters(self) -> list[ad.Parameter]:
        raise NotImplementedError

    def num_parameters(self):
        return sum(p.data.size for p in self.parameters())


class EmbeddedVectorField(VectorField):
    """Ambient network output projected onto the tangent space (vector manifolds)."""

    def __init__(self, manifold: mf.Manifold, net: MLP):
        dim = manifold.ambient_dim
        if net.in_dim != dim or net.out_dim != dim:
            raise ConfigurationError(
                f"embedded field needs a {dim}->{dim} network, got "
                f"{net.in_dim}->{net.out_dim}")
        self.manifold = manifold
        self.net = net

    def field(self, x):
        return self.manifold.proj_tangent(x, self.net(ad.lift(x)))

    def parameters(self):
        return self.net.parameters()


class FeatureInducedVectorField(VectorField):
    """Linear combination of Riemannian feature gradients.

    Coefficients come from a network applied to the stacked feature values;
    with ``net=None`` the coefficients are the feature values themselves (the
    deterministic pullback field).  An optional propagation matrix (e.g. a
    normalized graph adjacency power) premultiplies the feature values before
    the network.
    """

    def __init__(self, bank: FeatureBank, net: MLP | None, propagate: np.ndarray | None = None):
        if net is not None and (net.in_dim != bank.size or net.out_dim != bank.size):
            raise ConfigurationError(
                f"feature field needs a {bank.size}->{bank.size} network, got "
                f"{net.in_dim}->{net.out_dim}")
        self.bank = bank
        self.net = net
        self.manifold = bank.manifold
        self.propagate = None if propagate is None else np.asarray(propagate, dtype=np.float64)

    def field(self, x):
        feats = self.bank.values(ad.lift(x))
        if self.propagate is not None:
            feats = ad.lift(self.propagate) @ feats
        coeffs = feats if self.net is None else self.net(feats)
        return self.bank.combine_gradients(x, coeffs)

    def parameters(self):
        params = list(self.bank.parameters())
        if self.net is not None:
            params += self.net.parameters()
        return params


# ---------------------------------------------------------------------------
# SPD designs


def _triu_indices(n):
    return np.triu_indices(n)


def sym_to_upper(x, n):
    """Row-major upper-triangle extraction, shape (..., n(n+1)/2)."""
    rows, cols = _triu_indices(n)
    return ad.lift(x)[..., rows, cols]


def upper_to_sym(v, n):
    """Inverse injection: build symmetric matrices from upper-triangle vectors."""
    rows, cols = _triu_indices(n)
    vv = ad.lift(v)
    batch = vv.value.shape[:-1]
    basis = np.zeros((len(rows), n, n))
    for i, (r, c) in enumerate(zip(rows, cols)):
        basis[i, r, c] = 1.0
        basis[i, c, r] = 1.0
    flat = ad.reshape(vv, (-1, len(rows)))
    out = flat @ ad.reshape(ad.lift(basis), (len(rows), n * n))
    return ad.reshape(out, batch + (n, n))


class SPDEmbeddedVectorField(VectorField):
    """Design 1: full row-major vectorization, network, symmetrize."""

    def __init__(self, manifold, net: MLP):
        n = manifold.dim
        if net.in_dim != n * n or net.out_dim != n * n:
            raise ConfigurationError(
                f"embedded SPD field needs {n * n}->{n * n}, got {net.in_dim}->{net.out_dim}")
        self.manifold = manifold
        self.net = net

    def field(self, x):
        n = self.manifold.dim
        xv = ad.lift(x)
        batch = xv.value.shape[:-2]
        flat = ad.reshape(xv, batch + (n * n,))
        out = ad.reshape(self.net(flat), batch + (n, n))
        return self.manifold.proj_tangent(x, out)

    def parameters(self):
        return self.net.parameters()


class SPDStructuredVectorField(VectorField):
    """Design 2: network on upper-triangle coordinates; symmetric by construction."""

    def __init__(self, manifold, net: MLP):
        n = manifold.dim
        d = n * (n + 1) // 2
        if net.in_dim != d or net.out_dim != d:
            raise ConfigurationError(
                f"structured SPD field needs {d}->{d}, got {net.in_dim}->{net.out_dim}")
        self.manifold = manifold
        self.net = net

    def field(self, x):
        n = self.manifold.dim
        return upper_to_sym(self.net(sym_to_upper(ad.lift(x), n)), n)

    def parameters(self):
        return self.net.parameters()


class SPDParsimoniousVectorField(VectorField):
    """Design 3: one constant tangent vector, location-agnostic."""

    def __init__(self, manifold, coeffs: ad.Parameter):
        d = manifold.dim * (manifold.dim + 1) // 2
        if ad.value_of(coeffs).shape != (d,):
            raise ConfigurationError(f"parsimonious field needs a length-{d} vector")
        self.manifold = manifold
        self.coeffs = coeffs

    def field(self, x):
        n = self.manifold.dim
        batch = ad.value_of(x).shape[:-2]
        tangent = upper_to_sym(ad.lift(self.coeffs), n)
        if batch:
            ones = np.ones(batch + (1, 1))
            tangent = ad.lift(ones) * tangent
        return tangent

    def parameters(self):
        return [self.coeffs]


class SPDSpectralVectorField(VectorField):
    """Design 4: eigenbasis fixed by a learned orthogonal Q, spectrum mapped
    through a small network applied to the input's sorted eigenvalues."""

    def __init__(self, manifold, skew: ad.Parameter, net: MLP):
        n = manifold.dim
        if ad.value_of(skew).shape != (n, n):
            raise ConfigurationError(f"skew parameter must be {n}x{n}")
        if net.in_dim != n or net.out_dim != n:
            raise ConfigurationError(
                f"spectral field needs {n}->{n}, got {net.in_dim}->{net.out_dim}")
        self.manifold = manifold
        self.skew = skew
        self.net = net

    def orthogonal(self):
        a = ad.lift(self.skew)
        q = linalg.expm_skew(a - ad.mT(a))
        qv = ad.value_of(q)
        drift = float(np.abs(qv.T @ qv - np.eye(qv.shape[0])).max())
        if drift > ORTHO_TOL:
            raise NumericError(f"orthogonal parameterization drifted by {drift:.3e}")
        return q

    def field(self, x):
        w, _ = ad.sym_eig(ad.lift(x))
        spectrum = self.net(w)
        q = self.orthogonal()
        out = q @ ad.diag_embed(spectrum) @ ad.mT(q)
        return (out + ad.mT(out)) * 0.5

    def parameters(self):
        return [self.skew] + self.net.parameters()


# ---------------------------------------------------------------------------


def make_spd_field(kind: str, manifold, rng, hidden: list[int] | None = None,
                   nonlinearity: bool = True, zero_last: bool = False) -> VectorField:
    """Construct one of the four SPD designs by config name.

    ``zero_last`` zeros the network output layer so the residual layer starts
    at the identity, which keeps early optimizer steps from leaving the cone.
    """
    n = manifold.dim
    hidden = hidden or []
    if kind == "spd_embedded":
        net = MLP([n * n] + hidden + [n * n], rng, nonlinearity,
                  name="spd_embed", zero_last=zero_last)
        return SPDEmbeddedVectorField(manifold, net)
    if kind == "spd_structured":
        d = n * (n + 1) // 2
        net = MLP([d] + hidden + [d], rng, nonlinearity, name="spd_struct",
                  zero_last=zero_last)
        return SPDStructuredVectorField(manifold, net)
    if kind == "spd_parsimonious":
        d = n * (n + 1) // 2
        return SPDParsimoniousVectorField(
            manifold, ad.Parameter(rng.normal(size=d) * 0.01, name="spd_pars"))
    if kind == "spd_spectral":
        net = MLP([n] + hidden + [n], rng, nonlinearity, name="spd_spec",
                  zero_last=zero_last)
        return SPDSpectralVectorField(
            manifold, ad.Parameter(rng.normal(size=(n, n)) * 0.01, name="spd_skew"), net)
    raise ConfigurationError(f"unknown SPD field kind {kind!r}")
