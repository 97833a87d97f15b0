"""Residual model assembly: base-point maps, residual layers, task heads,
and self-describing checkpoints.

A layer computes ``exp_{h(x)}(l(h(x)))`` for a base-point map ``h`` and a
vector field ``l``; a model is an input embedding, a stack of layers, and a
task head.
"""

from __future__ import annotations

import json

import numpy as np

from . import autodiff as ad
from . import linalg
from . import gyro
from . import manifolds as mf
from . import vectorfields as vfields
from .errors import ConfigurationError, PreconditionError

STIEFEL_TOL = 1e-6


# ---------------------------------------------------------------------------
# base-point maps


class BasePointMap:
    source: mf.Manifold
    target: mf.Manifold

    def __call__(self, x):
        raise NotImplementedError

    def parameters(self) -> list[ad.Parameter]:
        return []


class Inclusion(BasePointMap):
    """Identity base-point map within one manifold."""

    def __init__(self, manifold: mf.Manifold):
        self.source = manifold
        self.target = manifold

    def __call__(self, x):
        return ad.lift(x) if isinstance(x, (ad.Node, ad.Parameter)) else np.asarray(x, float)


def stiefel_bimap(x, w):
    """Congruence by a column-orthonormal matrix: ``W^T X W``.

    Maps SPD matrices between dimensions while preserving positive
    definiteness (for full-column-rank W).
    """
    wv = ad.value_of(w)
    drift = float(np.abs(wv.T @ wv - np.eye(wv.shape[1])).max())
    if drift > STIEFEL_TOL:
        raise PreconditionError(f"W^T W deviates from I by {drift:.3e}")
    wn = ad.lift(w)
    out = ad.mT(wn) @ ad.lift(x) @ wn
    out = (out + ad.mT(out)) * 0.5
    if isinstance(x, (ad.Node, ad.Parameter)) or isinstance(w, (ad.Node, ad.Parameter)):
        return out
    return out.value


class StiefelBiMap(BasePointMap):
    """SPD dimension reduction by a learned Stiefel matrix."""

    def __init__(self, source: mf.Manifold, target: mf.Manifold, weight: ad.Parameter):
        shape = ad.value_of(weight).shape
        if shape != (source.dim, target.dim):
            raise ConfigurationError(
                f"BiMap weight must be {source.dim}x{target.dim}, got {shape}")
        self.source = source
        self.target = target
        self.weight = weight

    @classmethod
    def random(cls, source, target, rng) -> "StiefelBiMap":
        raw = rng.normal(size=(source.dim, target.dim))
        q, _ = np.linalg.qr(raw)
        return cls(source, target, ad.Parameter(q, constraint="stiefel", name="bimap_w"))

    def __call__(self, x):
        return stiefel_bimap(x, self.weight)

    def parameters(self):
        return [self.weight]


class TangentLinear(BasePointMap):
    """Linear map of raw features, lifted through exp at the target origin.

    For Poincare targets the tangent norm is clipped at ``0.9 / sqrt(|K|)``
    before the exp so embedded points stay clear of the boundary.
    """

    def __init__(self, target: mf.Manifold, weight: ad.Parameter,
                 source: mf.Manifold | None = None):
        self.source = source or mf.Euclidean(ad.value_of(weight).shape[0])
        self.target = target
        self.weight = weight

    @classmethod
    def random(cls, in_dim: int, target: mf.Manifold, rng) -> "TangentLinear":
        if isinstance(target, (mf.SPDAffineInvariant, mf.SPDLogEuclidean)):
            out_dim = target.dim * (target.dim + 1) // 2
        else:
            out_dim = target.ambient_dim
        w = vfields._uniform_init(rng, in_dim, (in_dim, out_dim))
        return cls(target, ad.Parameter(w, name="embed_w"))

    def __call__(self, u):
        target = self.target
        v = ad.lift(u) @ ad.lift(self.weight)
        if isinstance(target, (mf.SPDAffineInvariant, mf.SPDLogEuclidean)):
            tangent = vfields.upper_to_sym(v, target.dim)
            origin = np.broadcast_to(np.eye(target.dim),
                                     ad.value_of(tangent).shape).copy()
            return target.exp(ad.lift(origin), tangent)
        if isinstance(target, mf.Sphere):
            origin = np.broadcast_to(target.origin(), ad.value_of(v).shape).copy()
            tangent = target.proj_tangent(ad.lift(origin), v)
            return target.exp(ad.lift(origin), tangent)
        if isinstance(target, mf.PoincareBall):
            limit = 0.9 * target.radius
            norms = ad.sqrt(ad.sum_(v * v, axis=-1, keepdims=True) + 1e-300)
            v = v * ad.clip(limit / norms, hi=1.0)
            origin = np.zeros(ad.value_of(v).shape)
            return target.exp(ad.lift(origin), v)
        return v  # Euclidean target: exp at origin is the identity lift

    def parameters(self):
        return [self.weight]


# ---------------------------------------------------------------------------
# residual layers


class ResidualLayer:
    """One step ``x -> residual(h(x), l(h(x)))``.

    ``residual`` is ``"exp_map"`` (geodesic) or ``"gyrovector"`` (ablation
    baseline: Mobius addition on the ball; on SPD the tangent is lifted to an
    SPD matrix by the matrix exponential and added by congruence).
    """

    def __init__(self, base_map: BasePointMap, field: vfields.VectorField,
                 residual: str = "exp_map"):
        if base_map.target is not field.manifold:
            raise ConfigurationError(
                "base-point map target and vector field manifold differ")
        if residual not in ("exp_map", "gyrovector"):
            raise ConfigurationError(f"unknown residual kind {residual!r}")
        self.base_map = base_map
        self.field = field
        self.residual = residual

    @property
    def manifold(self):
        return self.base_map.target

    def __call__(self, x):
        y = self.base_map(x)
        v = self.field.field(y)
        manifold = self.manifold
        if self.residual == "exp_map":
            return manifold.exp(y, v)
        if isinstance(manifold, mf.PoincareBall):
            # the learned tangent enters Mobius addition through its ambient
            # coordinates; clip so the summand stays inside the ball
            limit = (1.0 - 1e-5) * manifold.radius
            norms = ad.sqrt(ad.sum_(v * v, axis=-1, keepdims=True) + 1e-300)
            v = v * ad.clip(limit / norms, hi=1.0)
            return mf._mobius_add_node(ad.lift(y), ad.lift(v), manifold.curvature)
        if isinstance(manifold, (mf.SPDAffineInvariant, mf.SPDLogEuclidean)):
            lifted = linalg.mat_exp_sym(v)
            return gyro.spd_gyro_add(lifted, ad.lift(y))
        return ad.lift(y) + v  # Euclidean / sphere fallback: plain addition

    def parameters(self):
        return self.base_map.parameters() + self.field.parameters()


def layer_forward(x, base_map: BasePointMap, field: vfields.VectorField):
    """Single residual step on raw coordinates."""
    return ResidualLayer(base_map, field)(x)


def tangent_linear_embed(u, weight, target: mf.Manifold):
    """Lift raw feature vectors onto ``target`` through exp at the origin."""
    if not isinstance(weight, ad.Parameter):
        weight = ad.Parameter(np.asarray(weight, dtype=np.float64))
    out = TangentLinear(target, weight)(u)
    return out if isinstance(u, (ad.Node, ad.Parameter)) else ad.value_of(out)


# ---------------------------------------------------------------------------
# heads


class LinearHead:
    """Linear decoder on the final ambient coordinates."""

    def __init__(self, weight: ad.Parameter, bias: ad.Parameter):
        self.weight = weight
        self.bias = bias

    @classmethod
    def random(cls, in_dim: int, classes: int, rng) -> "LinearHead":
        w = vfields._uniform_init(rng, in_dim, (in_dim, classes))
        return cls(ad.Parameter(w, name="head_w"),
                   ad.Parameter(np.zeros(classes), name="head_b"))

    def __call__(self, x):
        xn = ad.lift(x)
        if xn.value.ndim > 2:  # SPD coordinates: flatten matrices
            xn = ad.reshape(xn, (xn.value.shape[0], -1))
        return xn @ ad.lift(self.weight) + ad.lift(self.bias)

    def parameters(self):
        return [self.weight, self.bias]


class SPDLogEigHead:
    """Eigenvalue-log flattening followed by a linear map.

    Applies ``Q diag(log w) Q^T`` to linearize the spectrum, flattens, and
    maps to class scores.
    """

    def __init__(self, weight: ad.Parameter, bias: ad.Parameter):
        self.weight = weight
        self.bias = bias

    @classmethod
    def random(cls, n: int, classes: int, rng) -> "SPDLogEigHead":
        w = vfields._uniform_init(rng, n * n, (n * n, classes))
        return cls(ad.Parameter(w, name="logeig_w"),
                   ad.Parameter(np.zeros(classes), name="logeig_b"))

    def __call__(self, x):
        logm = linalg.mat_log_spd(ad.lift(x))
        flat = ad.reshape(logm, (ad.value_of(x).shape[0], -1))
        return flat @ ad.lift(self.weight) + ad.lift(self.bias)

    def parameters(self):
        return [self.weight, self.bias]


# ---------------------------------------------------------------------------
# model


class ResidualModel:
    """Input embedding, residual layer stack, and an optional head.

    ``encode`` returns final manifold coordinates; ``__call__`` returns head
    outputs.  With ``debug_validate`` every intermediate point is checked
    against its manifold invariants.
    """

    def __init__(self, embed: BasePointMap | None, layers: list[ResidualLayer],
                 head=None, debug_validate: bool = False):
        if not layers:
            raise ConfigurationError("a model needs at least one layer")
        self.embed = embed
        self.layers = layers
        self.head = head
        self.debug_validate = debug_validate

    @property
    def manifold(self):
        return self.layers[-1].manifold

    def encode(self, x):
        out = ad.lift(x)
        if self.embed is not None:
            out = self.embed(out)
        for i, layer in enumerate(self.layers):
            out = layer(out)
            if self.debug_validate:
                report = layer.manifold.validate_point(ad.value_of(out))
                if not report.ok:
                    raise ConfigurationError(
                        f"layer {i} produced an invalid point: {report.message}")
        return out

    def __call__(self, x):
        encoded = self.encode(x)
        return encoded if self.head is None else self.head(encoded)

    def parameters(self):
        params = []
        if self.embed is not None:
            params += self.embed.parameters()
        for layer in self.layers:
            params += layer.parameters()
        if self.head is not None:
            params += self.head.parameters()
        # deduplicate while keeping order
        seen, out = set(), []
        for p in params:
            if id(p) not in seen:
                seen.add(id(p))
                out.append(p)
        return out


def forward(x, model: ResidualModel):
    """Composition of all residual layers on raw coordinates."""
    return model.encode(x)


# ---------------------------------------------------------------------------
# checkpoints: JSON wrapper, parameter tensors in the matrix text format


def save_checkpoint(path, model_config: dict, parameters: list[ad.Parameter]) -> None:
    blob = {
        "format": "riemres-checkpoint-v1",
        "model": model_config,
        "parameters": [
            {
                "name": p.name,
                "shape": list(p.data.shape),
                "constraint": p.constraint,
                "constraint_arg": p.constraint_arg,
                "matrix": linalg.format_matrix(p.data.reshape(
                    p.data.shape[0] if p.data.ndim > 1 else 1, -1)),
            }
            for p in parameters
        ],
    }
    with open(path, "w") as fh:
        json.dump(blob, fh, indent=1)


def load_checkpoint(path) -> tuple[dict, list[ad.Parameter]]:
    with open(path) as fh:
        blob = json.load(fh)
    if blob.get("format") != "riemres-checkpoint-v1":
        raise PreconditionError(f"unrecognized checkpoint format in {path}")
    params = []
    for entry in blob["parameters"]:
        data = linalg.parse_matrix(entry["matrix"]).reshape(entry["shape"])
        params.append(ad.Parameter(data, constraint=entry["constraint"],
                                   constraint_arg=entry["constraint_arg"],
                                   name=entry["name"]))
    return blob["model"], params
