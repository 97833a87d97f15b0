"""Geometry descriptors for the five supported manifolds.

Each manifold exposes exp maps, geodesic distance, tangent projection,
metric-norm evaluation and Euclidean-to-Riemannian gradient conversion.  All
operations accept either numpy arrays or autodiff nodes and are batched over
leading axes: vector manifolds use coordinates of shape ``(..., d)``, SPD
manifolds use ``(..., n, n)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import linalg
from .errors import ConfigurationError, DomainError, PreconditionError

# keeps norms differentiable at zero vectors without NaN poisoning
_NORM_EPS = 1e-300
# slack admitted before a point is reported off-manifold
VALIDATE_TOL = 1e-9
# radial rescale target for points that drift out of the Poincare ball
BALL_MARGIN = 1e-5
BALL_EXP_MARGIN = 1e-7  # numeric guard on exp-map outputs at the boundary


def _maybe_value(out, *inputs):
    if any(isinstance(x, (ad.Node, ad.Parameter)) for x in inputs):
        return out
    return out.value if isinstance(out, ad.Node) else out


def _vnorm(v, keepdims=True):
    """Euclidean norm over the last axis, safe at zero."""
    v = ad.lift(v)
    return ad.sqrt(ad.sum_(v * v, axis=-1, keepdims=keepdims) + _NORM_EPS)


def _fnorm(v, keepdims=False):
    """Frobenius norm over the last two axes, safe at zero."""
    v = ad.lift(v)
    out = ad.sqrt(ad.sum_(v * v, axis=(-2, -1), keepdims=keepdims) + _NORM_EPS)
    return out


def _sym(v):
    v = ad.lift(v)
    return (v + ad.mT(v)) * 0.5


@dataclass
class ValidationReport:
    ok: bool
    message: str | None = None


@dataclass
class Point:
    manifold: "Manifold"
    coords: np.ndarray

    def validate(self) -> ValidationReport:
        return self.manifold.validate_point(self.coords)


@dataclass
class TangentVector:
    base: Point
    coords: np.ndarray


class Manifold:
    """Base geometry descriptor; subclasses fill in the actual formulas."""

    name: str

    def exp(self, x, v):
        raise NotImplementedError

    def dist(self, x, y):
        raise NotImplementedError

    def proj_tangent(self, x, u):
        raise NotImplementedError

    def riem_grad(self, x, g):
        """Convert an ambient-coordinate gradient into a Riemannian gradient."""
        raise NotImplementedError

    def tangent_norm(self, x, v):
        """Metric norm of a tangent vector at ``x``."""
        raise NotImplementedError

    def origin(self) -> np.ndarray:
        raise NotImplementedError

    def validate_point(self, x) -> ValidationReport:
        raise NotImplementedError

    def project_point(self, x: np.ndarray) -> np.ndarray:
        """Pull a slightly off-manifold point back onto the manifold."""
        return x

    def random_point(self, rng, *batch):
        raise NotImplementedError

    def random_tangent(self, rng, x):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}(dim={self.intrinsic_dim})"


# ---------------------------------------------------------------------------


class Euclidean(Manifold):
    name = "euclidean"

    def __init__(self, dim: int):
        self.dim = dim
        self.ambient_dim = dim
        self.intrinsic_dim = dim

    def exp(self, x, v):
        if isinstance(x, (ad.Node, ad.Parameter)) or isinstance(v, (ad.Node, ad.Parameter)):
            return ad.lift(x) + ad.lift(v)
        return np.asarray(x, dtype=np.float64) + np.asarray(v, dtype=np.float64)

    def dist(self, x, y):
        return _maybe_value(_vnorm(ad.lift(y) - ad.lift(x), keepdims=False), x, y)

    def proj_tangent(self, x, u):
        return _maybe_value(ad.lift(u), u)

    def riem_grad(self, x, g):
        return _maybe_value(ad.lift(g), g)

    def tangent_norm(self, x, v):
        return _maybe_value(_vnorm(v, keepdims=False), x, v)

    def origin(self):
        return np.zeros(self.dim)

    def validate_point(self, x):
        x = ad.value_of(x)
        if x.shape[-1] != self.dim:
            return ValidationReport(False, f"expected dim {self.dim}, got {x.shape[-1]}")
        if not np.isfinite(x).all():
            return ValidationReport(False, "non-finite coordinates")
        return ValidationReport(True)

    def random_point(self, rng, *batch):
        return rng.normal(size=batch + (self.dim,))

    def random_tangent(self, rng, x):
        return rng.normal(size=np.shape(x))


# ---------------------------------------------------------------------------


def mobius_add(x, y, curvature: float = -1.0):
    """Mobius addition on the Poincare ball (Ungar closed form)."""
    K = float(curvature)
    for name, p in (("x", x), ("y", y)):
        val = ad.value_of(p)
        if (val * val).sum(axis=-1).max() >= -1.0 / K:
            raise DomainError(f"{name} lies on or outside the ball of radius {(-1 / K) ** 0.5:g}")
    out = _mobius_add_node(ad.lift(x), ad.lift(y), K)
    return _maybe_value(out, x, y)


def _mobius_add_node(x, y, K):
    xy = ad.sum_(x * y, axis=-1, keepdims=True)
    xx = ad.sum_(x * x, axis=-1, keepdims=True)
    yy = ad.sum_(y * y, axis=-1, keepdims=True)
    num = (1.0 - 2.0 * K * xy - K * yy) * x + (1.0 + K * xx) * y
    den = 1.0 - 2.0 * K * xy + (K * K) * xx * yy
    return num / den


class PoincareBall(Manifold):
    name = "poincare"

    def __init__(self, dim: int, curvature: float = -1.0):
        if curvature >= 0:
            raise ConfigurationError("Poincare ball requires negative curvature")
        self.dim = dim
        self.curvature = float(curvature)
        self.ambient_dim = dim
        self.intrinsic_dim = dim

    @property
    def _sqrt_k(self):
        return (-self.curvature) ** 0.5

    @property
    def radius(self):
        return 1.0 / self._sqrt_k

    def conformal_factor(self, x):
        xx = ad.sum_(ad.lift(x) * ad.lift(x), axis=-1, keepdims=True)
        return 2.0 / (1.0 + self.curvature * xx)

    def exp(self, x, v):
        xn, vn = ad.lift(x), ad.lift(v)
        lam = self.conformal_factor(xn)
        nv = _vnorm(vn)
        sk = self._sqrt_k
        scale = ad.tanh(sk * lam * nv * 0.5) / (sk * nv)
        out = _mobius_add_node(xn, scale * vn, self.curvature)
        # huge tangents make tanh round to 1 and land exactly on the boundary;
        # pull such outputs a hair inside so downstream 1 - |K|*|x|^2 stays > 0
        limit = (1.0 - BALL_EXP_MARGIN) * self.radius
        shrink = ad.clip(limit / _vnorm(out), hi=1.0)
        out = out * shrink
        return _maybe_value(out, x, v)

    def dist(self, x, y):
        xn, yn = ad.lift(x), ad.lift(y)
        K = self.curvature
        dd = ad.sum_((xn - yn) * (xn - yn), axis=-1)
        xx = ad.sum_(xn * xn, axis=-1)
        yy = ad.sum_(yn * yn, axis=-1)
        arg = 1.0 - 2.0 * K * dd / ((1.0 + K * xx) * (1.0 + K * yy))
        out = ad.arccosh(arg) * (1.0 / self._sqrt_k)
        return _maybe_value(out, x, y)

    def proj_tangent(self, x, u):
        return _maybe_value(ad.lift(u), u)

    def riem_grad(self, x, g):
        lam = self.conformal_factor(ad.lift(x))
        out = ad.lift(g) / (lam * lam)
        return _maybe_value(out, x, g)

    def tangent_norm(self, x, v):
        lam = self.conformal_factor(ad.lift(x))
        out = ad.reshape(lam, ad.value_of(v).shape[:-1]) * _vnorm(v, keepdims=False)
        return _maybe_value(out, x, v)

    def origin(self):
        return np.zeros(self.dim)

    def validate_point(self, x):
        x = ad.value_of(x)
        if x.shape[-1] != self.dim:
            return ValidationReport(False, f"expected dim {self.dim}, got {x.shape[-1]}")
        if not np.isfinite(x).all():
            return ValidationReport(False, "non-finite coordinates")
        sq = (x * x).sum(axis=-1).max()
        limit = -1.0 / self.curvature
        if sq >= limit + VALIDATE_TOL:
            return ValidationReport(False, f"norm^2 {sq:.6g} outside ball of radius^2 {limit:g}")
        return ValidationReport(True)

    def project_point(self, x):
        x = np.asarray(x, dtype=np.float64)
        target = (1.0 - BALL_MARGIN) * self.radius
        norms = np.sqrt((x * x).sum(axis=-1, keepdims=True))
        factor = np.where(norms >= target, target / np.maximum(norms, 1e-300), 1.0)
        return x * factor

    def random_point(self, rng, *batch):
        raw = rng.normal(size=batch + (self.dim,))
        norms = np.sqrt((raw * raw).sum(axis=-1, keepdims=True))
        radii = rng.uniform(0.05, 0.7, size=batch + (1,)) * self.radius
        return raw / np.maximum(norms, 1e-12) * radii

    def random_tangent(self, rng, x):
        return rng.normal(size=np.shape(x))


# ---------------------------------------------------------------------------


class Sphere(Manifold):
    """Unit sphere S^dim embedded in R^(dim+1)."""

    name = "sphere"

    def __init__(self, dim: int):
        self.dim = dim
        self.ambient_dim = dim + 1
        self.intrinsic_dim = dim

    def exp(self, x, v):
        xn, vn = ad.lift(x), ad.lift(v)
        nv = _vnorm(vn)
        out = ad.cos(nv) * xn + ad.sin(nv) / nv * vn
        return _maybe_value(out, x, v)

    def dist(self, x, y):
        inner = ad.sum_(ad.lift(x) * ad.lift(y), axis=-1)
        return _maybe_value(ad.arccos(inner), x, y)

    def proj_tangent(self, x, u):
        xn, un = ad.lift(x), ad.lift(u)
        out = un - ad.sum_(xn * un, axis=-1, keepdims=True) * xn
        return _maybe_value(out, x, u)

    def riem_grad(self, x, g):
        # round metric agrees with the ambient inner product on tangents
        return self.proj_tangent(x, g)

    def tangent_norm(self, x, v):
        return _maybe_value(_vnorm(v, keepdims=False), x, v)

    def origin(self):
        north = np.zeros(self.ambient_dim)
        north[-1] = 1.0
        return north

    def validate_point(self, x):
        x = ad.value_of(x)
        if x.shape[-1] != self.ambient_dim:
            return ValidationReport(
                False, f"expected ambient dim {self.ambient_dim}, got {x.shape[-1]}")
        if not np.isfinite(x).all():
            return ValidationReport(False, "non-finite coordinates")
        err = np.abs(np.sqrt((x * x).sum(axis=-1)) - 1.0).max()
        if err > VALIDATE_TOL:
            return ValidationReport(False, f"norm differs from 1 by {err:.3e}")
        return ValidationReport(True)

    def project_point(self, x):
        x = np.asarray(x, dtype=np.float64)
        return x / np.sqrt((x * x).sum(axis=-1, keepdims=True))

    def random_point(self, rng, *batch):
        raw = rng.normal(size=batch + (self.ambient_dim,))
        return raw / np.sqrt((raw * raw).sum(axis=-1, keepdims=True))

    def random_tangent(self, rng, x):
        raw = rng.normal(size=np.shape(x))
        x = np.asarray(x)
        return raw - (x * raw).sum(axis=-1, keepdims=True) * x


# ---------------------------------------------------------------------------


class _SPDBase(Manifold):
    def __init__(self, dim: int):
        self.dim = dim
        self.ambient_dim = dim * dim
        self.intrinsic_dim = dim * (dim + 1) // 2

    def proj_tangent(self, x, u):
        return _maybe_value(_sym(u), u)

    def origin(self):
        return np.eye(self.dim)

    def validate_point(self, x):
        x = ad.value_of(x)
        if x.shape[-2:] != (self.dim, self.dim):
            return ValidationReport(False, f"expected {self.dim}x{self.dim} matrix")
        if not np.isfinite(x).all():
            return ValidationReport(False, "non-finite entries")
        asym = np.abs(x - np.swapaxes(x, -1, -2)).max()
        if asym > VALIDATE_TOL:
            return ValidationReport(False, f"asymmetry {asym:.3e}")
        w, _ = linalg.sym_eig(x).eigenvalues, None
        wmin = float(np.asarray(w).min())
        if wmin <= 0.0:
            return ValidationReport(False, f"eigenvalue {wmin:.6g} <= 0")
        return ValidationReport(True)

    def random_point(self, rng, *batch):
        raw = rng.normal(size=batch + (self.dim, self.dim)) * 0.4
        sym = 0.5 * (raw + np.swapaxes(raw, -1, -2))
        flat = sym.reshape((-1, self.dim, self.dim))
        out = np.stack([linalg.mat_exp_sym(m) for m in flat])
        return out.reshape(sym.shape)

    def random_tangent(self, rng, x):
        raw = rng.normal(size=np.shape(x))
        return 0.5 * (raw + np.swapaxes(raw, -1, -2))


class SPDAffineInvariant(_SPDBase):
    name = "spd_affine"

    def exp(self, x, v):
        xh = linalg.sym_sqrt(ad.lift(x))
        xih = linalg.sym_inv_sqrt(ad.lift(x))
        inner = _sym(xih @ ad.lift(v) @ xih)
        out = _sym(xh @ linalg.mat_exp_sym(inner) @ xh)
        return _maybe_value(out, x, v)

    def dist(self, x, y):
        xih = linalg.sym_inv_sqrt(ad.lift(x))
        inner = _sym(xih @ ad.lift(y) @ xih)
        out = _fnorm(linalg.mat_log_spd(inner))
        return _maybe_value(out, x, y)

    def tangent_norm(self, x, v):
        xih = linalg.sym_inv_sqrt(ad.lift(x))
        return _maybe_value(_fnorm(xih @ ad.lift(v) @ xih), x, v)

    def riem_grad(self, x, g):
        xn = ad.lift(x)
        out = _sym(xn @ _sym(g) @ xn)
        return _maybe_value(out, x, g)


def _loewner_log(w):
    """First divided differences of log on an eigenvalue vector node.

    ``f[i, j] = (log w_i - log w_j) / (w_i - w_j)`` with the diagonal limit
    ``1 / w_i``; near-coincident eigenvalues use the midpoint approximation.
    """
    wi = ad.reshape(w, w.value.shape + (1,))
    wj = ad.reshape(w, w.value.shape[:-1] + (1,) + w.value.shape[-1:])
    dw = wi - wj
    mask = np.abs(dw.value) > 1e-8 * max(1.0, float(np.abs(w.value).max()))
    dlog = ad.log(wi) - ad.log(wj)
    dw_safe = ad.where(mask, dw, np.ones_like(dw.value))
    return ad.where(mask, dlog / dw_safe, 2.0 / (wi + wj))


class SPDLogEuclidean(_SPDBase):
    name = "spd_logeuclidean"

    def _dlog(self, x, v):
        """Directional derivative of the matrix log at ``x`` applied to ``v``."""
        w, q = ad.sym_eig(_sym(ad.lift(x)))
        f = _loewner_log(w)
        a = ad.mT(q) @ _sym(v) @ q
        return q @ (f * a) @ ad.mT(q)

    def exp(self, x, v):
        # geodesics are straight lines in log coordinates; the tangent vector
        # is carried into the log chart by D log before exponentiating
        logx = linalg.mat_log_spd(ad.lift(x))
        out = linalg.mat_exp_sym(_sym(logx + self._dlog(x, v)))
        return _maybe_value(out, x, v)

    def dist(self, x, y):
        out = _fnorm(linalg.mat_log_spd(ad.lift(y)) - linalg.mat_log_spd(ad.lift(x)))
        return _maybe_value(out, x, y)

    def tangent_norm(self, x, v):
        return _maybe_value(_fnorm(self._dlog(x, v)), x, v)

    def riem_grad(self, x, g):
        w, q = ad.sym_eig(_sym(ad.lift(x)))
        f = _loewner_log(w)
        a = ad.mT(q) @ _sym(g) @ q
        out = q @ (a / (f * f)) @ ad.mT(q)
        return _maybe_value(_sym(out), x, g)


# ---------------------------------------------------------------------------

_KINDS = {
    "euclidean": Euclidean,
    "poincare": PoincareBall,
    "sphere": Sphere,
    "spd_affine": SPDAffineInvariant,
    "spd_logeuclidean": SPDLogEuclidean,
}


def make_manifold(kind: str, dim: int, curvature: float = -1.0) -> Manifold:
    """Build a manifold from its config name."""
    if kind not in _KINDS:
        raise ConfigurationError(
            f"unknown manifold {kind!r}; expected one of {sorted(_KINDS)}")
    if kind == "poincare":
        return PoincareBall(dim, curvature=curvature)
    return _KINDS[kind](dim)


def exp_map(p: Point, v: TangentVector) -> Point:
    """Exponential map on typed points."""
    return Point(p.manifold, p.manifold.exp(p.coords, v.coords))


def dist(p: Point, q: Point):
    if p.manifold is not q.manifold:
        raise PreconditionError("points live on different manifolds")
    return p.manifold.dist(p.coords, q.coords)


def proj_tangent(p: Point, u) -> TangentVector:
    return TangentVector(p, p.manifold.proj_tangent(p.coords, u))


def riem_grad(p: Point, euclidean_grad) -> TangentVector:
    return TangentVector(p, p.manifold.riem_grad(p.coords, euclidean_grad))


def validate(p: Point) -> ValidationReport:
    return p.manifold.validate_point(p.coords)
