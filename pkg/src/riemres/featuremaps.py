"""Scalar geometric feature maps and stacked feature banks.

A bank holds ``k`` maps of one kind and evaluates them batched:
``values(X)`` maps point coordinates ``(N, ...)`` to features ``(N, k)``, and
``combine_gradients(X, C)`` forms the tangent field ``sum_i C[:, i] *
riem_grad(grad_x g_i)`` used by feature-map-induced vector fields.  The
per-coordinate Euclidean gradients are closed forms, then converted through
the manifold metric.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import manifolds as mf
from .errors import DomainError, NumericError, PreconditionError

# horosphere guard: how close to the ball boundary / point of tangency the
# formula is still evaluated; optimization pushes points near the boundary so
# training clamps instead of rejecting
EPS_BND = 1e-6


# ---------------------------------------------------------------------------
# scalar feature maps


def hyperplane_project(x, w, b):
    """Euclidean distance from ``x`` to the hyperplane ``w^T x + b = 0``."""
    wv = ad.value_of(w)
    if float((wv * wv).sum()) == 0.0:
        raise PreconditionError("hyperplane normal w must be nonzero")
    xn, wn = ad.lift(x), ad.lift(w)
    raw = ad.sum_(xn * wn, axis=-1) + ad.lift(b)
    out = ad.absolute(raw) / np.sqrt((wv * wv).sum())
    return out if isinstance(x, (ad.Node, ad.Parameter)) else out.value


def horosphere_project(x, omega, b, strict: bool = True):
    """Signed horosphere projection on the unit Poincare ball.

    ``-log((1 - |x|^2) / |x - omega|^2) + b`` for a boundary point ``omega``.
    In strict mode inputs violating the boundary guards raise ``DomainError``;
    otherwise the guarded quantities are clamped.
    """
    xv = ad.value_of(x)
    if strict:
        sq = float((xv * xv).sum(axis=-1).max())
        if sq >= (1.0 - EPS_BND) ** 2:
            raise DomainError(f"|x| = {np.sqrt(sq):.8f} violates guard |x| < 1 - {EPS_BND:g}")
        gap = float(((xv - ad.value_of(omega)) ** 2).sum(axis=-1).min())
        if gap <= EPS_BND ** 2:
            raise DomainError(f"|x - omega| = {np.sqrt(gap):.2e} violates guard > {EPS_BND:g}")
    xn, on = ad.lift(x), ad.lift(omega)
    one_minus = ad.clip(1.0 - ad.sum_(xn * xn, axis=-1), lo=EPS_BND)
    gap_sq = ad.clip(ad.sum_((xn - on) * (xn - on), axis=-1), lo=EPS_BND ** 2)
    out = ad.log(gap_sq) - ad.log(one_minus) + ad.lift(b)
    return out if isinstance(x, (ad.Node, ad.Parameter)) else out.value


def spd_eig_feature(x, k: int):
    """The k-th largest eigenvalue of an SPD matrix (1-based index)."""
    n = ad.value_of(x).shape[-1]
    if not 1 <= k <= n:
        raise PreconditionError(f"eigenvalue index {k} out of range 1..{n}")
    w, _ = ad.sym_eig(ad.lift(x))
    out = w[..., k - 1]
    return out if isinstance(x, (ad.Node, ad.Parameter)) else out.value


def pseudo_hyperplane_project(x, p, v, r, manifold: mf.Manifold,
                              max_iters: int = 200, improve_tol: float = 1e-9):
    """Distance from ``x`` to the geodesic pseudo-hyperplane through ``p``.

    The pseudo-hyperplane is the exp-image at ``p`` of the radius-``r`` disk
    orthogonal to ``v``.  Minimization over the disk runs projected gradient
    descent with step halving; the result is differentiable in ``x`` via the
    fixed-minimizer (envelope) rule.
    """
    vv = np.asarray(ad.value_of(v), dtype=np.float64)
    if r <= 0:
        raise PreconditionError("radius r must be positive")
    if float((vv * vv).sum()) == 0.0:
        raise PreconditionError("direction v must be nonzero")
    pv = np.asarray(ad.value_of(p), dtype=np.float64)
    xv = np.asarray(ad.value_of(x), dtype=np.float64)
    vhat = vv / np.sqrt((vv * vv).sum())

    def project_disk(w):
        w = w - (w @ vhat) * vhat
        norm = np.sqrt((w * w).sum())
        if norm > r:
            w = w * (r / norm)
        return w

    w_param = ad.Parameter(np.zeros_like(pv))

    def objective():
        with ad.Tape() as tape:
            y = manifold.exp(pv, ad.lift(w_param))
            d = manifold.dist(ad.lift(xv), y)
        return d, tape

    step = 0.1 * r
    best, tape = objective()
    best_val = float(best.value)
    converged = False
    for _ in range(max_iters):
        g = tape.gradients(best)[w_param]
        trial = project_disk(w_param.data - step * g)
        saved = w_param.data
        w_param.data = trial
        cand, cand_tape = objective()
        if float(cand.value) <= best_val:
            improvement = best_val - float(cand.value)
            best_val = float(cand.value)
            best, tape = cand, cand_tape
            if improvement < improve_tol:
                converged = True
                break
        else:
            w_param.data = saved
            step *= 0.5
            if step < 1e-14 * r:
                converged = True
                break
    if not converged:
        err = NumericError(f"pseudo-hyperplane solver did not converge; best {best_val:.6g}")
        err.best_value = best_val
        raise err

    y_star = manifold.exp(pv, w_param.data)
    out = manifold.dist(ad.lift(x) if isinstance(x, (ad.Node, ad.Parameter)) else xv, y_star)
    return out


# ---------------------------------------------------------------------------
# feature banks


class FeatureBank:
    """Base class: ``k`` feature maps of one kind on one manifold."""

    manifold: mf.Manifold

    @property
    def size(self) -> int:
        raise NotImplementedError

    def values(self, x):
        """Feature matrix of shape ``(N, k)`` for points ``x`` of shape ``(N, ...)``."""
        raise NotImplementedError

    def combine_gradients(self, x, coeffs):
        """Tangent field ``sum_i coeffs[:, i] * riem_grad_x g_i`` at each point."""
        raise NotImplementedError

    def parameters(self) -> list[ad.Parameter]:
        return []


class HyperplaneBank(FeatureBank):
    """Distances to ``k`` Euclidean hyperplanes; ``W`` rows are the normals."""

    def __init__(self, manifold: mf.Euclidean, weights: ad.Parameter, offsets: ad.Parameter):
        if np.any((ad.value_of(weights) ** 2).sum(axis=-1) == 0.0):
            raise PreconditionError("hyperplane normals must be nonzero")
        self.manifold = manifold
        self.weights = weights
        self.offsets = offsets

    @classmethod
    def random(cls, manifold: mf.Euclidean, k: int, rng) -> "HyperplaneBank":
        w = rng.normal(size=(k, manifold.dim))
        w /= np.sqrt((w * w).sum(axis=-1, keepdims=True))
        b = rng.normal(size=k)
        return cls(manifold, ad.Parameter(w, name="hyperplane_w"),
                   ad.Parameter(b, name="hyperplane_b"))

    @property
    def size(self):
        return ad.value_of(self.weights).shape[0]

    def _normalized(self):
        w = ad.lift(self.weights)
        norms = ad.sqrt(ad.sum_(w * w, axis=-1, keepdims=True))
        return w / norms

    def values(self, x):
        wn = self._normalized()
        raw = ad.lift(x) @ ad.mT(wn) + ad.lift(self.offsets) / ad.sqrt(
            ad.sum_(ad.lift(self.weights) * ad.lift(self.weights), axis=-1))
        return ad.absolute(raw)

    def combine_gradients(self, x, coeffs):
        wn = self._normalized()
        raw = ad.lift(x) @ ad.mT(wn) + ad.lift(self.offsets) / ad.sqrt(
            ad.sum_(ad.lift(self.weights) * ad.lift(self.weights), axis=-1))
        signs = ad.sign(raw)
        return (coeffs * signs) @ wn


class HorosphereBank(FeatureBank):
    """Projections onto ``k`` horospheres; tangency points are unit rows."""

    def __init__(self, manifold: mf.PoincareBall, tangency: ad.Parameter,
                 offsets: ad.Parameter):
        norms = np.sqrt((ad.value_of(tangency) ** 2).sum(axis=-1))
        if np.abs(norms - 1.0).max() > 1e-9:
            raise PreconditionError("tangency points must have unit norm")
        self.manifold = manifold
        self.tangency = tangency
        self.offsets = offsets

    @classmethod
    def random(cls, manifold: mf.PoincareBall, k: int, rng) -> "HorosphereBank":
        omega = rng.normal(size=(k, manifold.dim))
        omega /= np.sqrt((omega * omega).sum(axis=-1, keepdims=True))
        b = rng.normal(size=k)
        return cls(manifold,
                   ad.Parameter(omega, constraint="unit_rows", name="horo_omega"),
                   ad.Parameter(b, name="horo_b"))

    @property
    def size(self):
        return ad.value_of(self.tangency).shape[0]

    def _scaled(self, x):
        # the printed formula lives on the unit ball; rescale for general K
        return ad.lift(x) * ((-self.manifold.curvature) ** 0.5)

    def values(self, x):
        u = self._scaled(x)
        om = ad.lift(self.tangency)
        uu = ad.sum_(u * u, axis=-1, keepdims=True)
        one_minus = ad.clip(1.0 - uu, lo=EPS_BND)
        gap_sq = ad.clip(
            uu - 2.0 * (u @ ad.mT(om)) + ad.sum_(om * om, axis=-1),
            lo=EPS_BND ** 2)
        return ad.log(gap_sq) - ad.log(one_minus) + ad.lift(self.offsets)

    def combine_gradients(self, x, coeffs):
        sqrt_k = (-self.manifold.curvature) ** 0.5
        u = self._scaled(x)
        om = ad.lift(self.tangency)
        uu = ad.sum_(u * u, axis=-1, keepdims=True)
        one_minus = ad.clip(1.0 - uu, lo=EPS_BND)
        gap_sq = ad.clip(
            uu - 2.0 * (u @ ad.mT(om)) + ad.sum_(om * om, axis=-1),
            lo=EPS_BND ** 2)
        csum = ad.sum_(coeffs, axis=-1, keepdims=True)
        cg = coeffs / gap_sq
        euclid = sqrt_k * (2.0 * u * ad.sum_(cg, axis=-1, keepdims=True)
                           - 2.0 * (cg @ om)
                           + 2.0 * u / one_minus * csum)
        return self.manifold.riem_grad(x, euclid)

    def parameters(self):
        return [self.tangency, self.offsets]


class SPDEigBank(FeatureBank):
    """The ``min(k_max, n)`` largest eigenvalues of an SPD matrix.

    The eigenvalue index is discrete, so this bank has no learnable
    parameters of its own.
    """

    def __init__(self, manifold, k_max: int):
        self.manifold = manifold
        self.k = min(k_max, manifold.dim)

    @property
    def size(self):
        return self.k

    def values(self, x):
        w, _ = ad.sym_eig(ad.lift(x))
        return w[..., : self.k]

    def combine_gradients(self, x, coeffs):
        # grad of lambda_i is q_i q_i^T, so the combination is Q diag(c) Q^T
        w, q = ad.sym_eig(ad.lift(x))
        n = ad.value_of(x).shape[-1]
        if self.k < n:
            pad = np.zeros(ad.value_of(coeffs).shape[:-1] + (n - self.k,))
            coeffs = ad.concatenate([ad.lift(coeffs), ad.lift(pad)], axis=-1)
        euclid = q @ ad.diag_embed(coeffs) @ ad.mT(q)
        return self.manifold.riem_grad(x, euclid)


class PseudoHyperplaneBank(FeatureBank):
    """Distances to ``k`` pseudo-hyperplanes (frozen parameters).

    Feature values are differentiable in ``x`` through the fixed minimizer;
    the base points and normals stay frozen because the minimizer location is
    not differentiated.
    """

    def __init__(self, manifold: mf.Manifold, points: np.ndarray,
                 normals: np.ndarray, radius: float):
        if radius <= 0:
            raise PreconditionError("radius must be positive")
        self.manifold = manifold
        self.points = np.asarray(points, dtype=np.float64)
        self.normals = np.asarray(normals, dtype=np.float64)
        self.radius = float(radius)

    @classmethod
    def random(cls, manifold: mf.Manifold, k: int, rng,
               radius: float = 1.0) -> "PseudoHyperplaneBank":
        pts = manifold.random_point(rng, k)
        nrm = np.stack([manifold.random_tangent(rng, pts[i]) for i in range(k)])
        return cls(manifold, pts, nrm, radius)

    @property
    def size(self):
        return self.points.shape[0]

    def _value_nodes(self, x):
        xv = ad.value_of(x)
        cols = []
        for i in range(self.size):
            col = []
            for j in range(xv.shape[0]):
                xj = x[j] if isinstance(x, ad.Node) else xv[j]
                col.append(pseudo_hyperplane_project(
                    xj, self.points[i], self.normals[i], self.radius, self.manifold))
            cols.append(ad.stack([ad.lift(c) for c in col]))
        return ad.stack(cols, axis=1)

    def values(self, x):
        return self._value_nodes(x)

    def combine_gradients(self, x, coeffs):
        xv = ad.value_of(x)
        grads = np.zeros((self.size,) + xv.shape)
        for i in range(self.size):
            for j in range(xv.shape[0]):
                xp = ad.Parameter(xv[j])
                with ad.Tape() as tape:
                    d = pseudo_hyperplane_project(
                        xp, self.points[i], self.normals[i], self.radius, self.manifold)
                grads[i, j] = tape.gradients(d)[xp]
        # fixed-minimizer gradients are constants; only the coefficients carry
        # parameter sensitivity here
        fields = [
            self.manifold.riem_grad(xv, grads[i]) for i in range(self.size)
        ]
        out = None
        for i, field in enumerate(fields):
            term = ad.reshape(coeffs[:, i], (-1,) + (1,) * (xv.ndim - 1)) * ad.lift(field)
            out = term if out is None else out + term
        return out
