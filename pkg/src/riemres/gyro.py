"""Gyrovector baseline operations used in residual-connection ablations.

``hyp_matvec`` is the algebraic hyperbolic matrix-vector product whose
composition collapse makes stacked gyrovector linear layers equivalent to a
single one; ``spd_gyro_add`` is the congruence-style Mobius addition on SPD
matrices.  Both are baselines, not part of the geodesic residual design.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import linalg
from .errors import DomainError


def hyp_matvec(m, x):
    """Hyperbolic matrix-vector product on the unit Poincare ball.

    ``tanh((|Mx|/|x|) atanh(|x|)) Mx/|Mx|``; both ``x = 0`` and ``Mx = 0``
    map to the origin (limit convention).
    """
    m = np.asarray(m, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    nx = float(np.sqrt((x * x).sum()))
    if nx >= 1.0:
        raise DomainError(f"|x| = {nx:.6f} is not inside the unit ball")
    if nx == 0.0:
        return np.zeros_like(x)
    mx = m @ x
    nmx = float(np.sqrt((mx * mx).sum()))
    if nmx == 0.0:
        return np.zeros_like(x)
    return np.tanh(nmx / nx * np.arctanh(nx)) * mx / nmx


def spd_gyro_add(x, y):
    """Mobius addition on SPD matrices: ``sqrt(X) Y sqrt(X)``."""
    xh = linalg.sym_sqrt(ad.lift(x))
    out = xh @ ad.lift(y) @ xh
    out = (out + ad.mT(out)) * 0.5
    if isinstance(x, (ad.Node, ad.Parameter)) or isinstance(y, (ad.Node, ad.Parameter)):
        return out
    return out.value
