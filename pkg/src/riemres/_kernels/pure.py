"""Pure-numpy fallback for the hot numeric kernels.

Same contracts as the compiled module ``_fast``: cyclic Jacobi symmetric
eigendecomposition (descending eigenvalues) and a non-raising Cholesky
factorization used for SPD filtering.
"""

import numpy as np

BACKEND = "pure"

MAX_SWEEPS = 100
OFFDIAG_TOL = 1e-12


def _jacobi_single(a):
    n = a.shape[0]
    a = a.copy()
    v = np.eye(n)
    scale = max(1.0, np.abs(a).max())
    tol = OFFDIAG_TOL * scale
    for _ in range(MAX_SWEEPS):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= tol:
                    continue
                off = max(off, abs(apq))
                # rotation angle zeroing a[p, q]
                theta = 0.5 * (a[q, q] - a[p, p]) / apq
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                cp = a[:, p].copy()
                cq = a[:, q].copy()
                a[:, p] = c * cp - s * cq
                a[:, q] = s * cp + c * cq
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
        if off <= tol:
            break
    else:
        # re-check convergence after the final sweep
        mask = ~np.eye(n, dtype=bool)
        if np.abs(a[mask]).max() > tol:
            return None
    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]


def jacobi_eigh(a):
    """Eigendecomposition of symmetric matrices, batched over leading axes.

    Returns ``(w, q)`` with eigenvalues sorted descending.  Returns
    ``(None, None)`` on non-convergence.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 2:
        res = _jacobi_single(a)
        if res is None:
            return None, None
        return res
    flat = a.reshape((-1,) + a.shape[-2:])
    ws = np.empty(flat.shape[:1] + flat.shape[-1:])
    qs = np.empty_like(flat)
    for i in range(flat.shape[0]):
        res = _jacobi_single(flat[i])
        if res is None:
            return None, None
        ws[i], qs[i] = res
    return ws.reshape(a.shape[:-1]), qs.reshape(a.shape)


def cholesky_lower(x):
    """Lower-triangular Cholesky factor, or ``None`` when a pivot is <= 0."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    low = np.zeros_like(x)
    for j in range(n):
        pivot = x[j, j] - low[j, :j] @ low[j, :j]
        if pivot <= 0.0:
            return None
        low[j, j] = np.sqrt(pivot)
        if j + 1 < n:
            low[j + 1:, j] = (x[j + 1:, j] - low[j + 1:, :j] @ low[j, :j]) / low[j, j]
    return low
