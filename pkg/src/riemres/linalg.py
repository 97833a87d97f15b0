"""Symmetric matrix functions and the text interchange format.

All functions accept either numpy arrays or autodiff nodes; given a node they
return a node so gradients flow through the eigendecomposition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import _kernels
from .errors import NumericError, PreconditionError, SingularMatrixError

SYMMETRY_TOL = 1e-12
# mat_log_spd refuses eigenvalues at or below this floor; near-singular
# covariance matrices otherwise destabilize downstream log/exp round trips
EIG_FLOOR = 1e-10


@dataclass
class EigDecomposition:
    """Eigenvalues sorted descending; eigenvector column i pairs with value i."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def check_symmetric(s: np.ndarray, what: str = "matrix") -> None:
    s = np.asarray(s)
    if s.ndim < 2 or s.shape[-1] != s.shape[-2]:
        raise PreconditionError(f"{what} must be square, got shape {s.shape}")
    scale = max(1.0, float(np.abs(s).max()) if s.size else 1.0)
    asym = float(np.abs(s - np.swapaxes(s, -1, -2)).max())
    if asym > SYMMETRY_TOL * scale:
        raise PreconditionError(
            f"{what} must be symmetric; max asymmetry {asym:.3e}")


def sym_eig(s) -> EigDecomposition:
    """Eigendecomposition of a symmetric matrix via cyclic Jacobi rotations."""
    value = ad.value_of(s)
    check_symmetric(value)
    w, q = _kernels.jacobi_eigh(value)
    if w is None:
        raise NumericError("Jacobi eigensolver did not converge within the sweep cap")
    return EigDecomposition(eigenvalues=w, eigenvectors=q)


def _eig_nodes(s: "ad.Node"):
    sym = (s + ad.mT(s)) * 0.5
    return ad.sym_eig(sym)


def _apply_spectral(s, fn_values, fn_node):
    """Rebuild Q.diag(fn(w)).Q^T, on the tape when the input is a node."""
    if isinstance(s, ad.Node):
        w, q = _eig_nodes(s)
        out = q @ ad.diag_embed(fn_node(w)) @ ad.mT(q)
        return (out + ad.mT(out)) * 0.5
    dec = sym_eig(s)
    w, q = dec.eigenvalues, dec.eigenvectors
    fw = fn_values(w)
    out = (q * fw[..., None, :]) @ np.swapaxes(q, -1, -2)
    return (out + np.swapaxes(out, -1, -2)) * 0.5


def mat_exp_sym(v):
    """Matrix exponential of a symmetric matrix; result is SPD."""
    check_symmetric(ad.value_of(v))
    return _apply_spectral(v, np.exp, ad.exp)


def _check_spd_spectrum(w: np.ndarray) -> None:
    wmin = float(w.min())
    if wmin <= EIG_FLOOR:
        raise SingularMatrixError(
            f"matrix has eigenvalue {wmin:.6e} <= floor {EIG_FLOOR:.0e}")


def mat_log_spd(x):
    """Matrix logarithm of an SPD matrix; inverse of ``mat_exp_sym``."""
    value = ad.value_of(x)
    check_symmetric(value)
    dec = sym_eig(value)
    _check_spd_spectrum(dec.eigenvalues)
    return _apply_spectral(x, np.log, ad.log)


def sym_sqrt(x):
    """Symmetric square root of an SPD matrix."""
    value = ad.value_of(x)
    check_symmetric(value)
    _check_spd_spectrum(sym_eig(value).eigenvalues)
    return _apply_spectral(x, np.sqrt, ad.sqrt)


def sym_inv_sqrt(x):
    """Inverse symmetric square root of an SPD matrix."""
    value = ad.value_of(x)
    check_symmetric(value)
    _check_spd_spectrum(sym_eig(value).eigenvalues)
    return _apply_spectral(x, lambda w: 1.0 / np.sqrt(w),
                           lambda w: ad.power(w, -0.5))


def cholesky(x: np.ndarray):
    """Lower-triangular factor of ``x``, or ``None`` if a pivot is <= 0.

    Failure is a normal return (it drives SPD dataset filtering), not an
    exception.
    """
    x = np.asarray(x, dtype=np.float64)
    check_symmetric(x)
    return _kernels.cholesky_lower(x)


def expm_skew(a):
    """Matrix exponential of a general (small) square matrix.

    Scaling-and-squaring with a Taylor series; built from tape primitives so
    it is differentiable.  Used to parameterize orthogonal matrices as
    ``expm(A - A^T)``.
    """
    value = ad.value_of(a)
    n = value.shape[-1]
    norm = float(np.abs(value).sum(axis=-1).max())
    squarings = max(0, int(np.ceil(np.log2(max(norm, 1e-16) / 0.5))))
    scaled = ad.lift(a) * (0.5 ** squarings)
    eye = ad.lift(np.eye(n))
    out = eye
    term = eye
    for k in range(1, 13):
        term = term @ scaled * (1.0 / k)
        out = out + term
    for _ in range(squarings):
        out = out @ out
    return out if isinstance(a, ad.Node) else out.value


# ---------------------------------------------------------------------------
# matrix text format: first line "rows cols", then row-major entries


def format_matrix(m: np.ndarray) -> str:
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    lines = [f"{m.shape[0]} {m.shape[1]}"]
    for row in m:
        lines.append(" ".join(f"{v:.17g}" for v in row))
    return "\n".join(lines) + "\n"


def parse_matrix(text: str) -> np.ndarray:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    if not lines:
        raise PreconditionError("empty matrix text")
    try:
        rows, cols = (int(tok) for tok in lines[0].split())
    except ValueError as exc:
        raise PreconditionError(f"bad matrix header {lines[0]!r}") from exc
    entries = []
    for ln in lines[1:]:
        entries.extend(float(tok) for tok in ln.split())
    if len(entries) != rows * cols:
        raise PreconditionError(
            f"expected {rows * cols} entries, found {len(entries)}")
    return np.array(entries, dtype=np.float64).reshape(rows, cols)


def save_matrix(path, m: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write(format_matrix(m))


def load_matrix(path) -> np.ndarray:
    with open(path) as fh:
        return parse_matrix(fh.read())
