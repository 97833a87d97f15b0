"""Kernel backend selection: compiled Cython extension when available,
pure-numpy fallback otherwise.

Set ``RIEMRES_FORCE_PURE=1`` to skip the compiled extension (used by the
benchmark and the backend-agreement tests).
"""

import os

from . import pure

if os.environ.get("RIEMRES_FORCE_PURE", "") not in ("", "0"):
    _impl = pure
else:
    try:
        from . import _fast as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = pure

BACKEND = _impl.BACKEND
jacobi_eigh = _impl.jacobi_eigh
cholesky_lower = _impl.cholesky_lower
