"""Reverse-mode automatic differentiation on dense float64 arrays.

A computation is a DAG of ``Node`` objects built eagerly by the ops in this
module.  ``Tape`` maps ``Parameter`` objects to leaf nodes so that a model can
be evaluated repeatedly with fresh recordings.  Gradients are propagated by
walking the DAG in reverse topological order.
"""

from __future__ import annotations

import numpy as np

from .errors import PreconditionError


class Parameter:
    """A learnable array with an optional optimizer-time constraint tag.

    ``constraint`` is one of ``None``, ``"unit_rows"`` (rows renormalized to
    unit length), ``"stiefel"`` (columns re-orthonormalized by QR) or
    ``"ball"`` (rows rescaled into the Poincare ball; curvature attached via
    ``constraint_arg``).
    """

    __slots__ = ("data", "constraint", "constraint_arg", "name")

    def __init__(self, data, constraint=None, constraint_arg=None, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.constraint = constraint
        self.constraint_arg = constraint_arg
        self.name = name

    def __repr__(self):
        return f"Parameter(shape={self.data.shape}, name={self.name!r})"


class Node:
    """One value in the computation DAG.

    ``parents`` is a tuple of ``(node, vjp)`` pairs where ``vjp`` maps the
    output cotangent to the parent's cotangent contribution.
    """

    __slots__ = ("value", "parents")
    # keep numpy from broadcasting over Node; reflected operators run instead
    __array_ufunc__ = None

    def __init__(self, value, parents=()):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def __repr__(self):
        return f"Node(shape={self.value.shape})"


class Tape:
    """Associates Parameters with leaf nodes for one recording.

    Single-writer: one tape is active at a time (nesting is allowed; the
    innermost wins).  ``ops`` work with or without an active tape; gradients
    for a Parameter require the forward pass to have run under ``with Tape()``.
    """

    _stack: list["Tape"] = []

    def __init__(self):
        self._leaves: dict[int, tuple[Parameter, Node]] = {}

    def __enter__(self):
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc):
        Tape._stack.pop()
        return False

    @staticmethod
    def current():
        return Tape._stack[-1] if Tape._stack else None

    def watch(self, param: Parameter) -> Node:
        entry = self._leaves.get(id(param))
        if entry is None:
            node = Node(param.data)
            self._leaves[id(param)] = (param, node)
            return node
        return entry[1]

    def parameters(self):
        return [p for p, _ in self._leaves.values()]

    def gradients(self, output: Node) -> dict[Parameter, np.ndarray]:
        """Backpropagate from a scalar output to every watched parameter.

        Parameters not reached from ``output`` get zero gradients.
        """
        if output.value.size != 1:
            raise PreconditionError("gradient source must be scalar")
        grads = _backward(output)
        out = {}
        for param, node in self._leaves.values():
            g = grads.get(id(node))
            out[param] = np.zeros_like(param.data) if g is None else g
        return out


def grad(tape: Tape, output: Node) -> dict[Parameter, np.ndarray]:
    """Gradients of a scalar node for all parameter slots watched by ``tape``."""
    return tape.gradients(output)


def _topo_order(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _backward(output: Node) -> dict[int, np.ndarray]:
    grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.value)}
    for node in reversed(_topo_order(output)):
        g = grads.get(id(node))
        if g is None:
            continue
        for parent, vjp in node.parents:
            contrib = vjp(g)
            prev = grads.get(id(parent))
            grads[id(parent)] = contrib if prev is None else prev + contrib
    return grads


def gradient(output: Node, wrt: Node) -> np.ndarray:
    """Gradient of a scalar node with respect to an arbitrary graph node."""
    g = _backward(output).get(id(wrt))
    return np.zeros_like(wrt.value) if g is None else g


def lift(x) -> Node:
    """Wrap an array/Parameter/Node as a graph node."""
    if isinstance(x, Node):
        return x
    if isinstance(x, Parameter):
        tape = Tape.current()
        return tape.watch(x) if tape is not None else Node(x.data)
    return Node(np.asarray(x, dtype=np.float64))


def value_of(x) -> np.ndarray:
    if isinstance(x, Node):
        return x.value
    if isinstance(x, Parameter):
        return x.data
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b):
    a, b = lift(a), lift(b)
    return Node(a.value + b.value,
                ((a, lambda g: _unbroadcast(g, a.value.shape)),
                 (b, lambda g: _unbroadcast(g, b.value.shape))))


def sub(a, b):
    a, b = lift(a), lift(b)
    return Node(a.value - b.value,
                ((a, lambda g: _unbroadcast(g, a.value.shape)),
                 (b, lambda g: _unbroadcast(-g, b.value.shape))))


def neg(a):
    a = lift(a)
    return Node(-a.value, ((a, lambda g: -g),))


def mul(a, b):
    a, b = lift(a), lift(b)
    return Node(a.value * b.value,
                ((a, lambda g: _unbroadcast(g * b.value, a.value.shape)),
                 (b, lambda g: _unbroadcast(g * a.value, b.value.shape))))


def div(a, b):
    a, b = lift(a), lift(b)
    return Node(a.value / b.value,
                ((a, lambda g: _unbroadcast(g / b.value, a.value.shape)),
                 (b, lambda g: _unbroadcast(-g * a.value / (b.value * b.value),
                                            b.value.shape))))


def power(a, p: float):
    a = lift(a)
    p = float(p)
    return Node(a.value ** p,
                ((a, lambda g: g * p * a.value ** (p - 1.0)),))


def exp(a):
    a = lift(a)
    out = np.exp(a.value)
    return Node(out, ((a, lambda g: g * out),))


def log(a):
    a = lift(a)
    return Node(np.log(a.value), ((a, lambda g: g / a.value),))


def sqrt(a):
    a = lift(a)
    out = np.sqrt(a.value)
    return Node(out, ((a, lambda g: g / (2.0 * out)),))


def tanh(a):
    a = lift(a)
    out = np.tanh(a.value)
    return Node(out, ((a, lambda g: g * (1.0 - out * out)),))


def arctanh(a):
    a = lift(a)
    return Node(np.arctanh(a.value),
                ((a, lambda g: g / (1.0 - a.value * a.value)),))


def sin(a):
    a = lift(a)
    return Node(np.sin(a.value), ((a, lambda g: g * np.cos(a.value)),))


def cos(a):
    a = lift(a)
    return Node(np.cos(a.value), ((a, lambda g: -g * np.sin(a.value)),))


# arccos/arccosh gradients blow up at the domain edge, which is hit exactly
# when two points coincide; the denominators are floored so a coincident pair
# yields a large-but-finite (not NaN) gradient.
_EDGE_FLOOR = 1e-16


def arccos(a):
    a = lift(a)
    v = a.value
    denom = np.sqrt(np.maximum(1.0 - v * v, _EDGE_FLOOR))
    return Node(np.arccos(np.clip(v, -1.0, 1.0)),
                ((a, lambda g: -g / denom),))


def arccosh(a):
    a = lift(a)
    v = np.maximum(a.value, 1.0)
    denom = np.sqrt(np.maximum(v * v - 1.0, _EDGE_FLOOR))
    return Node(np.arccosh(v), ((a, lambda g: g / denom),))


def absolute(a):
    a = lift(a)
    s = np.sign(a.value)
    return Node(np.abs(a.value), ((a, lambda g: g * s),))


def sign(a):
    a = lift(a)
    return Node(np.sign(a.value), ((a, lambda g: np.zeros_like(a.value)),))


def relu(a):
    a = lift(a)
    mask = a.value > 0.0
    return Node(np.where(mask, a.value, 0.0), ((a, lambda g: g * mask),))


def sigmoid(a):
    a = lift(a)
    out = 0.5 * (np.tanh(0.5 * a.value) + 1.0)
    return Node(out, ((a, lambda g: g * out * (1.0 - out)),))


def softplus(a):
    a = lift(a)
    v = a.value
    out = np.logaddexp(0.0, v)
    s = 0.5 * (np.tanh(0.5 * v) + 1.0)
    return Node(out, ((a, lambda g: g * s),))


def clip(a, lo=None, hi=None):
    """Clamp values; gradient passes only where no clamping occurred."""
    a = lift(a)
    v = a.value
    mask = np.ones_like(v, dtype=bool)
    if lo is not None:
        mask &= v >= lo
    if hi is not None:
        mask &= v <= hi
    return Node(np.clip(v, lo, hi), ((a, lambda g: g * mask),))


def maximum(a, b):
    a, b = lift(a), lift(b)
    mask = a.value >= b.value
    return Node(np.where(mask, a.value, b.value),
                ((a, lambda g: _unbroadcast(g * mask, a.value.shape)),
                 (b, lambda g: _unbroadcast(g * ~mask, b.value.shape))))


def where(cond, a, b):
    """Select per-element; ``cond`` is a plain boolean array, not a node."""
    cond = np.asarray(cond, dtype=bool)
    a, b = lift(a), lift(b)
    return Node(np.where(cond, a.value, b.value),
                ((a, lambda g: _unbroadcast(g * cond, a.value.shape)),
                 (b, lambda g: _unbroadcast(g * ~cond, b.value.shape))))


def stop_gradient(a):
    return Node(value_of(a))


# ---------------------------------------------------------------------------
# reductions and shape ops


def sum_(a, axis=None, keepdims=False):
    a = lift(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, a.value.shape).copy()
        if not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.value.shape).copy()

    return Node(out, ((a, vjp),))


def mean(a, axis=None, keepdims=False):
    a = lift(a)
    count = a.value.size if axis is None else a.value.shape[axis]
    return sum_(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a, shape):
    a = lift(a)
    return Node(a.value.reshape(shape),
                ((a, lambda g: g.reshape(a.value.shape)),))


def mT(a):
    """Transpose the last two axes."""
    a = lift(a)
    return Node(np.swapaxes(a.value, -1, -2),
                ((a, lambda g: np.swapaxes(g, -1, -2)),))


def getitem(a, idx):
    a = lift(a)

    def vjp(g):
        out = np.zeros_like(a.value)
        np.add.at(out, idx, g)
        return out

    return Node(a.value[idx], ((a, vjp),))


def concatenate(nodes, axis=0):
    nodes = [lift(n) for n in nodes]
    sizes = [n.value.shape[axis] for n in nodes]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i):
        sl = [slice(None)] * nodes[i].value.ndim
        sl[axis] = slice(offsets[i], offsets[i + 1])
        sl = tuple(sl)
        return lambda g: g[sl]

    parents = tuple((nodes[i], make_vjp(i)) for i in range(len(nodes)))
    return Node(np.concatenate([n.value for n in nodes], axis=axis), parents)


def stack(nodes, axis=0):
    nodes = [lift(n) for n in nodes]

    def make_vjp(i):
        return lambda g: np.take(g, i, axis=axis)

    parents = tuple((nodes[i], make_vjp(i)) for i in range(len(nodes)))
    return Node(np.stack([n.value for n in nodes], axis=axis), parents)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    a, b = lift(a), lift(b)
    if a.value.ndim < 2 or b.value.ndim < 2:
        raise PreconditionError("matmul operands must be at least 2-D")
    out = a.value @ b.value

    def vjp_a(g):
        return _unbroadcast(g @ np.swapaxes(b.value, -1, -2), a.value.shape)

    def vjp_b(g):
        return _unbroadcast(np.swapaxes(a.value, -1, -2) @ g, b.value.shape)

    return Node(out, ((a, vjp_a), (b, vjp_b)))


def trace(a):
    a = lift(a)
    n = a.value.shape[-1]
    eye = np.eye(n)

    def vjp(g):
        return np.asarray(g)[..., None, None] * eye

    return Node(np.trace(a.value, axis1=-2, axis2=-1), ((a, vjp),))


def diagonal(a):
    """Extract the diagonal of the last two axes."""
    a = lift(a)

    def vjp(g):
        out = np.zeros_like(a.value)
        idx = np.arange(a.value.shape[-1])
        out[..., idx, idx] = g
        return out

    return Node(np.diagonal(a.value, axis1=-2, axis2=-1).copy(), ((a, vjp),))


def diag_embed(v):
    """Build diagonal matrices from the last axis of ``v``."""
    v = lift(v)
    n = v.value.shape[-1]
    out = np.zeros(v.value.shape + (n,))
    idx = np.arange(n)
    out[..., idx, idx] = v.value

    def vjp(g):
        return np.diagonal(g, axis1=-2, axis2=-1).copy()

    return Node(out, ((v, vjp),))


def inv(a):
    a = lift(a)
    out = np.linalg.inv(a.value)

    def vjp(g):
        t = np.swapaxes(out, -1, -2)
        return -t @ g @ t

    return Node(out, ((a, vjp),))


# Eigenvector sensitivities use divided differences 1/(lam_j - lam_i); near-
# degenerate spectra make these explode, so their magnitude is capped.
EIG_GRAD_CLAMP = 1e6


def sym_eig(a):
    """Differentiable symmetric eigendecomposition (descending eigenvalues).

    Returns ``(eigenvalues, eigenvectors)`` nodes with shapes ``(..., n)`` and
    ``(..., n, n)``; column ``i`` of the eigenvector matrix pairs with
    eigenvalue ``i``.
    """
    from . import _kernels

    a = lift(a)
    w, q = _kernels.jacobi_eigh(a.value)
    if w is None:
        from .errors import NumericError

        raise NumericError("Jacobi eigensolver did not converge within the sweep cap")
    qt = np.swapaxes(q, -1, -2)

    diff = w[..., None, :] - w[..., :, None]  # diff[i, j] = lam_j - lam_i
    with np.errstate(divide="ignore"):
        f = 1.0 / diff
    np.clip(f, -EIG_GRAD_CLAMP, EIG_GRAD_CLAMP, out=f)
    idx = np.arange(w.shape[-1])
    f[..., idx, idx] = 0.0

    def vjp_w(g):
        s = q @ (g[..., None] * np.eye(w.shape[-1])) @ qt
        return 0.5 * (s + np.swapaxes(s, -1, -2))

    def vjp_q(g):
        s = q @ (f * (qt @ g)) @ qt
        return 0.5 * (s + np.swapaxes(s, -1, -2))

    w_node = Node(w, ((a, vjp_w),))
    q_node = Node(q, ((a, vjp_q),))
    return w_node, q_node


# ---------------------------------------------------------------------------
# finite differences


def finite_diff_grad(fn, params, step=1e-5):
    """Central-difference gradients of ``fn()`` with respect to Parameters.

    ``fn`` must read the current ``param.data`` values and return a scalar.
    Error is O(step^2).
    """
    if step <= 0:
        raise PreconditionError("step must be positive")
    grads = {}
    for param in params:
        g = np.zeros_like(param.data)
        flat = param.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(value_of(fn()))
            flat[i] = orig - step
            lo = float(value_of(fn()))
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * step)
        grads[param] = g
    return grads
