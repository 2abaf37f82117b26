"""Reverse-mode autodiff over numpy arrays.

Float32 is the working dtype, float64 is used for gradient checking. Ops in
`functional` (and the arithmetic methods below) build the graph; `backward`
walks it once in reverse topological order. Gradients accumulate on every
tensor that requires grad, so call `zero_grad` between steps.
"""

import contextlib

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "as_tensor",
    "no_grad",
    "grad_enabled",
    "set_check_finite",
    "check_finite_enabled",
]


class ShapeError(ValueError):
    """Operand shapes cannot combine under the op's contract."""


_GRAD_ENABLED = True
_CHECK_FINITE = False

_FLOATS = (np.float32, np.float64)


def set_check_finite(flag):
    """Toggle per-op NaN/Inf detection. Slow; meant for tests and f64 checks."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(flag)


def check_finite_enabled():
    return _CHECK_FINITE


def grad_enabled():
    return _GRAD_ENABLED


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference, data prep)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _check(arr, where):
    if _CHECK_FINITE and not np.all(np.isfinite(arr)):
        raise FloatingPointError("non-finite values in %s" % where)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.type not in _FLOATS:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.name = name

    # -- graph construction ------------------------------------------------

    @staticmethod
    def _make(data, parents, backward):
        """Wrap an op result. `backward(grad_out) -> tuple of parent grads`."""
        _check(data, "forward op")
        out = Tensor(data)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    def backward(self, grad=None):
        """Accumulate gradients of `self` into every upstream `requires_grad` tensor."""
        if not self.requires_grad:
            raise RuntimeError("backward on a tensor that does not require grad")
        if grad is None:
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.data.shape:
                raise ShapeError("seed grad shape %s != tensor shape %s"
                                 % (grad.shape, self.data.shape))

        # iterative topological sort; graphs can be deep
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))

        flowing = {id(self): grad}
        for node in reversed(topo):
            g = flowing.pop(id(node), None)
            if g is None:
                continue
            if node.grad is None:
                node.grad = g.copy()
            else:
                node.grad = node.grad + g
            if node._backward is None:
                continue
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                pg = np.asarray(pg)
                if pg.shape != p.data.shape:
                    raise ShapeError("backward produced grad %s for parent %s"
                                     % (pg.shape, p.data.shape))
                if pg.dtype != p.data.dtype:
                    pg = pg.astype(p.data.dtype)
                _check(pg, "backward op")
                if id(p) in flowing:
                    flowing[id(p)] = flowing[id(p)] + pg
                else:
                    flowing[id(p)] = pg

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    # -- conveniences --------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        head = "Tensor" if type(self) is Tensor else type(self).__name__
        grad = ", grad" if self.requires_grad else ""
        return "%s(shape=%s, dtype=%s%s)" % (head, self.data.shape, self.data.dtype, grad)

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other, like=self)
        out = self.data + other.data

        def bwd(g):
            return _unbroadcast(g, self.data.shape), _unbroadcast(g, other.data.shape)

        return Tensor._make(out, (self, other), bwd)

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other, like=self)
        out = self.data - other.data

        def bwd(g):
            return _unbroadcast(g, self.data.shape), _unbroadcast(-g, other.data.shape)

        return Tensor._make(out, (self, other), bwd)

    def __rsub__(self, other):
        return as_tensor(other, like=self).__sub__(self)

    def __mul__(self, other):
        other = as_tensor(other, like=self)
        out = self.data * other.data
        a, b = self.data, other.data

        def bwd(g):
            return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)

        return Tensor._make(out, (self, other), bwd)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other, like=self)
        out = self.data / other.data
        a, b = self.data, other.data

        def bwd(g):
            return _unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)

        return Tensor._make(out, (self, other), bwd)

    def __rtruediv__(self, other):
        return as_tensor(other, like=self).__truediv__(self)

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __pow__(self, p):
        if isinstance(p, Tensor):
            raise TypeError("tensor exponents are not supported; use exp/log")
        p = float(p)
        x = self.data
        out = x ** p

        def bwd(g):
            return (g * p * x ** (p - 1.0),)

        return Tensor._make(out, (self,), bwd)

    def __matmul__(self, other):
        other = as_tensor(other, like=self)
        a, b = self.data, other.data
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError("matmul needs rank >= 2, got %s @ %s" % (a.shape, b.shape))
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError("matmul inner dims differ: %s @ %s" % (a.shape, b.shape))
        out = np.matmul(a, b)

        def bwd(g):
            da = np.matmul(g, np.swapaxes(b, -1, -2))
            db = np.matmul(np.swapaxes(a, -1, -2), g)
            return _unbroadcast_batched(da, a.shape), _unbroadcast_batched(db, b.shape)

        return Tensor._make(out, (self, other), bwd)

    # -- shape ops -----------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src = self.data.shape
        out = self.data.reshape(shape)

        def bwd(g):
            return (g.reshape(src),)

        return Tensor._make(out, (self,), bwd)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(range(self.data.ndim))[::-1]
        inv = tuple(np.argsort(axes))
        out = self.data.transpose(axes)

        def bwd(g):
            return (g.transpose(inv),)

        return Tensor._make(out, (self,), bwd)

    def cast(self, dtype):
        src = self.data.dtype
        out = self.data.astype(dtype)

        def bwd(g):
            return (g.astype(src),)

        return Tensor._make(out, (self,), bwd)

    def __getitem__(self, idx):
        x = self.data
        out = x[idx]

        def bwd(g):
            dx = np.zeros_like(x)
            np.add.at(dx, idx, g)
            return (dx,)

        return Tensor._make(out, (self,), bwd)

    # -- reductions ------------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        x = self.data
        out = x.sum(axis=axis, keepdims=keepdims)

        def bwd(g):
            return (_spread(g, x.shape, axis, keepdims),)

        return Tensor._make(out, (self,), bwd)

    def mean(self, axis=None, keepdims=False):
        x = self.data
        out = x.mean(axis=axis, keepdims=keepdims)
        n = x.size if axis is None else np.prod([x.shape[a] for a in _axes_tuple(axis, x.ndim)])

        def bwd(g):
            return (_spread(g, x.shape, axis, keepdims) / n,)

        return Tensor._make(out, (self,), bwd)


def as_tensor(x, like=None):
    """Coerce scalars/arrays to Tensor; scalars adopt `like`'s dtype."""
    if isinstance(x, Tensor):
        return x
    dtype = None
    if like is not None and np.isscalar(x):
        dtype = like.data.dtype
    return Tensor(x, dtype=dtype)


def _axes_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, (tuple, list)):
        return tuple(a % ndim for a in axis)
    return (axis % ndim,)


def _spread(g, shape, axis, keepdims):
    """Expand a reduction gradient back to the pre-reduction shape."""
    if axis is None:
        return np.broadcast_to(np.asarray(g), shape).copy()
    axes = sorted(_axes_tuple(axis, len(shape)))
    if not keepdims:
        for a in axes:
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape).copy()


def _unbroadcast(g, shape):
    """Sum `g` down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra < 0:
        raise ShapeError("gradient rank below operand rank")
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _unbroadcast_batched(g, shape):
    """Like `_unbroadcast` but the trailing two (matrix) dims always match."""
    if g.shape == shape:
        return g
    batch = shape[:-2]
    extra = (g.ndim - 2) - len(batch)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(batch) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g
