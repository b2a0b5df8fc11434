"""Minimal reverse-mode automatic differentiation over float64 arrays.

Graphs are built on the fly (define-by-run) whenever an operand has
``requires_grad`` set; :func:`no_grad` suspends recording for inference.

Broadcasting follows numpy's rule: shapes are aligned at the trailing
dimension, missing leading dimensions are treated as 1, and a dimension of
size 1 stretches to match the other operand.  Gradients flowing into a
broadcast operand are summed back over the stretched axes.

Calling :meth:`Tensor.backward` twice without :func:`zero_grad` adds the
second set of gradients onto the first.
"""

import contextlib
import math

import numpy as np

from . import _kernels, special

RNG_ALGORITHM = "numpy.PCG64"

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, op="leaf"):
        self.data = np.array(data, dtype=np.float64) if not isinstance(data, np.ndarray) \
            or data.dtype != np.float64 else data
        self.requires_grad = bool(requires_grad)
        self._grad = None
        self._parents = _parents
        self._backward = _backward
        self.op = op

    # -- introspection -------------------------------------------------
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
    def values(self):
        """Row-major flat view of the data."""
        return self.data.reshape(-1)

    @property
    def grad(self):
        if self._grad is None:
            return np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value):
        self._grad = None if value is None else np.asarray(value, dtype=np.float64)

    def item(self):
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # -- graph ---------------------------------------------------------
    def backward(self):
        """Populate ``.grad`` on every requires_grad tensor reaching this scalar."""
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar root, got shape {self.shape}")
        if not self.requires_grad:
            return
        order = _topo(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            node._grad = g if node._grad is None else node._grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def sum(self, axis=None, keepdims=False):
        return reduce(self, axis, "sum", keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce(self, axis, "mean", keepdims)

    def max(self, axis=None, keepdims=False):
        return reduce(self, axis, "max", keepdims)

    def relu(self):
        return activation(self, "relu")

    def tanh(self):
        return activation(self, "tanh")

    def sigmoid(self):
        return activation(self, "sigmoid")

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)


def _topo(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def zero_grad(tensors):
    for t in tensors:
        t._grad = None


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward, op):
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward, op)
    return Tensor(data, op=op)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None


# -- elementwise binary ------------------------------------------------

def elementwise_binary(a, b, op):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    x, y = a.data, b.data
    if op == "add":
        out = x + y
        bw = lambda g: (_unbroadcast(g, x.shape), _unbroadcast(g, y.shape))
    elif op == "sub":
        out = x - y
        bw = lambda g: (_unbroadcast(g, x.shape), _unbroadcast(-g, y.shape))
    elif op == "mul":
        out = x * y
        bw = lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape))
    elif op == "div":
        out = x / y
        bw = lambda g: (_unbroadcast(g / y, x.shape), _unbroadcast(-g * x / (y * y), y.shape))
    else:
        raise ValueError(f"unknown binary op {op!r}")
    return _node(out, (a, b), bw, op)


def add(a, b):
    return elementwise_binary(a, b, "add")


def sub(a, b):
    return elementwise_binary(a, b, "sub")


def mul(a, b):
    return elementwise_binary(a, b, "mul")


def div(a, b):
    return elementwise_binary(a, b, "div")


def matmul(a, b):
    """Matrix product; ``a`` may carry leading batch dimensions."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    x, y = a.data, b.data
    out = x @ y

    def bw(g):
        ga = g @ np.swapaxes(y, -1, -2)
        gb = np.swapaxes(x, -1, -2) @ g
        return _unbroadcast(ga, x.shape), _unbroadcast(gb, y.shape)

    return _node(out, (a, b), bw, "matmul")


# -- unary -------------------------------------------------------------

def activation(x, kind):
    x = as_tensor(x)
    d = x.data
    if kind == "relu":
        out = np.maximum(d, 0.0)
        bw = lambda g: (g * (d > 0),)
    elif kind == "tanh":
        out = np.tanh(d)
        bw = lambda g: (g * (1.0 - out * out),)
    elif kind == "sigmoid":
        out = _sigmoid(d)
        bw = lambda g: (g * out * (1.0 - out),)
    else:
        raise ValueError(f"unknown activation {kind!r}")
    return _node(out, (x,), bw, kind)


def _sigmoid(d):
    e = np.exp(-np.abs(d))
    return np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def relu(x):
    return activation(x, "relu")


def tanh(x):
    return activation(x, "tanh")


def sigmoid(x):
    return activation(x, "sigmoid")


def softplus(x):
    x = as_tensor(x)
    d = x.data
    out = np.maximum(d, 0.0) + np.log1p(np.exp(-np.abs(d)))
    return _node(out, (x,), lambda g: (g * _sigmoid(d),), "softplus")


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)
    return _node(out, (x,), lambda g: (g * out,), "exp")


def log(x):
    x = as_tensor(x)
    d = x.data
    return _node(np.log(d), (x,), lambda g: (g / d,), "log")


def absolute(x):
    x = as_tensor(x)
    d = x.data
    return _node(np.abs(d), (x,), lambda g: (g * np.sign(d),), "abs")


def square(x):
    x = as_tensor(x)
    d = x.data
    return _node(d * d, (x,), lambda g: (2.0 * g * d,), "square")


def lgamma(x):
    x = as_tensor(x)
    d = x.data
    return _node(special.lgamma(d), (x,), lambda g: (g * special.digamma(d),), "lgamma")


def digamma(x):
    x = as_tensor(x)
    d = x.data
    return _node(special.digamma(d), (x,), lambda g: (g * special.trigamma(d),), "digamma")


# -- reductions and normalisation ------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ValueError(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    return tuple(sorted(out))


def reduce(x, axis=None, op="sum", keepdims=False):
    """Sum, mean or max over ``axis`` (None reduces everything).

    The max gradient is routed entirely to the first maximal element of
    each slice in row-major order.
    """
    x = as_tensor(x)
    d = x.data
    axes = _norm_axis(axis, d.ndim)
    count = d.size if axes is None else math.prod(d.shape[a] for a in axes)
    if count == 0:
        raise ValueError(f"reduction over an empty axis of shape {d.shape}")
    kept = d.shape if axes is None else None

    def expand(g):
        if axes is None:
            return np.broadcast_to(np.reshape(g, (1,) * d.ndim), kept)
        if not keepdims:
            g = np.expand_dims(g, axes)
        return np.broadcast_to(g, d.shape)

    if op == "sum":
        out = d.sum(axis=axes, keepdims=keepdims)
        bw = lambda g: (np.array(expand(g)),)
    elif op == "mean":
        out = d.mean(axis=axes, keepdims=keepdims)
        bw = lambda g: (np.array(expand(g)) / count,)
    elif op == "max":
        if axes is None:
            flat = int(np.argmax(d))
            out = np.array(d.reshape(-1)[flat])
            if keepdims:
                out = out.reshape((1,) * d.ndim)

            def bw(g):
                gx = np.zeros(d.size)
                gx[flat] = np.reshape(g, -1)[0]
                return (gx.reshape(d.shape),)
        else:
            if len(axes) != 1:
                raise ValueError("max reduction supports a single axis")
            ax = axes[0]
            idx = np.expand_dims(np.argmax(d, axis=ax), ax)
            out = np.take_along_axis(d, idx, axis=ax)
            if not keepdims:
                out = np.squeeze(out, ax)

            def bw(g):
                gx = np.zeros_like(d)
                gk = g if keepdims else np.expand_dims(g, ax)
                np.put_along_axis(gx, idx, gk, axis=ax)
                return (gx,)
    else:
        raise ValueError(f"unknown reduction {op!r}")
    return _node(np.asarray(out, dtype=np.float64), (x,), bw, op)


def softmax(x, axis=-1):
    x = as_tensor(x)
    d = x.data
    if not -d.ndim <= axis < d.ndim:
        raise ValueError(f"axis {axis} out of range for rank {d.ndim}")
    z = d - d.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (x,), bw, "softmax")


# -- shape manipulation ------------------------------------------------

def reshape(x, shape):
    x = as_tensor(x)
    src = x.shape
    out = x.data.reshape(shape)
    return _node(out, (x,), lambda g: (g.reshape(src),), "reshape")


def transpose(x, axes=None):
    x = as_tensor(x)
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.transpose(x.data, axes)
    return _node(out, (x,), lambda g: (np.transpose(g, inv),), "transpose")


def getitem(x, idx):
    x = as_tensor(x)
    out = x.data[idx]

    def bw(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _node(np.array(out, dtype=np.float64), (x,), bw, "getitem")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(out, tuple(tensors), bw, "concat")


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _node(out, tuple(tensors), bw, "stack")


# -- convolution -------------------------------------------------------

def conv2d(x, w, b=None, stride=1, pad=0):
    """2-D convolution of (B, C, H, W) by (O, C, k, k) weights."""
    x, w = as_tensor(x), as_tensor(w)
    B, C, H, W = x.shape
    O, Cw, k, k2 = w.shape
    if Cw != C or k != k2:
        raise ValueError(f"conv2d weight {w.shape} incompatible with input {x.shape}")
    cols = _kernels.im2col(x.data, k, stride, pad)
    OH = (H + 2 * pad - k) // stride + 1
    OW = (W + 2 * pad - k) // stride + 1
    wm = w.data.reshape(O, -1)
    out = wm @ cols
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        out = out + b.data[None, :, None]
        parents.append(b)
    out = out.reshape(B, O, OH, OW)

    def bw(g):
        gm = g.reshape(B, O, OH * OW)
        gw = np.einsum("bol,bkl->ok", gm, cols).reshape(w.shape)
        gx = _kernels.col2im(wm.T @ gm, x.shape, k, stride, pad) if x.requires_grad else None
        grads = [gx, gw]
        if b is not None:
            grads.append(gm.sum(axis=(0, 2)))
        return tuple(grads)

    return _node(out, tuple(parents), bw, "conv2d")


# -- randomness --------------------------------------------------------

class Rng:
    """Seeded generator; the draw sequence depends only on the seed.

    Backed by numpy's PCG64 bit generator, whose output stream is fixed
    across platforms and numpy versions.
    """

    algorithm = RNG_ALGORITHM

    def __init__(self, seed=0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def spawn(self, key):
        """Independent child stream derived from (seed, key)."""
        return Rng(np.random.SeedSequence([self.seed, int(key)]).generate_state(2, np.uint64)[0])

    def get_state(self):
        s = self._gen.bit_generator.state
        return {"seed": self.seed, "state": int(s["state"]["state"]), "inc": int(s["state"]["inc"]),
                "has_uint32": int(s["has_uint32"]), "uinteger": int(s["uinteger"])}

    def set_state(self, st):
        self.seed = int(st["seed"])
        self._gen.bit_generator.state = {
            "bit_generator": "PCG64",
            "state": {"state": int(st["state"]), "inc": int(st["inc"])},
            "has_uint32": int(st["has_uint32"]), "uinteger": int(st["uinteger"]),
        }


def xavier_uniform(shape, rng, fan_in=None, fan_out=None):
    if fan_in is None or fan_out is None:
        receptive = math.prod(shape[2:]) if len(shape) > 2 else 1
        fan_out = shape[0] * receptive if len(shape) > 2 else shape[-1]
        fan_in = shape[1] * receptive if len(shape) > 2 else shape[0]
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)


# -- verification ------------------------------------------------------

def _rel_err(a, b):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def grad_check(f, x, eps=1e-5):
    """Max relative error between the autodiff gradient of ``f`` and central differences.

    ``f`` maps a Tensor to a scalar Tensor.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x0 = np.array(as_tensor(x).data, dtype=np.float64)
    xt = Tensor(x0.copy(), requires_grad=True)
    y = f(xt)
    if not np.all(np.isfinite(y.data)):
        raise ValueError("function value is not finite")
    y.backward()
    analytic = xt.grad.reshape(-1)
    numeric = np.empty_like(analytic)
    flat = x0.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f(Tensor(x0.copy())).item()
            flat[i] = orig - eps
            fm = f(Tensor(x0.copy())).item()
            flat[i] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise ValueError("function value is not finite")
            numeric[i] = (fp - fm) / (2.0 * eps)
    return float(_rel_err(analytic, numeric).max(initial=0.0))


def grad_check_params(loss_fn, params, eps=1e-5, max_coords=None, rng=None, select="random"):
    """Like :func:`grad_check` but perturbs parameter tensors in place.

    ``loss_fn`` takes no arguments and rebuilds the graph from ``params``.
    With ``max_coords`` only that many coordinates per tensor are probed:
    drawn with ``rng`` (``select="random"``) or the ones with the largest
    analytic gradient (``select="largest"``), where the relative error is
    not swamped by finite-difference roundoff.  Returns the worst relative
    error and its location.
    """
    if select not in ("random", "largest"):
        raise ValueError(f"unknown coordinate selection {select!r}")
    zero_grad(params)
    loss = loss_fn()
    loss.backward()
    worst, where = 0.0, None
    for pi, p in enumerate(params):
        flat = p.data.reshape(-1)
        analytic = p.grad.reshape(-1).copy()
        coords = range(flat.size)
        if max_coords is not None and flat.size > max_coords:
            if select == "largest":
                pick = np.argsort(-np.abs(analytic), kind="stable")[:max_coords]
            else:
                pick = rng.permutation(flat.size)[:max_coords]
            coords = sorted(int(i) for i in pick)
        with no_grad():
            for i in coords:
                orig = flat[i]
                flat[i] = orig + eps
                fp = loss_fn().item()
                flat[i] = orig - eps
                fm = loss_fn().item()
                flat[i] = orig
                err = float(_rel_err(analytic[i], (fp - fm) / (2.0 * eps)))
                if err > worst:
                    worst, where = err, (pi, i)
    zero_grad(params)
    return worst, where
