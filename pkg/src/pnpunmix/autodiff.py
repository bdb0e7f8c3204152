"""A small reverse-mode differentiation engine over a closed set of primitives.

Only the operators the unrolled network needs are provided. Every primitive
returns a :class:`Node`; calling :meth:`Node.backward` on a scalar node fills
``.grad`` of every upstream node that requires gradients. Values are float64.
"""
import numpy as np

from ._errors import ParameterError


class Node:
    """A value in the differentiation graph."""

    __slots__ = ("value", "grad", "parents", "op", "requires_grad", "_backward")

    def __init__(self, value, parents=(), op="leaf", requires_grad=False, backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = tuple(parents)
        self.op = op
        self.requires_grad = requires_grad
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.value.size != 1:
            raise ParameterError(f"backward needs a scalar root, got shape {self.shape}")
        order = _topological_order(self)
        for node in order:
            if node is not self:
                node.grad = None
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen and parent.requires_grad:
                stack.append((parent, False))
    return order


def _accumulate(node, g):
    if node.requires_grad:
        node.grad = g if node.grad is None else node.grad + g


def _make(value, parents, op, backward):
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Node(value, op=op)
    return Node(value, parents, op, True, backward)


def _as_node(x):
    return x if isinstance(x, Node) else Node(x)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ParameterError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- leaves -----------------------------------------------------------------

def parameter(value):
    return Node(np.array(value, dtype=np.float64), requires_grad=True)


def constant(value):
    """A leaf that never receives gradients (also used as a stop-gradient)."""
    return Node(value)


def stop_gradient(node):
    return Node(node.value, op="stop_gradient")


# -- elementwise ------------------------------------------------------------

def add(a, b):
    a, b = _as_node(a), _as_node(b)
    _check_broadcast(a, b, "add")

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))
    return _make(a.value + b.value, (a, b), "add", backward)


def sub(a, b):
    a, b = _as_node(a), _as_node(b)
    _check_broadcast(a, b, "sub")

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, -_unbroadcast(g, b.shape))
    return _make(a.value - b.value, (a, b), "sub", backward)


def mul(a, b):
    """Elementwise product with numpy broadcasting (covers node-valued scalars)."""
    a, b = _as_node(a), _as_node(b)
    _check_broadcast(a, b, "mul")

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.value, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.value, b.shape))
    return _make(a.value * b.value, (a, b), "mul", backward)


def scale(a, c):
    """Multiply by a fixed real number."""
    c = float(c)

    def backward(g):
        _accumulate(a, c * g)
    return _make(c * a.value, (a,), "scale", backward)


def relu(a):
    mask = a.value > 0

    def backward(g):
        _accumulate(a, g * mask)
    return _make(np.where(mask, a.value, 0.0), (a,), "relu", backward)


# -- linear algebra -----------------------------------------------------------

def matmul(a, b):
    a, b = _as_node(a), _as_node(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ParameterError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g @ b.value.T)
        if b.requires_grad:
            _accumulate(b, a.value.T @ g)
    return _make(a.value @ b.value, (a, b), "matmul", backward)


def linear(x, weight, bias=None):
    """Fully-connected layer ``W x + b`` on a 1-D input."""
    if x.value.ndim != 1 or weight.value.ndim != 2 or weight.shape[1] != x.shape[0]:
        raise ParameterError(f"linear: weight {weight.shape} does not fit input {x.shape}")
    out = weight.value @ x.value
    parents = (x, weight)
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ParameterError(f"linear: bias shape {bias.shape} != ({weight.shape[0]},)")
        out = out + bias.value
        parents = (x, weight, bias)

    def backward(g):
        if x.requires_grad:
            _accumulate(x, weight.value.T @ g)
        if weight.requires_grad:
            _accumulate(weight, np.outer(g, x.value))
        if bias is not None:
            _accumulate(bias, g)
    return _make(out, parents, "linear", backward)


# -- reductions and shape -----------------------------------------------------

def total(a):
    """Sum of all entries."""
    def backward(g):
        _accumulate(a, np.broadcast_to(g, a.shape).copy())
    return _make(a.value.sum(), (a,), "total", backward)


def mse(a, b):
    """Mean squared difference, a scalar."""
    a, b = _as_node(a), _as_node(b)
    if a.shape != b.shape:
        raise ParameterError(f"mse: shapes differ {a.shape} vs {b.shape}")
    diff = a.value - b.value
    n = diff.size

    def backward(g):
        d = (2.0 / n) * g * diff
        _accumulate(a, d)
        _accumulate(b, -d)
    return _make(np.mean(diff * diff), (a, b), "mse", backward)


def global_avg_pool(x):
    """``(C, H, W) -> (C,)`` spatial mean."""
    if x.value.ndim != 3:
        raise ParameterError(f"global_avg_pool expects (C, H, W), got {x.shape}")
    C, H, W = x.shape

    def backward(g):
        _accumulate(x, np.broadcast_to(g[:, None, None] / (H * W), x.shape).copy())
    return _make(x.value.mean(axis=(1, 2)), (x,), "gap", backward)


def reshape(a, shape):
    def backward(g):
        _accumulate(a, g.reshape(a.shape))
    return _make(a.value.reshape(shape), (a,), "reshape", backward)


def concat(nodes, axis=0):
    nodes = [_as_node(n) for n in nodes]
    sizes = [n.shape[axis] for n in nodes]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for n, lo, hi in zip(nodes, bounds[:-1], bounds[1:]):
            if n.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _accumulate(n, g[tuple(idx)])
    return _make(np.concatenate([n.value for n in nodes], axis=axis), nodes, "concat", backward)


def take(a, start, stop=None):
    """Slice ``a[start:stop]`` along the first axis (``a[start]`` if ``stop`` is None)."""
    key = start if stop is None else slice(start, stop)

    def backward(g):
        full = np.zeros_like(a.value)
        full[key] = g
        _accumulate(a, full)
    return _make(a.value[key], (a,), "take", backward)


def zero_pad_center(a, size):
    """Zero-pad the last two axes of ``a`` (odd ``k x k``) to ``size x size``, centered."""
    k = a.shape[-1]
    if a.shape[-2] != k or k % 2 == 0 or size < k or (size - k) % 2:
        raise ParameterError(f"zero_pad_center: cannot center {a.shape[-2:]} in {size}x{size}")
    off = (size - k) // 2
    out = np.zeros(a.shape[:-2] + (size, size))
    out[..., off:off + k, off:off + k] = a.value

    def backward(g):
        _accumulate(a, g[..., off:off + k, off:off + k])
    return _make(out, (a,), "zero_pad_center", backward)


# -- softmax variants -----------------------------------------------------------

def channel_softmax(a):
    """Softmax over the first axis (channels) at every position."""
    z = a.value - a.value.max(axis=0, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=0, keepdims=True)

    def backward(g):
        _accumulate(a, s * (g - (g * s).sum(axis=0, keepdims=True)))
    return _make(s, (a,), "channel_softmax", backward)


def softmaxpro(logits, live):
    """Positional softmax over branches that are live at each position.

    ``live`` is a boolean array shaped like ``logits`` (branches first).
    Dead entries are exactly zero; every position with at least one live
    branch sums to one.
    """
    live = np.asarray(live, dtype=bool)
    if live.shape != logits.shape:
        raise ParameterError(f"softmaxpro: mask {live.shape} != logits {logits.shape}")
    if not live.any(axis=0).all():
        raise ParameterError("softmaxpro: some canvas position has no live branch")
    z = np.where(live, logits.value, -np.inf)
    z = z - z.max(axis=0, keepdims=True)
    e = np.where(live, np.exp(z), 0.0)
    s = e / e.sum(axis=0, keepdims=True)

    def backward(g):
        _accumulate(logits, s * (g - (g * s).sum(axis=0, keepdims=True)))
    return _make(s, (logits,), "softmaxpro", backward)


# -- convolution ------------------------------------------------------------------

def _reflect_index(n, pad):
    return np.pad(np.arange(n), pad, mode="reflect")


def im2col(x, k):
    """Patch matrix of a ``(C, H, W)`` array for a ``k x k`` kernel.

    Reflect padding (mirror without repeating the edge). Rows are ordered
    ``(channel, dy, dx)``; columns are row-major pixels.
    """
    x = np.asarray(x, dtype=np.float64)
    C, H, W = x.shape
    p = k // 2
    xp = x[:, _reflect_index(H, p)][:, :, _reflect_index(W, p)]
    cols = np.empty((C, k, k, H, W))
    for u in range(k):
        for v in range(k):
            cols[:, u, v] = xp[:, u:u + H, v:v + W]
    return cols.reshape(C * k * k, H * W)


def _col2im(dcols, shape, k):
    C, H, W = shape
    p = k // 2
    dcols = dcols.reshape(C, k, k, H, W)
    dxp = np.zeros((C, H + 2 * p, W + 2 * p))
    for u in range(k):
        for v in range(k):
            dxp[:, u:u + H, v:v + W] += dcols[:, u, v]
    rows = np.zeros((C, H + 2 * p, W))
    np.add.at(rows, (slice(None), slice(None), _reflect_index(W, p)), dxp)
    dx = np.zeros((C, H, W))
    np.add.at(dx, (slice(None), _reflect_index(H, p)), rows)
    return dx


def conv2d(x, w, cols=None):
    """Stride-1 cross-correlation with reflect padding.

    Parameters
    ----------
    x : Node of shape (C_in, H, W)
    w : Node of shape (C_out, C_in, k, k), k odd
    cols : ndarray, optional
        Precomputed ``im2col(x.value, k)``; lets a constant input be
        unfolded once and reused across training steps.
    """
    if x.value.ndim != 3 or w.value.ndim != 4:
        raise ParameterError(f"conv2d expects (C, H, W) and (O, C, k, k), got {x.shape}, {w.shape}")
    C, H, W = x.shape
    O, Cw, k, k2 = w.shape
    if Cw != C or k != k2 or k % 2 == 0:
        raise ParameterError(f"conv2d: kernel {w.shape} does not fit input {x.shape}")
    if cols is None:
        cols = im2col(x.value, k)
    elif cols.shape != (C * k * k, H * W):
        raise ParameterError("conv2d: precomputed columns have the wrong shape")
    wflat = w.value.reshape(O, -1)
    out = (wflat @ cols).reshape(O, H, W)

    def backward(g):
        g2 = g.reshape(O, H * W)
        if w.requires_grad:
            _accumulate(w, (g2 @ cols.T).reshape(w.shape))
        if x.requires_grad:
            _accumulate(x, _col2im(wflat.T @ g2, x.shape, k))
    return _make(out, (x, w), "conv2d", backward)


PRIMITIVES = (
    "conv2d", "matmul", "add", "sub", "scale", "mul", "relu", "channel_softmax",
    "softmaxpro", "global_avg_pool", "linear", "zero_pad_center", "mse", "total",
    "reshape", "concat", "take",
)


# -- finite-difference verification ---------------------------------------------------

def grad_check(builder, inputs, step=1e-6, max_coords=200, seed=0):
    """Compare reverse-mode gradients with central finite differences.

    Parameters
    ----------
    builder : callable
        ``builder(nodes) -> scalar Node`` where ``nodes`` maps names to
        parameter nodes.
    inputs : dict[str, ndarray]
        Values of the differentiated inputs.
    max_coords : int
        At most this many coordinates per tensor are probed (sampled
        without replacement, seeded).

    Returns
    -------
    dict[str, float]
        Per input tensor, ``max |g - fd|`` over the probed coordinates
        divided by the largest probed gradient magnitude.
    """
    rng = np.random.default_rng(seed)
    values = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    nodes = {k: parameter(v) for k, v in values.items()}
    loss = builder(nodes)
    loss.backward()
    report = {}
    for name, node in nodes.items():
        analytic = np.zeros_like(values[name]) if node.grad is None else node.grad
        flat = values[name].reshape(-1)
        n = flat.size
        idx = rng.choice(n, size=min(n, max_coords), replace=False)
        numeric = np.empty(idx.size)
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            up = builder({k: constant(v) for k, v in values.items()}).value
            flat[i] = orig - step
            down = builder({k: constant(v) for k, v in values.items()}).value
            flat[i] = orig
            numeric[j] = (float(up) - float(down)) / (2 * step)
        got = analytic.reshape(-1)[idx]
        denom = max(np.max(np.abs(numeric)), np.max(np.abs(got)), 1e-12)
        report[name] = float(np.max(np.abs(got - numeric)) / denom)
    return report
