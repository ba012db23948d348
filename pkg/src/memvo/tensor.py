"""Reverse-mode autodiff on float64 numpy arrays.

Every op builds a closure graph; Tensor.backward() walks it in reverse
topological order. Only the broadcasting the ops below document is allowed,
everything else is a shape error. All math is float64 and single threaded,
so repeated runs on the same machine are bit identical.
"""

import numpy as np


class Tensor:
    """A numpy array plus gradient bookkeeping."""

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None, op=""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = tuple(parents)
        self._backward_fn = backward_fn
        self._op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return "Tensor(shape=%s%s)" % (self.data.shape, flag)

    def detach(self):
        """Constant copy, cut out of the graph."""
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Backpropagate from a scalar root."""
        if self.data.size != 1:
            raise ValueError("backward() root must be a scalar, got shape %s" % (self.shape,))
        order = _topo_order(self)
        self._accum(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # operator sugar; constants may be python scalars
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __getitem__(self, idx):
        if self.data.ndim != 1:
            raise ValueError("indexing is only supported on 1-D tensors")
        if isinstance(idx, (int, np.integer)):
            return slice1d(self, int(idx), int(idx) + 1, squeeze=True)
        if isinstance(idx, slice):
            start, stop, step = idx.indices(self.data.shape[0])
            if step != 1:
                raise ValueError("only contiguous slices are supported")
            return slice1d(self, start, stop)
        raise TypeError("unsupported index %r" % (idx,))

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)


def _as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _topo_order(root):
    # iterative post-order; graphs from long sequences overflow recursion
    order = []
    seen = set()
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
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _make(data, parents, backward_fn, op):
    if not any(p.requires_grad for p in parents):
        return Tensor(data)
    return Tensor(data, requires_grad=True, parents=parents, backward_fn=backward_fn, op=op)


def _check_scalar_or_same(a, b, opname):
    # allowed: identical shapes, or one operand is a scalar (size 1)
    if a.data.shape == b.data.shape:
        return
    if a.data.size == 1 or b.data.size == 1:
        return
    raise ValueError("%s shape mismatch: %s vs %s" % (opname, a.data.shape, b.data.shape))


def _reduce_to(g, shape):
    # undo scalar broadcast
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape)


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_scalar_or_same(a, b, "add")
    out_data = a.data + b.data

    def backward_fn(g):
        if a.requires_grad:
            a._accum(_reduce_to(g, a.data.shape))
        if b.requires_grad:
            b._accum(_reduce_to(g, b.data.shape))

    return _make(out_data, (a, b), backward_fn, "add")


def neg(a):
    a = _as_tensor(a)

    def backward_fn(g):
        if a.requires_grad:
            a._accum(-g)

    return _make(-a.data, (a,), backward_fn, "neg")


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_scalar_or_same(a, b, "mul")
    out_data = a.data * b.data

    def backward_fn(g):
        if a.requires_grad:
            a._accum(_reduce_to(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accum(_reduce_to(g * a.data, b.data.shape))

    return _make(out_data, (a, b), backward_fn, "mul")


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_scalar_or_same(a, b, "div")
    if np.any(b.data == 0.0):
        raise ZeroDivisionError("div by zero")
    out_data = a.data / b.data

    def backward_fn(g):
        if a.requires_grad:
            a._accum(_reduce_to(g / b.data, a.data.shape))
        if b.requires_grad:
            b._accum(_reduce_to(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(out_data, (a, b), backward_fn, "div")


def tsum(a):
    a = _as_tensor(a)

    def backward_fn(g):
        if a.requires_grad:
            a._accum(np.full_like(a.data, float(g)))

    return _make(np.sum(a.data), (a,), backward_fn, "sum")


def tmean(a):
    a = _as_tensor(a)
    n = a.data.size

    def backward_fn(g):
        if a.requires_grad:
            a._accum(np.full_like(a.data, float(g) / n))

    return _make(np.mean(a.data), (a,), backward_fn, "mean")


def sqrt(a):
    a = _as_tensor(a)
    if np.any(a.data < 0.0):
        raise ValueError("sqrt of negative value")
    out_data = np.sqrt(a.data)

    def backward_fn(g):
        if a.requires_grad:
            # subgradient 0 at the origin kink
            safe = np.where(out_data > 0.0, out_data, 1.0)
            a._accum(np.where(out_data > 0.0, g / (2.0 * safe), 0.0))

    return _make(out_data, (a,), backward_fn, "sqrt")


def sigmoid(a):
    a = _as_tensor(a)
    # stable both tails
    out_data = np.where(a.data >= 0.0,
                        1.0 / (1.0 + np.exp(-np.abs(a.data))),
                        np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))

    def backward_fn(g):
        if a.requires_grad:
            a._accum(g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), backward_fn, "sigmoid")


def tanh(a):
    a = _as_tensor(a)
    out_data = np.tanh(a.data)

    def backward_fn(g):
        if a.requires_grad:
            a._accum(g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), backward_fn, "tanh")


def relu(a):
    a = _as_tensor(a)
    out_data = np.maximum(a.data, 0.0)

    def backward_fn(g):
        if a.requires_grad:
            a._accum(g * (a.data > 0.0))

    return _make(out_data, (a,), backward_fn, "relu")


def _im2col(xp, k, stride, h_out, w_out):
    # strided read-only view (C, k, k, h_out, w_out) of the padded input
    c = xp.shape[0]
    s0, s1, s2 = xp.strides
    shape = (c, k, k, h_out, w_out)
    strides = (s0, s1, s2, stride * s1, stride * s2)
    return np.lib.stride_tricks.as_strided(xp, shape=shape, strides=strides, writeable=False)


def conv2d(x, kernel, bias=None, stride=1, padding=0):
    """2-D cross correlation: x (C,H,W), kernel (O,C,k,k), optional bias (O,).

    Zero padding on both spatial sides, square kernel, single stride for both
    axes. Output is (O, H', W') with H' = (H + 2*padding - k)//stride + 1.
    The contraction runs as one tensordot over an im2col view, which keeps
    the reduction order fixed and runs deterministic.
    """
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    if x.data.ndim != 3 or kernel.data.ndim != 4:
        raise ValueError("conv2d expects x (C,H,W) and kernel (O,C,k,k)")
    c, h, w = x.data.shape
    o, ck, kh, kw = kernel.data.shape
    if ck != c:
        raise ValueError("conv2d channel mismatch: input %d vs kernel %d" % (c, ck))
    if kh != kw:
        raise ValueError("conv2d kernel must be square")
    k = kh
    if stride < 1 or padding < 0:
        raise ValueError("conv2d needs stride >= 1 and padding >= 0")
    hp, wp = h + 2 * padding, w + 2 * padding
    if k > hp or k > wp:
        raise ValueError("conv2d kernel %d exceeds padded input %dx%d" % (k, hp, wp))
    h_out = (hp - k) // stride + 1
    w_out = (wp - k) // stride + 1
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.data.shape != (o,):
            raise ValueError("conv2d bias must have shape (%d,)" % o)

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    cols = _im2col(xp, k, stride, h_out, w_out)
    out_data = np.tensordot(kernel.data, cols, axes=([1, 2, 3], [0, 1, 2]))
    if bias is not None:
        out_data = out_data + bias.data[:, None, None]

    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def backward_fn(g):
        if kernel.requires_grad:
            # g (O,H',W') x cols (C,k,k,H',W') -> (O,C,k,k)
            kernel._accum(np.tensordot(g, cols, axes=([1, 2], [3, 4])))
        if x.requires_grad:
            dcols = np.tensordot(kernel.data, g, axes=([0], [0]))  # (C,k,k,H',W')
            dxp = np.zeros_like(xp)
            for di in range(k):
                for dj in range(k):
                    dxp[:, di:di + stride * h_out:stride, dj:dj + stride * w_out:stride] += dcols[:, di, dj]
            if padding:
                dxp = dxp[:, padding:hp - padding, padding:wp - padding]
            x._accum(dxp)
        if bias is not None and bias.requires_grad:
            bias._accum(g.sum(axis=(1, 2)))

    return _make(out_data, parents, backward_fn, "conv2d")


def concat_channels(parts):
    """Concatenate (C_i, H, W) tensors along the channel axis."""
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ValueError("concat_channels needs at least one tensor")
    hw = parts[0].data.shape[1:]
    for p in parts:
        if p.data.ndim != 3 or p.data.shape[1:] != hw:
            raise ValueError("concat_channels spatial mismatch")
    out_data = np.concatenate([p.data for p in parts], axis=0)
    splits = np.cumsum([p.data.shape[0] for p in parts])[:-1]

    def backward_fn(g):
        pieces = np.split(g, splits, axis=0)
        for p, piece in zip(parts, pieces):
            if p.requires_grad:
                p._accum(piece)

    return _make(out_data, tuple(parts), backward_fn, "concat")


def scale_channels(x, w):
    """Multiply each channel of x (C,H,W) by w[c], w shape (C,)."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 3 or w.data.shape != (x.data.shape[0],):
        raise ValueError("scale_channels expects x (C,H,W) and w (C,)")
    out_data = x.data * w.data[:, None, None]

    def backward_fn(g):
        if x.requires_grad:
            x._accum(g * w.data[:, None, None])
        if w.requires_grad:
            w._accum(np.sum(g * x.data, axis=(1, 2)))

    return _make(out_data, (x, w), backward_fn, "scale_channels")


def slice_channels(x, start, stop):
    """View channels [start, stop) of a (C,H,W) tensor."""
    x = _as_tensor(x)
    if x.data.ndim != 3:
        raise ValueError("slice_channels expects (C,H,W)")
    c = x.data.shape[0]
    if not (0 <= start < stop <= c):
        raise ValueError("channel slice [%d:%d] out of range for %d channels" % (start, stop, c))
    out_data = x.data[start:stop]

    def backward_fn(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[start:stop] = g
            x._accum(full)

    return _make(out_data, (x,), backward_fn, "slice_channels")


def channel_cosine(a, b):
    """Per-channel cosine of two (C,H,W) tensors -> (C,).

    Channel c compares a[c] and b[c] flattened; a channel where either side
    has zero norm scores exactly 0 (constant, no gradient), mirroring
    cosine_similarity. One fused op instead of C small graphs, since this
    sits in the innermost refinement loop.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape or a.data.ndim != 3:
        raise ValueError("channel_cosine expects matching (C,H,W) tensors")
    dots = np.sum(a.data * b.data, axis=(1, 2))
    na = np.sqrt(np.sum(a.data * a.data, axis=(1, 2)))
    nb = np.sqrt(np.sum(b.data * b.data, axis=(1, 2)))
    live = (na > 0.0) & (nb > 0.0)
    denom = np.where(live, na * nb, 1.0)
    out_data = np.where(live, dots / denom, 0.0)

    def backward_fn(g):
        gl = np.where(live, g, 0.0)
        if a.requires_grad:
            coef = gl / denom
            a._accum(coef[:, None, None] * b.data
                     - (gl * out_data / np.where(live, na * na, 1.0))[:, None, None] * a.data)
        if b.requires_grad:
            coef = gl / denom
            b._accum(coef[:, None, None] * a.data
                     - (gl * out_data / np.where(live, nb * nb, 1.0))[:, None, None] * b.data)

    return _make(out_data, (a, b), backward_fn, "channel_cosine")


def global_avg_pool(x):
    """(C,H,W) -> (C,) spatial mean."""
    x = _as_tensor(x)
    if x.data.ndim != 3:
        raise ValueError("global_avg_pool expects (C,H,W)")
    c, h, w = x.data.shape
    out_data = x.data.mean(axis=(1, 2))

    def backward_fn(g):
        if x.requires_grad:
            x._accum(np.broadcast_to(g[:, None, None], x.data.shape) / (h * w))

    return _make(out_data, (x,), backward_fn, "gap")


def linear(weight, x, bias=None):
    """weight (M,N) @ x (N,) + bias (M,)."""
    weight, x = _as_tensor(weight), _as_tensor(x)
    if weight.data.ndim != 2 or x.data.ndim != 1 or weight.data.shape[1] != x.data.shape[0]:
        raise ValueError("linear shape mismatch: %s @ %s" % (weight.data.shape, x.data.shape))
    out_data = weight.data @ x.data
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.data.shape != (weight.data.shape[0],):
            raise ValueError("linear bias shape mismatch")
        out_data = out_data + bias.data
    parents = (weight, x) if bias is None else (weight, x, bias)

    def backward_fn(g):
        if weight.requires_grad:
            weight._accum(np.outer(g, x.data))
        if x.requires_grad:
            x._accum(weight.data.T @ g)
        if bias is not None and bias.requires_grad:
            bias._accum(g)

    return _make(out_data, parents, backward_fn, "linear")


def softmax(v):
    """1-D softmax, max-shifted for stability."""
    v = _as_tensor(v)
    if v.data.ndim != 1:
        raise ValueError("softmax expects a 1-D tensor")
    shifted = v.data - np.max(v.data)
    e = np.exp(shifted)
    out_data = e / np.sum(e)

    def backward_fn(g):
        if v.requires_grad:
            v._accum(out_data * (g - np.dot(g, out_data)))

    return _make(out_data, (v,), backward_fn, "softmax")


def stack(scalars):
    """Stack scalar tensors into a 1-D tensor."""
    scalars = [_as_tensor(s) for s in scalars]
    for s in scalars:
        if s.data.size != 1:
            raise ValueError("stack expects scalar tensors")
    out_data = np.array([s.data.item() for s in scalars])

    def backward_fn(g):
        for i, s in enumerate(scalars):
            if s.requires_grad:
                s._accum(np.full_like(s.data, g[i]))

    return _make(out_data, tuple(scalars), backward_fn, "stack")


def slice1d(v, start, stop, squeeze=False):
    v = _as_tensor(v)
    if v.data.ndim != 1:
        raise ValueError("slice1d expects a 1-D tensor")
    n = v.data.shape[0]
    if not (0 <= start < stop <= n):
        raise ValueError("slice [%d:%d] out of range for length %d" % (start, stop, n))
    out_data = v.data[start:stop]
    if squeeze:
        out_data = out_data.reshape(())

    def backward_fn(g):
        if v.requires_grad:
            full = np.zeros_like(v.data)
            full[start:stop] = np.reshape(g, (stop - start,))
            v._accum(full)

    return _make(out_data, (v,), backward_fn, "slice")


def cosine_similarity(a, b):
    """Scalar cosine of two same-shape tensors; 0 if either norm is zero.

    The zero branch is a constant with no gradient path, which is what the
    attention fallbacks rely on: softmax over all-zero scores is uniform.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ValueError("cosine_similarity shape mismatch: %s vs %s" % (a.data.shape, b.data.shape))
    na2 = float(np.sum(a.data * a.data))
    nb2 = float(np.sum(b.data * b.data))
    if na2 == 0.0 or nb2 == 0.0:
        return Tensor(0.0)
    af, bf = _flatten(a), _flatten(b)
    dot = tsum(mul(af, bf))
    denom = mul(sqrt(tsum(mul(af, af))), sqrt(tsum(mul(bf, bf))))
    return div(dot, denom)


def _flatten(a):
    a = _as_tensor(a)
    shape = a.data.shape

    def backward_fn(g):
        if a.requires_grad:
            a._accum(g.reshape(shape))

    return _make(a.data.reshape(-1), (a,), backward_fn, "flatten")


def l2_norm(a):
    """Scalar euclidean norm of a tensor."""
    af = _flatten(_as_tensor(a))
    return sqrt(tsum(mul(af, af)))


def zero_grads(tensors):
    for t in tensors:
        t.zero_grad()


def finite_diff_check(f, x, h=1e-5, coords=None):
    """Max relative error between analytic grad of f(x) and central differences.

    f maps a Tensor to a scalar Tensor. coords limits the sweep to the given
    flat indices of x (all coordinates when None). Relative error per
    coordinate is |analytic - numeric| / max(1, |analytic|).
    """
    x.zero_grad()
    out = f(x)
    if out.data.size != 1:
        raise ValueError("finite_diff_check needs a scalar-valued f")
    out.backward()
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    aflat = analytic.reshape(-1)
    if coords is None:
        coords = range(x.data.size)
    worst = 0.0
    for i in coords:
        idx = np.unravel_index(i, x.data.shape)
        keep = x.data[idx]
        x.data[idx] = keep + h
        fp = f(x).data.item()
        x.data[idx] = keep - h
        fm = f(x).data.item()
        x.data[idx] = keep
        numeric = (fp - fm) / (2.0 * h)
        err = abs(aflat[i] - numeric) / max(1.0, abs(aflat[i]))
        worst = max(worst, err)
    return worst
