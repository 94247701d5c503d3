"""Dense float64 tensors on a reverse-mode tape with higher-order gradients.

Every operation records its parents and per-parent pullback closures. The
pullbacks are themselves built from tape operations, so the gradient of a graph
that already contains gradient nodes is well defined: calling :func:`grad` with
``create_higher=True`` returns tensors that can be differentiated again. This
is what makes gradient-penalty terms (norms of input gradients) trainable.

Kernels are numpy; the tape, VJP rules and convolution lowering live here.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Operands have incompatible shapes for the requested operation."""


class FaultFlag(RuntimeError):
    """Non-finite values appeared where finite ones are required."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


_FAULT_CHECK = False


@contextmanager
def fault_checks():
    """Check every op output for NaN/Inf within the block (slow, for tests)."""
    global _FAULT_CHECK
    old = _FAULT_CHECK
    _FAULT_CHECK = True
    try:
        yield
    finally:
        _FAULT_CHECK = old


class Tensor:
    """A node of the computation graph.

    ``parents`` and ``vjps`` are parallel tuples; ``vjps[i]`` maps the
    cotangent of this node to the cotangent contribution of ``parents[i]``.
    Leaves have no parents. Tensors are immutable by convention; only
    optimizers touch ``data`` of leaves, between graph lifetimes.
    """

    __slots__ = ("data", "parents", "vjps", "op")

    def __init__(self, data, parents=(), vjps=(), op="leaf"):
        if isinstance(data, np.ndarray) and data.dtype == np.float64:
            self.data = data
        else:
            self.data = np.asarray(data, dtype=np.float64)
        self.parents = parents
        self.vjps = vjps
        self.op = op
        if _FAULT_CHECK and not np.all(np.isfinite(self.data)):
            raise FaultFlag(f"non-finite output from op '{op}'")

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def detach(self):
        """A leaf sharing this tensor's data (cuts the graph)."""
        return Tensor(self.data)

    def check_finite(self, what="tensor", step=None):
        if not np.all(np.isfinite(self.data)):
            raise FaultFlag(f"non-finite {what}", step=step)
        return self

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return mul(pow_const(self, -1.0), other)

    def __pow__(self, p):
        return pow_const(self, p)

    def __matmul__(self, other):
        return matmul(self, other)


def astensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x):
    """Leaf wrapper; gradients do not flow into constants."""
    return Tensor(x)


def graph_nodes(root):
    """Topologically ordered (op, node id, parent ids, shape) records."""
    return [(n.op, id(n), tuple(id(p) for p in n.parents), n.data.shape)
            for n in _toposort(root)]


def _toposort(root):
    topo, visited, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in visited:
                stack.append((p, False))
    return topo


def grad(output, wrt, create_higher=False):
    """Reverse-mode gradients of a scalar ``output`` w.r.t. each of ``wrt``.

    Returns one tensor per entry of ``wrt``, in order. Nodes in ``wrt`` that
    the output does not depend on get a zero gradient (not an error). With
    ``create_higher=True`` the returned tensors stay on the tape and can be
    differentiated again; otherwise they are detached leaves.
    """
    output = astensor(output)
    if output.data.size != 1:
        raise ShapeError(f"grad needs a scalar output, got shape {output.data.shape}")
    wrt = list(wrt)
    topo = _toposort(output)

    needed = {id(w) for w in wrt}
    for node in topo:
        if id(node) in needed:
            continue
        for p in node.parents:
            if id(p) in needed:
                needed.add(id(node))
                break

    cot = {id(output): Tensor(np.ones_like(output.data))}
    for node in reversed(topo):
        ct = cot.get(id(node))
        if ct is None or not node.parents or id(node) not in needed:
            continue
        for parent, pull in zip(node.parents, node.vjps):
            if pull is None or id(parent) not in needed:
                continue
            contrib = pull(ct)
            prev = cot.get(id(parent))
            cot[id(parent)] = contrib if prev is None else add(prev, contrib)

    out = []
    for w in wrt:
        g = cot.get(id(w))
        if g is None:
            g = Tensor(np.zeros_like(w.data))
        elif not create_higher:
            g = g.detach()
        out.append(g)
    return out


# ---------------------------------------------------------------------------
# primitives


def _unbroadcast(ct, shape):
    # reduce a cotangent back to the pre-broadcast shape
    cshape = ct.data.shape
    if cshape == shape:
        return ct
    extra = len(cshape) - len(shape)
    axes = list(range(extra))
    for i, s in enumerate(shape):
        if s == 1 and cshape[extra + i] != 1:
            axes.append(extra + i)
    out = sum_axes(ct, tuple(axes), keepdims=False) if axes else ct
    if out.data.shape != shape:
        out = reshape(out, shape)
    return out


def add(a, b):
    a, b = astensor(a), astensor(b)
    try:
        data = a.data + b.data
    except ValueError as e:
        raise ShapeError(f"add: {a.shape} vs {b.shape}") from e
    return Tensor(data, (a, b),
                  (lambda ct: _unbroadcast(ct, a.data.shape),
                   lambda ct: _unbroadcast(ct, b.data.shape)), op="add")


def mul(a, b):
    a, b = astensor(a), astensor(b)
    try:
        data = a.data * b.data
    except ValueError as e:
        raise ShapeError(f"mul: {a.shape} vs {b.shape}") from e
    return Tensor(data, (a, b),
                  (lambda ct: _unbroadcast(mul(ct, b), a.data.shape),
                   lambda ct: _unbroadcast(mul(ct, a), b.data.shape)), op="mul")


def sub(a, b):
    return add(a, mul(b, -1.0))


def div(a, b):
    return mul(astensor(a), pow_const(astensor(b), -1.0))


def scale(a, c):
    """Multiply by a python/numpy constant (no gradient into ``c``)."""
    a = astensor(a)
    c = float(c)
    return Tensor(a.data * c, (a,), (lambda ct: scale(ct, c),), op="scale")


def matmul(a, b):
    a, b = astensor(a), astensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    return Tensor(a.data @ b.data, (a, b),
                  (lambda ct: matmul(ct, transpose(b)),
                   lambda ct: matmul(transpose(a), ct)), op="matmul")


def reshape(a, shape):
    a = astensor(a)
    shape = tuple(int(s) for s in shape)
    old = a.data.shape
    return Tensor(a.data.reshape(shape), (a,),
                  (lambda ct: reshape(ct, old),), op="reshape")


def transpose(a, axes=None):
    a = astensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return Tensor(np.transpose(a.data, axes), (a,),
                  (lambda ct: transpose(ct, inv),), op="transpose")


def sum_axes(a, axes, keepdims=False):
    a = astensor(a)
    axes = tuple(int(ax) % a.ndim for ax in axes)
    kept = tuple(1 if i in axes else s for i, s in enumerate(a.data.shape))
    orig = a.data.shape

    def pull(ct):
        return broadcast_to(reshape(ct, kept), orig)

    return Tensor(np.sum(a.data, axis=axes, keepdims=keepdims), (a,), (pull,), op="sum")


def mean_axes(a, axes, keepdims=False):
    a = astensor(a)
    axes = tuple(int(ax) % a.ndim for ax in axes)
    n = 1
    for ax in axes:
        n *= a.data.shape[ax]
    return scale(sum_axes(a, axes, keepdims), 1.0 / n)


def mean(a):
    """Mean over all elements, as a scalar tensor."""
    a = astensor(a)
    return mean_axes(a, tuple(range(a.ndim)))


def broadcast_to(a, shape):
    a = astensor(a)
    shape = tuple(int(s) for s in shape)
    old = a.data.shape
    try:
        data = np.broadcast_to(a.data, shape)
    except ValueError as e:
        raise ShapeError(f"broadcast {old} -> {shape}") from e
    return Tensor(data, (a,),
                  (lambda ct: _unbroadcast(ct, old),), op="broadcast")


def exp(a):
    a = astensor(a)
    out = Tensor(np.exp(a.data), (a,), (), op="exp")
    out.vjps = (lambda ct: mul(ct, out),)
    return out


def log(a):
    a = astensor(a)
    return Tensor(np.log(a.data), (a,),
                  (lambda ct: mul(ct, pow_const(a, -1.0)),), op="log")


def pow_const(a, p):
    a = astensor(a)
    p = float(p)
    return Tensor(a.data ** p, (a,),
                  (lambda ct: mul(ct, scale(pow_const(a, p - 1.0), p)),), op="pow")


def sqrt(a):
    return pow_const(a, 0.5)


def square(a):
    return pow_const(a, 2.0)


def _sigmoid_np(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    a = astensor(a)
    out = Tensor(_sigmoid_np(a.data), (a,), (), op="sigmoid")
    out.vjps = (lambda ct: mul(ct, mul(out, sub(1.0, out))),)
    return out


def softplus(a):
    """log(1 + e^a), overflow-safe for large |a|."""
    a = astensor(a)
    return Tensor(np.logaddexp(0.0, a.data), (a,),
                  (lambda ct: mul(ct, sigmoid(a)),), op="softplus")


def relu(a):
    a = astensor(a)
    mask = (a.data > 0).astype(np.float64)
    return Tensor(a.data * mask, (a,),
                  (lambda ct: mul(ct, constant(mask)),), op="relu")


def max_axis(a, axis):
    """Max along one axis; ties resolve to the first (lowest-index) element."""
    a = astensor(a)
    axis = int(axis) % a.ndim
    idx = np.argmax(a.data, axis=axis)
    data = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis).squeeze(axis)
    mask = np.zeros_like(a.data)
    np.put_along_axis(mask, np.expand_dims(idx, axis), 1.0, axis)
    kept = tuple(1 if i == axis else s for i, s in enumerate(a.data.shape))
    orig = a.data.shape

    def pull(ct):
        return mul(broadcast_to(reshape(ct, kept), orig), constant(mask))

    return Tensor(data, (a,), (pull,), op="max_axis")


def concat(tensors, axis):
    tensors = [astensor(t) for t in tensors]
    axis = int(axis) % tensors[0].ndim
    sizes = [t.data.shape[axis] for t in tensors]
    base = list(tensors[0].data.shape)
    for t in tensors[1:]:
        s = list(t.data.shape)
        s[axis] = base[axis]
        if s != base:
            raise ShapeError(f"concat: {t.data.shape} does not match {tuple(base)} on axis {axis}")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([0] + sizes)

    def make_pull(i):
        lo, hi = int(offsets[i]), int(offsets[i + 1])
        return lambda ct: slice_axis(ct, axis, lo, hi)

    return Tensor(data, tuple(tensors), tuple(make_pull(i) for i in range(len(tensors))),
                  op="concat")


def slice_axis(a, axis, start, stop):
    a = astensor(a)
    axis = int(axis) % a.ndim
    total = a.data.shape[axis]
    key = (slice(None),) * axis + (slice(start, stop),)
    return Tensor(np.ascontiguousarray(a.data[key]), (a,),
                  (lambda ct: embed_axis(ct, axis, start, total),), op="slice")


def embed_axis(a, axis, start, total):
    # zero-pad `a` along `axis` so that it occupies [start, start+len) of `total`
    a = astensor(a)
    axis = int(axis) % a.ndim
    length = a.data.shape[axis]
    shape = list(a.data.shape)
    shape[axis] = total
    data = np.zeros(shape, dtype=np.float64)
    key = (slice(None),) * axis + (slice(start, start + length),)
    data[key] = a.data
    return Tensor(data, (a,),
                  (lambda ct: slice_axis(ct, axis, start, start + length),), op="embed")


# -- convolution lowering ----------------------------------------------------

_PATCH_CACHE = {}


def _patch_index(hp, wp, c, kh, kw, stride):
    key = (hp, wp, c, kh, kw, stride)
    hit = _PATCH_CACHE.get(key)
    if hit is not None:
        return hit
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    i0 = (np.arange(oh) * stride)[:, None, None, None, None]
    j0 = (np.arange(ow) * stride)[None, :, None, None, None]
    di = np.arange(kh)[None, None, :, None, None]
    dj = np.arange(kw)[None, None, None, :, None]
    cc = np.arange(c)[None, None, None, None, :]
    idx = (((i0 + di) * wp + (j0 + dj)) * c + cc).ravel()
    _PATCH_CACHE[key] = (idx, oh, ow)
    return idx, oh, ow


def im2col(a, kh, kw, stride):
    """Extract conv patches from an NHWC tensor: (N,H,W,C) -> (N,OH,OW,kh*kw*C)."""
    a = astensor(a)
    if a.ndim != 4:
        raise ShapeError(f"im2col expects NHWC, got {a.shape}")
    n, hp, wp, c = a.data.shape
    idx, oh, ow = _patch_index(hp, wp, c, kh, kw, stride)
    cols = a.data.reshape(n, hp * wp * c)[:, idx].reshape(n, oh, ow, kh * kw * c)
    shape = a.data.shape
    return Tensor(cols, (a,),
                  (lambda ct: col2im(ct, shape, kh, kw, stride),), op="im2col")


def col2im(cols, img_shape, kh, kw, stride):
    """Adjoint of :func:`im2col`: scatter-add patches back onto the image."""
    cols = astensor(cols)
    n, hp, wp, c = img_shape
    idx, oh, ow = _patch_index(hp, wp, c, kh, kw, stride)
    pix = hp * wp * c
    flat = cols.data.reshape(n, -1)
    glob = (np.arange(n, dtype=np.int64)[:, None] * pix) + idx[None, :]
    data = np.bincount(glob.ravel(), weights=flat.ravel(), minlength=n * pix)
    data = data.reshape(n, hp, wp, c)
    return Tensor(data, (cols,),
                  (lambda ct: im2col(ct, kh, kw, stride),), op="col2im")


def pad2d(x, pt, pb, pl, pr):
    """Zero padding of the two spatial axes of an NHWC tensor."""
    x = astensor(x)
    n, h, w, c = x.data.shape
    out = x
    if pt or pb:
        out = embed_axis(out, 1, pt, h + pt + pb)
    if pl or pr:
        out = embed_axis(out, 2, pl, w + pl + pr)
    return out


def _same_pads(size, k, s):
    out = -(-size // s)
    pad = max((out - 1) * s + k - size, 0)
    return pad // 2, pad - pad // 2


def conv2d(x, w, b=None, stride=1, padding="same"):
    """2-D convolution, NHWC input, (kh, kw, Cin, F) kernel.

    ``padding='same'`` zero-pads so the output spatial size is ceil(in/stride);
    ``'valid'`` uses no padding.
    """
    x, w = astensor(x), astensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: x {x.shape}, w {w.shape}")
    n, h, wd, cin = x.data.shape
    kh, kw, wcin, f = w.data.shape
    if wcin != cin:
        raise ShapeError(f"conv2d: input channels {cin} != kernel channels {wcin}")
    if padding == "same":
        pt, pb = _same_pads(h, kh, stride)
        pl, pr = _same_pads(wd, kw, stride)
        x = pad2d(x, pt, pb, pl, pr)
    elif padding != "valid":
        raise ValueError(f"unknown padding {padding!r}")
    cols = im2col(x, kh, kw, stride)
    _, oh, ow, k = cols.data.shape
    out = matmul(reshape(cols, (n * oh * ow, k)), reshape(w, (k, f)))
    if b is not None:
        out = add(out, b)
    return reshape(out, (n, oh, ow, f))


def maxpool2x2(x):
    """2x2 max pooling with stride 2; ties go to the first row-major element."""
    x = astensor(x)
    n, h, w, c = x.data.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2 needs even spatial dims, got {x.shape}")
    r = reshape(x, (n, h // 2, 2, w // 2, 2, c))
    return max_axis(max_axis(r, 4), 2)


# ---------------------------------------------------------------------------
# composite layers


def softmax(a, axis=-1):
    a = astensor(a)
    axis = int(axis) % a.ndim
    # shift-invariance makes the max shift an exact constant
    shift = constant(np.max(a.data, axis=axis, keepdims=True))
    z = exp(sub(a, shift))
    return div(z, sum_axes(z, (axis,), keepdims=True))


def l2_norm(a, axes=None, keepdims=False, eps=0.0):
    """Euclidean norm over ``axes`` (all axes when None)."""
    a = astensor(a)
    if axes is None:
        axes = tuple(range(a.ndim))
    s = sum_axes(mul(a, a), axes, keepdims=keepdims)
    if eps:
        s = add(s, eps)
    return sqrt(s)


@dataclass
class BatchNormState:
    """Running statistics, one entry per feature channel."""
    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def create(cls, channels):
        return cls(np.zeros(channels), np.ones(channels))


def batch_norm(x, gamma, beta, state, train, momentum=0.99, eps=1e-5):
    """Normalize over all axes but the last; per-channel affine.

    Train mode uses batch statistics and folds them into ``state`` with the
    given decay; eval mode uses the running statistics as constants.
    """
    x = astensor(x)
    axes = tuple(range(x.ndim - 1))
    bshape = (1,) * (x.ndim - 1) + (-1,)
    if train:
        m = mean_axes(x, axes, keepdims=True)
        xc = sub(x, m)
        v = mean_axes(mul(xc, xc), axes, keepdims=True)
        state.mean = momentum * state.mean + (1.0 - momentum) * m.data.reshape(-1)
        state.var = momentum * state.var + (1.0 - momentum) * v.data.reshape(-1)
    else:
        m = constant(state.mean.reshape(bshape))
        xc = sub(x, m)
        v = constant(state.var.reshape(bshape))
    norm = div(xc, sqrt(add(v, eps)))
    return add(mul(norm, reshape(astensor(gamma), bshape)),
               reshape(astensor(beta), bshape))


def layer_norm(x, gamma, beta, eps=1e-5):
    """Per-sample normalization over all non-batch axes; per-channel affine."""
    x = astensor(x)
    axes = tuple(range(1, x.ndim))
    m = mean_axes(x, axes, keepdims=True)
    xc = sub(x, m)
    v = mean_axes(mul(xc, xc), axes, keepdims=True)
    norm = div(xc, sqrt(add(v, eps)))
    bshape = (1,) * (x.ndim - 1) + (-1,)
    return add(mul(norm, reshape(astensor(gamma), bshape)),
               reshape(astensor(beta), bshape))


# ---------------------------------------------------------------------------
# spectral normalization


@dataclass
class SpectralState:
    """Persistent left singular vector estimate for power iteration."""
    u: np.ndarray

    @classmethod
    def create(cls, rows, rng):
        u = rng.standard_normal(rows)
        return cls(u / np.linalg.norm(u))


def spectral_normalize(w, state, iters=1):
    """Divide a 2-D weight matrix by its power-iteration top singular value.

    ``state.u`` is updated in place so one iteration per training step
    converges across steps. ``iters=0`` reuses the stored vector without
    updating it. Gradients flow through both the matrix and the estimate
    sigma = u^T W v (u, v held constant), matching the usual implementation.
    A zero matrix is returned unchanged.
    """
    w = astensor(w)
    if w.ndim != 2:
        raise ShapeError(f"spectral_normalize expects a matrix, got {w.shape}")
    mat = w.data
    u = state.u
    for _ in range(max(iters, 0)):
        v = mat.T @ u
        nv = np.linalg.norm(v)
        if nv < 1e-30:
            return w
        v = v / nv
        u = mat @ v
        nu = np.linalg.norm(u)
        if nu < 1e-30:
            return w
        u = u / nu
        state.u = u
    v = mat.T @ u
    nv = np.linalg.norm(v)
    if nv < 1e-30:
        return w
    v = v / nv
    sigma = matmul(constant(u[None, :]), matmul(w, constant(v[:, None])))
    return mul(w, pow_const(sigma, -1.0))
