"""Dense float64 arrays with reverse-mode differentiation, MLPs and Adam.

Arrays are thin wrappers around ``numpy.ndarray``. Every operation that takes a
``Tensor`` with ``requires_grad`` records a closure that pushes the upstream
gradient to its parents; ``backward`` walks the graph in reverse topological
order.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np
from numba import njit

DTYPE = np.float64


class ShapeError(ValueError):
    pass


class ContractError(ValueError):
    pass


class EmptyInputError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def backward(self):
        backward(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


_GRAD_ENABLED = [True]


class no_grad:
    """Context manager that stops graph recording (inference)."""

    def __enter__(self):
        self._prev = _GRAD_ENABLED[0]
        _GRAD_ENABLED[0] = False

    def __exit__(self, *exc):
        _GRAD_ENABLED[0] = self._prev


def _make(data, parents, backward_fn):
    if not _GRAD_ENABLED[0]:
        return Tensor(data)
    parents = tuple(p for p in parents if isinstance(p, Tensor))
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward_fn)
    return Tensor(data)


def _accumulate(t: Tensor, g, owned=False):
    """Add ``g`` into ``t.grad``; ``owned`` means g is a fresh array we may keep."""
    if not t.requires_grad:
        return
    if t.grad is None:
        if owned and g.dtype == DTYPE and g.shape == t.shape and g.flags.writeable:
            t.grad = g
        else:
            t.grad = np.array(g, dtype=DTYPE, copy=True).reshape(t.shape)
    else:
        t.grad += g


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def bw(g):
        # upstream g is dead after this call, so one parent may keep it
        ga = _unbroadcast(g, a.shape)
        _accumulate(a, ga, True)
        gb = _unbroadcast(g, b.shape)
        _accumulate(b, gb, gb is not g or not (a.requires_grad and ga is g))

    return _make(out, (a, b), bw)


def neg(a):
    a = as_tensor(a)

    def bw(g):
        _accumulate(a, -g)

    return _make(-a.data, (a,), bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(out, (a, b), bw)


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0

    def bw(g):
        _accumulate(x, g * mask, True)

    return _make(np.where(mask, x.data, 0.0), (x,), bw)


def sigmoid(x):
    x = as_tensor(x)
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def bw(g):
        _accumulate(x, g * s * (1.0 - s))

    return _make(s, (x,), bw)


def abs_(x):
    x = as_tensor(x)
    sign = np.sign(x.data)

    def bw(g):
        _accumulate(x, g * sign)

    return _make(np.abs(x.data), (x,), bw)


def square(x):
    x = as_tensor(x)

    def bw(g):
        _accumulate(x, 2.0 * g * x.data)

    return _make(x.data * x.data, (x,), bw)


def sqrt(x):
    x = as_tensor(x)
    out = np.sqrt(x.data)

    def bw(g):
        _accumulate(x, g * 0.5 / out)

    return _make(out, (x,), bw)


def smooth_l1(x, delta=1.0):
    """Huber loss per element: x²/(2δ) inside |x| < δ, |x| − δ/2 outside."""
    x = as_tensor(x)
    ax = np.abs(x.data)
    inside = ax < delta
    out = np.where(inside, 0.5 * x.data * x.data / delta, ax - 0.5 * delta)

    def bw(g):
        _accumulate(x, g * np.where(inside, x.data / delta, np.sign(x.data)))

    return _make(out, (x,), bw)


def bce_with_logits(logits, labels, clip=20.0):
    """Elementwise binary cross entropy on logits clipped to ±clip."""
    logits = as_tensor(logits)
    y = np.asarray(labels, dtype=DTYPE)
    z = np.clip(logits.data, -clip, clip)
    inside = np.abs(logits.data) <= clip
    # log(1 + exp(-|z|)) form is stable for both signs
    out = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))

    def bw(g):
        p = 0.5 * (1.0 + np.tanh(0.5 * z))
        _accumulate(logits, g * (p - y) * inside)

    return _make(out, (logits,), bw)


# -------------------------------------------------------------- shape & index

def reshape(x, shape):
    x = as_tensor(x)
    old = x.shape

    def bw(g):
        _accumulate(x, g.reshape(old))

    return _make(x.data.reshape(shape), (x,), bw)


def transpose(x, axes):
    x = as_tensor(x)
    inv = np.argsort(axes)

    def bw(g):
        _accumulate(x, g.transpose(inv))

    return _make(x.data.transpose(axes), (x,), bw)


def expand_dims(x, axis):
    x = as_tensor(x)
    return reshape(x, np.expand_dims(x.data, axis).shape)


def getitem(x, key):
    x = as_tensor(x)

    keys = key if isinstance(key, tuple) else (key,)
    basic = all(k is Ellipsis or k is None or isinstance(k, (slice, int, np.integer)) for k in keys)

    def bw(g):
        full = np.zeros(x.shape, dtype=DTYPE)
        if basic:
            full[key] += g
        else:
            np.add.at(full, key, g)
        _accumulate(x, full)

    return _make(x.data[key], (x,), bw)


def gather_rows(x, idx):
    """Batched row gather: x (B, N, C), idx (B, ...) ints -> (B, ..., C)."""
    x = as_tensor(x)
    idx = np.asarray(idx)
    B = x.shape[0]
    bidx = np.arange(B).reshape((B,) + (1,) * (idx.ndim - 1))
    out = x.data[bidx, idx]

    def bw(g):
        N, C = x.shape[1], x.shape[-1]
        flat = (bidx * N + idx).reshape(-1)
        _accumulate(x, _scatter_rows(flat, g.reshape(-1, C), B * N).reshape(x.shape), True)

    return _make(out, (x,), bw)


def _scatter_rows(flat, rows, n_out):
    """Sum ``rows`` into ``n_out`` slots by index; sort + reduceat beats add.at."""
    order = np.argsort(flat, kind="stable")
    sorted_idx = flat[order]
    uniq, starts = np.unique(sorted_idx, return_index=True)
    out = np.zeros((n_out, rows.shape[1]), dtype=DTYPE)
    out[uniq] = np.add.reduceat(rows[order], starts, axis=0)
    return out


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, part in zip(tensors, np.split(g, splits, axis=axis)):
            _accumulate(t, part)

    return _make(out, tensors, bw)


def sum_(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g, x.shape))

    return _make(out, (x,), bw)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum_(x, axis, keepdims), 1.0 / n)


# ------------------------------------------------------------------ layers

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    flat = b.ndim == 2 and a.ndim > 2
    if flat:
        out = (a.data.reshape(-1, a.shape[-1]) @ b.data).reshape(a.shape[:-1] + (b.shape[1],))
    else:
        out = np.matmul(a.data, b.data)

    def bw(g):
        if flat:
            g2 = g.reshape(-1, g.shape[-1])
            if a.requires_grad:
                _accumulate(a, (g2 @ b.data.T).reshape(a.shape), True)
            if b.requires_grad:
                _accumulate(b, a.data.reshape(-1, a.shape[-1]).T @ g2, True)
            return
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            _accumulate(a, _unbroadcast(ga, a.shape), True)
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            _accumulate(b, _unbroadcast(gb, b.shape), True)

    return _make(out, (a, b), bw)


def linear(x, w, b=None):
    """y = x @ w + b over the last axis of ``x``."""
    x, w = as_tensor(x), as_tensor(w)
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input shape {x.shape} incompatible with weight shape {w.shape}")
    y = matmul(x, w)
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[1],):
            raise ShapeError(f"linear: bias shape {b.shape} does not match weight shape {w.shape}")
        y = add(y, b)
    return y


def batchnorm(x, gamma, beta, eps=1e-5, running=None, training=True, momentum=0.9):
    """Per-feature normalization over all leading axes.

    ``running`` is a dict with ``mean``/``var`` arrays. In training mode the
    batch statistics are used and the running ones updated in place as
    ``momentum * running + (1 - momentum) * batch``; otherwise the running
    statistics are used.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if eps <= 0:
        raise ContractError("batchnorm: eps must be positive")
    C = x.shape[-1]
    x2 = x.data.reshape(-1, C)
    n = x2.shape[0]
    if n == 0:
        raise EmptyInputError("batchnorm: empty batch")
    if training:
        mu = x2.mean(axis=0)
        xc = x2 - mu
        var = np.mean(xc * xc, axis=0)
        if running is not None:
            running["mean"] *= momentum
            running["mean"] += (1.0 - momentum) * mu
            running["var"] *= momentum
            running["var"] += (1.0 - momentum) * var
    else:
        mu, var = running["mean"], running["var"]
        xc = x2 - mu
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = (xhat * gamma.data + beta.data).reshape(x.shape)

    def bw(g):
        g2 = g.reshape(-1, C)
        if gamma.requires_grad:
            _accumulate(gamma, (g2 * xhat).sum(axis=0))
        if beta.requires_grad:
            _accumulate(beta, g2.sum(axis=0))
        if x.requires_grad:
            gx = g2 * gamma.data
            if training:
                gx = inv * (gx - gx.mean(axis=0) - xhat * (gx * xhat).mean(axis=0))
            else:
                gx = gx * inv
            _accumulate(x, gx.reshape(x.shape))

    return _make(out, (x, gamma, beta), bw)


@njit(cache=True)
def _bn_relu_fwd(x, mu, inv, gamma, beta, out):
    n, C = x.shape
    for i in range(n):
        for c in range(C):
            v = (x[i, c] - mu[c]) * inv[c] * gamma[c] + beta[c]
            out[i, c] = v if v > 0.0 else 0.0


@njit(cache=True)
def _bn_relu_bwd(g, x, out, mu, inv, gamma, training, gx, dgamma, dbeta):
    n, C = x.shape
    for c in range(C):
        dgamma[c] = 0.0
        dbeta[c] = 0.0
    for i in range(n):
        for c in range(C):
            if out[i, c] > 0.0:
                gy = g[i, c]
                dbeta[c] += gy
                dgamma[c] += gy * (x[i, c] - mu[c]) * inv[c]
    for i in range(n):
        for c in range(C):
            gy = g[i, c] if out[i, c] > 0.0 else 0.0
            if training:
                xh = (x[i, c] - mu[c]) * inv[c]
                gx[i, c] = gamma[c] * inv[c] * (gy - dbeta[c] / n - xh * dgamma[c] / n)
            else:
                gx[i, c] = gamma[c] * inv[c] * gy


def bn_relu(x, gamma, beta, eps=1e-5, running=None, training=True, momentum=0.9):
    """Fused ``relu(batchnorm(x))``; same semantics as the two separate ops."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    C = x.shape[-1]
    x2 = np.ascontiguousarray(x.data.reshape(-1, C))
    n = x2.shape[0]
    if n == 0:
        raise EmptyInputError("batchnorm: empty batch")
    out = np.empty_like(x2)
    if training:
        mu = np.zeros(C)
        var = _bn_stats(x2, mu)
        inv = 1.0 / np.sqrt(var + eps)
        _bn_relu_fwd(x2, mu, inv, gamma.data, beta.data, out)
        if running is not None:
            running["mean"] *= momentum
            running["mean"] += (1.0 - momentum) * mu
            running["var"] *= momentum
            running["var"] += (1.0 - momentum) * var
    else:
        mu = running["mean"]
        inv = 1.0 / np.sqrt(running["var"] + eps)
        _bn_relu_fwd(x2, mu, inv, gamma.data, beta.data, out)

    def bw(g):
        gx = np.empty_like(x2)
        dgamma = np.empty(C)
        dbeta = np.empty(C)
        _bn_relu_bwd(np.ascontiguousarray(g.reshape(-1, C)), x2, out, mu, inv, gamma.data,
                     training, gx, dgamma, dbeta)
        _accumulate(gamma, dgamma, True)
        _accumulate(beta, dbeta, True)
        _accumulate(x, gx.reshape(x.shape), True)

    return _make(out.reshape(x.shape), (x, gamma, beta), bw)


@njit(cache=True)
def _bn_stats(x, mu):
    n, C = x.shape
    for i in range(n):
        for c in range(C):
            mu[c] += x[i, c]
    for c in range(C):
        mu[c] /= n
    var = np.zeros(C)
    for i in range(n):
        for c in range(C):
            d = x[i, c] - mu[c]
            var[c] += d * d
    for c in range(C):
        var[c] /= n
    return var


def maxpool_set(x, axis=-2):
    """Maximum over the set axis; ties route the gradient to the first index."""
    x = as_tensor(x)
    axis = axis % x.ndim
    if x.shape[axis] == 0:
        raise EmptyInputError("maxpool_set: empty set")
    arg = np.argmax(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(arg, axis), axis=axis).squeeze(axis)

    def bw(g):
        full = np.zeros(x.shape, dtype=DTYPE)
        np.put_along_axis(full, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis=axis)
        _accumulate(x, full, True)

    return _make(out, (x,), bw)


def normalize_rows(x, eps=1e-12):
    """Unit-normalize along the last axis; rows with norm <= eps map to zero."""
    x = as_tensor(x)
    norm = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    ok = norm > eps
    safe = np.where(ok, norm, 1.0)
    y = np.where(ok, x.data / safe, 0.0)

    def bw(g):
        gx = (g - y * (g * y).sum(axis=-1, keepdims=True)) / safe
        _accumulate(x, np.where(ok, gx, 0.0))

    return _make(y, (x,), bw)


# ----------------------------------------------------------------- backward

def backward(loss: Tensor):
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    order, seen = [], set()
    stack = [(loss, False)]
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
    loss.grad = np.ones(loss.shape, dtype=DTYPE)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    # drop the graph so intermediates can be freed
    for node in order:
        if node._backward is not None:
            node._parents = ()
            node._backward = None
            node.grad = None


# ---------------------------------------------------------- parameters, Adam

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


class ParamStore:
    """Named parameters, batch-norm buffers and Adam moments."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, dict] = {}
        self.adam = AdamState()

    def add(self, name, value):
        if name in self.params:
            raise ContractError(f"duplicate parameter name {name!r}")
        t = Tensor(value, requires_grad=True)
        self.params[name] = t
        self.adam.m[name] = np.zeros_like(t.data)
        self.adam.v[name] = np.zeros_like(t.data)
        return t

    def buffer(self, name, width):
        if name not in self.buffers:
            self.buffers[name] = {"mean": np.zeros(width), "var": np.ones(width)}
        return self.buffers[name]

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def names(self):
        return list(self.params)

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def grads(self):
        return {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in self.params.items()}

    def copy(self):
        other = ParamStore()
        for k, t in self.params.items():
            other.add(k, t.data.copy())
            other.adam.m[k] = self.adam.m[k].copy()
            other.adam.v[k] = self.adam.v[k].copy()
        other.adam.step = self.adam.step
        other.buffers = {k: {n: a.copy() for n, a in b.items()} for k, b in self.buffers.items()}
        return other

    def num_params(self):
        return int(sum(t.data.size for t in self.params.values()))


def adam_step(store: ParamStore, grads: dict, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place Adam update with bias correction."""
    missing = [k for k in store.params if k not in grads]
    if missing:
        raise ContractError(f"adam_step: missing gradients for {missing[:5]}")
    st = store.adam
    st.step += 1
    t = st.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in store.params.items():
        g = np.asarray(grads[name], dtype=DTYPE)
        if g.shape != p.shape:
            raise ShapeError(f"adam_step: gradient for {name} has shape {g.shape}, expected {p.shape}")
        m, v = st.m[name], st.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return store


def glorot_uniform(rng, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Mlp:
    """Stack of fully-connected layers.

    Hidden layers are linear + batch norm + ReLU; the final layer is plain
    linear unless ``final_plain`` is False.
    """

    def __init__(self, name, in_dim, widths, final_plain=True):
        self.name = name
        self.in_dim = in_dim
        self.widths = list(widths)
        self.final_plain = final_plain

    @property
    def out_dim(self):
        return self.widths[-1]

    def _has_bn(self, i):
        return i < len(self.widths) - 1 or not self.final_plain

    def init(self, store: ParamStore, rng):
        d = self.in_dim
        for i, w in enumerate(self.widths):
            store.add(f"{self.name}.{i}.w", glorot_uniform(rng, d, w))
            store.add(f"{self.name}.{i}.b", np.zeros(w))
            if self._has_bn(i):
                store.add(f"{self.name}.{i}.gamma", np.ones(w))
                store.add(f"{self.name}.{i}.beta", np.zeros(w))
            d = w
        return self

    def weight(self, store, i=0):
        return store[f"{self.name}.{i}.w"]

    def bias(self, store, i=0):
        return store[f"{self.name}.{i}.b"]

    def _post(self, store, i, h, training):
        if not self._has_bn(i):
            return h
        p = f"{self.name}.{i}"
        return bn_relu(h, store[p + ".gamma"], store[p + ".beta"],
                       running=store.buffer(p + ".bn", self.widths[i]), training=training)

    def forward_from(self, store, h, training=True, start=0):
        """Continue from the pre-activation output of layer ``start``."""
        h = self._post(store, start, h, training)
        for i in range(start + 1, len(self.widths)):
            h = linear(h, self.weight(store, i), self.bias(store, i))
            h = self._post(store, i, h, training)
        return h

    def __call__(self, store, x, training=True):
        h = linear(x, self.weight(store, 0), self.bias(store, 0))
        return self.forward_from(store, h, training)


# -------------------------------------------------------------- checkpoints

CHECKPOINT_MAGIC = b"PTCK"
CHECKPOINT_VERSION = 1


def save_checkpoint(store: ParamStore, path, meta=None):
    """Write a deterministic checkpoint.

    Layout: magic ``PTCK`` | uint32 LE format version | uint64 LE header
    length | UTF-8 JSON header | payload. The header lists every entry as
    ``{"name", "shape", "offset", "count"}``; the payload is the concatenation
    of little-endian float64 arrays in row-major order. Entry names are
    prefixed ``param/``, ``adam_m/``, ``adam_v/`` and ``buffer/``.
    """
    entries, chunks, offset = [], [], 0

    def put(name, arr):
        nonlocal offset
        arr = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        chunks.append(arr.tobytes())
        offset += arr.size * 8

    for k in sorted(store.params):
        put("param/" + k, store.params[k].data)
    for k in sorted(store.params):
        put("adam_m/" + k, store.adam.m[k])
        put("adam_v/" + k, store.adam.v[k])
    for k in sorted(store.buffers):
        for stat in ("mean", "var"):
            put(f"buffer/{k}/{stat}", store.buffers[k][stat])
    header = {"format_version": CHECKPOINT_VERSION, "adam_step": store.adam.step,
              "entries": entries, "meta": meta or {}}
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(hbytes)))
    buf.write(hbytes)
    for c in chunks:
        buf.write(c)
    data = buf.getvalue()
    if path is not None:
        with open(path, "wb") as f:
            f.write(data)
    return data


def load_checkpoint(path_or_bytes):
    """Inverse of :func:`save_checkpoint`; returns ``(store, meta)``."""
    if isinstance(path_or_bytes, (bytes, bytearray)):
        data = bytes(path_or_bytes)
    else:
        with open(path_or_bytes, "rb") as f:
            data = f.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<IQ", data[4:16])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header = json.loads(data[16:16 + hlen].decode("utf-8"))
    base = 16 + hlen
    store = ParamStore()
    for e in header["entries"]:
        arr = np.frombuffer(data, dtype="<f8", count=e["count"], offset=base + e["offset"])
        arr = arr.astype(DTYPE).reshape(e["shape"])
        kind, _, name = e["name"].partition("/")
        if kind == "param":
            store.add(name, arr)
        elif kind == "adam_m":
            store.adam.m[name] = arr
        elif kind == "adam_v":
            store.adam.v[name] = arr
        elif kind == "buffer":
            bname, _, stat = name.rpartition("/")
            store.buffers.setdefault(bname, {})[stat] = arr
    store.adam.step = header["adam_step"]
    return store, header.get("meta", {})
