"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Every op builds a new :class:`Tensor` holding a closure that maps the output
gradient to one gradient per parent. :func:`backward` walks the graph in
reverse topological order and sums contributions, so a tensor consumed twice
receives both.

Broadcasting is deliberately limited to adding a 1-D bias over the batch axis.
"""
from __future__ import annotations

import contextlib
import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DataFormatError, NumericalError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.op = "leaf"
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block (evaluation passes)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward_fn, op):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.op = op
    out.requires_grad = _grad_enabled and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _shape_error(op, *tensors):
    shapes = " and ".join(str(t.shape) for t in tensors)
    return ValueError(f"{op}: incompatible shapes {shapes}")


# -- elementwise ----------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        return _node(a.data + b.data, (a, b), lambda g: (g, g), "add")
    if b.ndim == 1 and a.ndim == 2 and a.shape[1] == b.shape[0]:
        return _node(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0)), "add_bias")
    raise _shape_error("add", a, b)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise _shape_error("sub", a, b)
    return _node(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise _shape_error("mul", a, b)
    return _node(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def scale(a, c: float):
    a = as_tensor(a)
    c = float(c)
    return _node(a.data * c, (a,), lambda g: (g * c,), "scale")


def square(a):
    a = as_tensor(a)
    return _node(a.data**2, (a,), lambda g: (2.0 * a.data * g,), "square")


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _node(a.data * mask, (a,), lambda g: (g * mask,), "relu")


# -- shape ----------------------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a, b)
    return _node(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def transpose(a):
    a = as_tensor(a)
    if a.ndim != 2:
        raise ValueError(f"transpose: expected a 2-D tensor, got shape {a.shape}")
    return _node(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def reshape(a, shape):
    a = as_tensor(a)
    shape = tuple(shape)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ValueError(f"reshape: cannot reshape {a.shape} to {shape}") from None
    return _node(data, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def concat(tensors):
    """Concatenate along the last axis."""
    tensors = [as_tensor(t) for t in tensors]
    lead = tensors[0].shape[:-1]
    for t in tensors[1:]:
        if t.shape[:-1] != lead:
            raise _shape_error("concat", tensors[0], t)
    edges = np.cumsum([0] + [t.shape[-1] for t in tensors])

    def bw(g):
        return tuple(g[..., edges[k] : edges[k + 1]] for k in range(len(tensors)))

    return _node(np.concatenate([t.data for t in tensors], axis=-1), tuple(tensors), bw, "concat")


# -- reductions -----------------------------------------------------------------

def sum(a):  # noqa: A001 - mirrors the op name
    a = as_tensor(a)
    return _node(np.array(a.data.sum()), (a,), lambda g: (np.full(a.shape, float(g)),), "sum")


def mean_axis(a, axis: int):
    a = as_tensor(a)
    axis = axis % a.ndim
    n = a.shape[axis]

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g, axis) / n, a.shape).copy(),)

    return _node(a.data.mean(axis=axis), (a,), bw, "mean_axis")


def mean_pool_spatial(a):
    """Global average over the two trailing axes: [N, C, H, W] -> [N, C]."""
    a = as_tensor(a)
    if a.ndim != 4:
        raise ValueError(f"mean_pool_spatial: expected [N, C, H, W], got shape {a.shape}")
    hw = a.shape[2] * a.shape[3]

    def bw(g):
        return (np.broadcast_to(g[:, :, None, None] / hw, a.shape).copy(),)

    return _node(a.data.mean(axis=(2, 3)), (a,), bw, "mean_pool_spatial")


# -- softmax family -------------------------------------------------------------

def softmax(a):
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _node(p, (a,), bw, "softmax")


def log_softmax(a):
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def bw(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _node(out, (a,), bw, "log_softmax")


def cross_entropy_with_logits(logits, labels):
    """Mean cross-entropy of integer ``labels`` under row-wise ``logits``."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"cross_entropy_with_logits: logits {logits.shape} vs labels {labels.shape}")
    n = logits.shape[0]
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1))
    rows = np.arange(n)
    loss = np.mean(lse - z[rows, labels])

    def bw(g):
        p = np.exp(z - lse[:, None])
        p[rows, labels] -= 1.0
        return (p * (float(g) / n),)

    return _node(np.array(loss), (logits,), bw, "cross_entropy")


# -- convolution ----------------------------------------------------------------

def conv2d(x, w, b):
    """Stride-1, unpadded 2-D cross-correlation: [N,Cin,H,W] * [Cout,Cin,kh,kw] + [Cout]."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if (
        x.ndim != 4
        or w.ndim != 4
        or x.shape[1] != w.shape[1]
        or b.shape != (w.shape[0],)
        or x.shape[2] < w.shape[2]
        or x.shape[3] < w.shape[3]
    ):
        raise _shape_error("conv2d", x, w, b)
    out = kernels.conv2d_forward(x.data, w.data, b.data)

    def bw(g):
        return kernels.conv2d_backward(x.data, w.data, np.ascontiguousarray(g))

    return _node(out, (x, w, b), bw, "conv2d")


# -- backward -------------------------------------------------------------------

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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every tensor that ``loss`` depends on.

    Leaf gradients accumulate across calls; zero them between steps.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not np.isfinite(loss.data).all():
        raise NumericalError(f"non-finite loss {loss.item()}")
    order = _topo(loss)
    for node in order:
        if node._backward is not None:
            node.grad = None
    loss.grad = np.ones_like(loss.data)
    leaves = []
    for node in reversed(order):
        if node._backward is None:
            if node.requires_grad:
                leaves.append(node)
            continue
        g = node.grad
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.array(pg, dtype=np.float64)
            else:
                parent.grad = parent.grad + pg
    for leaf in leaves:
        if leaf.grad is not None and not np.isfinite(leaf.grad).all():
            raise NumericalError(f"non-finite gradient in {leaf.name or leaf!r}")


# -- optimiser ------------------------------------------------------------------

@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0


def adam_step(params, grads, state: AdamState, lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
    """One Adam update with bias correction and decoupled (AdamW) weight decay.

    ``params`` are updated in place; ``grads`` of None count as zero.
    """
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p)
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        if weight_decay:
            p -= lr * weight_decay * p
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


class Adam:
    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay
        self.state = AdamState()

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        adam_step(
            [p.data for p in self.params],
            [p.grad for p in self.params],
            self.state,
            self.lr,
            self.beta1,
            self.beta2,
            self.eps,
            self.weight_decay,
        )


# -- checkpoint -----------------------------------------------------------------

CKPT_MAGIC = b"GRNW"
CKPT_VERSION = 1


def save_checkpoint(path, arrays) -> None:
    """Write a name -> array mapping in the GRNW format."""
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(arrays)))
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)) + raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CKPT_MAGIC:
        raise DataFormatError(f"{path}: bad magic at offset 0, expected {CKPT_MAGIC!r}")
    try:
        version, n = struct.unpack_from("<II", raw, 4)
        if version != CKPT_VERSION:
            raise DataFormatError(f"{path}: unsupported version {version} at offset 4")
        off = 12
        out = {}
        for _ in range(n):
            (ln,) = struct.unpack_from("<I", raw, off)
            off += 4
            name = raw[off : off + ln].decode("utf-8")
            off += ln
            (rank,) = struct.unpack_from("<I", raw, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}Q", raw, off)
            off += 8 * rank
            count = int(np.prod(dims)) if rank else 1
            if off + 8 * count > len(raw):
                raise DataFormatError(f"{path}: truncated payload for {name!r} at offset {off}")
            out[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(dims).astype(np.float64)
            off += 8 * count
    except struct.error as exc:
        raise DataFormatError(f"{path}: truncated checkpoint ({exc})") from exc
    return out
