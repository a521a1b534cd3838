"""Minimal reverse-mode autodiff over NumPy arrays.

Exactly the operations the mesh models need: broadcast-aware arithmetic,
matmul, ELU, reductions, reshapes, neighbor gather, per-vertex slot
mixing, and sparse resampling. The graph is taped per evaluation through
closures and freed when the output goes out of scope; float64 is the
verification dtype, float32 an opt-in for throughput.
"""
from __future__ import annotations

import json

import numpy as np

from . import backend

CHECKPOINT_MAGIC = b"PCKPT1\n"


class Tensor:
    """A dense array plus an optional gradient and tape linkage."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None):
        if isinstance(data, np.ndarray):
            self.data = data
        elif isinstance(data, np.generic):   # 0-d results arrive as numpy scalars
            self.data = np.asarray(data)
        else:
            self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward_fn = backward_fn

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.grad is not None})"

    def backward(self, grad=None):
        """Accumulate gradients of this (scalar) tensor into the graph."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient needs a scalar")
            grad = np.ones_like(self.data)
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.asarray(grad, dtype=self.data.dtype) + (0 if self.grad is None else self.grad)
        for node in reversed(topo):
            if node._backward_fn is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward_fn(node.grad)):
                if parent.requires_grad and g is not None:
                    parent.grad = g if parent.grad is None else parent.grad + g

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        a, b = _pair(self, other)
        return add(a, mul(b, -1.0))

    def __rsub__(self, other):
        b, a = _pair(self, other)
        return add(a, mul(b, -1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes if len(axes) > 1 else axes[0])

    def abs(self):
        return abs_(self)

    def elu(self, alpha=1.0):
        return elu(self, alpha)


class Parameter(Tensor):
    """A named trainable tensor.

    ``decay_exempt`` marks the per-vertex mixing matrices (and their
    factorized pieces), which never receive weight decay; ``trainable``
    is cleared by the frozen-mixing ablation.
    """

    __slots__ = ("name", "decay_exempt", "trainable")

    def __init__(self, data, name, decay_exempt=False, trainable=True):
        super().__init__(np.asarray(data), requires_grad=trainable)
        self.name = name
        self.decay_exempt = decay_exempt
        self.trainable = trainable

    def __repr__(self):
        return (f"Parameter({self.name!r}, shape={self.data.shape}, "
                f"decay_exempt={self.decay_exempt}, trainable={self.trainable})")


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _pair(a, b) -> tuple[Tensor, Tensor]:
    """Coerce a scalar operand to its partner's dtype so f32 graphs stay f32."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.data.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.data.dtype))
    return _as_tensor(a), _as_tensor(b)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _make(data, parents, backward_fn):
    req = any(p.requires_grad for p in parents)
    if not req:
        return Tensor(data)
    return Tensor(data, requires_grad=True, parents=parents, backward_fn=backward_fn)


# -- elementwise -------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data + b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data * b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)))


def abs_(a) -> Tensor:
    a = _as_tensor(a)
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def elu(a, alpha: float = 1.0) -> Tensor:
    """x for x > 0, alpha*(exp(x)-1) otherwise."""
    a = _as_tensor(a)
    y = backend.elu_fw(a.data, alpha)
    return _make(y, (a,), lambda g: (backend.elu_bw(y, g, alpha),))


# -- reductions and shape ----------------------------------------------

def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),)
        ax = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),)

    return _make(np.asarray(out), (a,), bw)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    count = a.data.size if axis is None else np.prod(
        [a.shape[i] for i in (axis if isinstance(axis, tuple) else (axis,))])
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes) -> Tensor:
    a = _as_tensor(a)
    inv = np.argsort(axes)
    return _make(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                 lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def concat(tensors, axis=0) -> Tensor:
    tensors = tuple(_as_tensor(t) for t in tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _make(out, tensors, bw)


def take(a, key) -> Tensor:
    """Basic slicing with zero-fill scatter on the way back."""
    a = _as_tensor(a)
    out = a.data[key]

    def bw(g):
        dx = np.zeros_like(a.data)
        dx[key] = g
        return (dx,)

    return _make(np.ascontiguousarray(out), (a,), bw)


# -- linear algebra ----------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product with NumPy broadcasting over leading axes."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")
    out = a.data @ b.data

    def bw(g):
        ga = _unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape) \
            if a.requires_grad else None
        gb = _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape) \
            if b.requires_grad else None
        return (ga, gb)

    return _make(out, (a, b), bw)


# -- mesh-structured ops ------------------------------------------------

def gather(a, table) -> Tensor:
    """(B,N,D) -> (B,N,D,K) padded neighbor blocks; backward scatter-adds.

    Gradient flowing into padded slots is discarded: those entries are
    structural zeros, not variables.
    """
    a = _as_tensor(a)
    if a.data.ndim != 3 or a.shape[1] != table.num_vertices:
        raise ValueError(f"gather expects (B, {table.num_vertices}, D), got {a.shape}")
    n = a.shape[1]
    out = backend.gather_fw(a.data, table.indices)
    return _make(out, (a,), lambda g: (backend.gather_bw(g, table.indices, n),))


def vertex_permute(x, perm) -> Tensor:
    """Apply per-vertex K x K mixing: out[b,n] = x[b,n] @ perm[n]."""
    x, perm = _as_tensor(x), _as_tensor(perm)
    if x.data.ndim != 4 or perm.data.ndim != 3 or x.shape[3] != perm.shape[1]:
        raise ValueError(f"slot mixing shapes do not conform: {x.shape} vs {perm.shape}")
    if x.shape[1] != perm.shape[0]:
        raise ValueError(f"vertex counts differ: {x.shape[1]} vs {perm.shape[0]}")
    out = backend.permute_fw(x.data, perm.data)

    def bw(g):
        return (backend.permute_bw_x(g, perm.data) if x.requires_grad else None,
                backend.permute_bw_p(x.data, g) if perm.requires_grad else None)

    return _make(out, (x, perm), bw)


def sparse_apply(mat, x) -> Tensor:
    """Multiply a fixed sparse (M,N) operator along the vertex axis of (B,N,D).

    Linear with exact transpose gradient; ``mat`` itself is not trained.
    """
    x = _as_tensor(x)
    if x.data.ndim != 3 or x.shape[1] != mat.shape[1]:
        raise ValueError(f"operator {mat.shape} cannot apply to features {x.shape}")
    matT = mat.T.tocsr()

    def apply(m, arr, rows):
        b, n, d = arr.shape
        flat = arr.transpose(1, 0, 2).reshape(n, b * d)
        out = (m @ flat).astype(arr.dtype, copy=False)
        return np.ascontiguousarray(out.reshape(rows, b, d).transpose(1, 0, 2))

    out = apply(mat, x.data, mat.shape[0])
    return _make(out, (x,), lambda g: (apply(matT, g, mat.shape[1]),))


# -- verification --------------------------------------------------------

def finite_difference_check(fn, inputs, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` maps the given tensors to a tensor; non-scalar outputs are
    summed. The relative error of each entry is
    |analytic - fd| / max(1, |fd|); inputs should be float64.
    """
    tensors = []
    for t in inputs:
        if isinstance(t, Tensor):
            t.grad = None
            tensors.append(t)
        else:
            tensors.append(Tensor(np.asarray(t, dtype=np.float64), requires_grad=True))

    def scalar(*args):
        out = fn(*args)
        return out if out.data.size == 1 else out.sum()

    loss = scalar(*tensors)
    loss.backward()
    worst = 0.0
    for t in tensors:
        if not t.requires_grad:
            continue
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        for idx in np.ndindex(t.data.shape):
            orig = t.data[idx]
            t.data[idx] = orig + eps
            hi = float(scalar(*tensors).data)
            t.data[idx] = orig - eps
            lo = float(scalar(*tensors).data)
            t.data[idx] = orig
            fd = (hi - lo) / (2.0 * eps)
            err = abs(float(analytic[idx]) - fd) / max(1.0, abs(fd))
            worst = max(worst, err)
    return worst


# -- parameter persistence -----------------------------------------------

def save_parameters(path, params) -> None:
    """Write a checkpoint container: JSON manifest + raw little-endian payloads."""
    names = [p.name for p in params]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise ValueError(f"duplicate parameter names: {dupes}")
    entries = []
    payloads = []
    offset = 0
    for p in params:
        dtype = "<f4" if p.data.dtype == np.float32 else "<f8"
        raw = np.ascontiguousarray(p.data).astype(dtype, copy=False).tobytes()
        entries.append({
            "name": p.name,
            "shape": list(p.data.shape),
            "dtype": dtype,
            "decay_exempt": bool(p.decay_exempt),
            "trainable": bool(p.trainable),
            "offset": offset,
            "nbytes": len(raw),
        })
        payloads.append(raw)
        offset += len(raw)
    manifest = json.dumps({"tensors": entries}).encode()
    with open(str(path), "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(np.array([len(manifest)], dtype="<u8").tobytes())
        fh.write(manifest)
        for raw in payloads:
            fh.write(raw)


def load_parameters(path) -> dict[str, Parameter]:
    """Read a checkpoint container back into named Parameters, order preserved."""
    with open(str(path), "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a parameter container")
        (mlen,) = np.frombuffer(fh.read(8), dtype="<u8")
        manifest = json.loads(fh.read(int(mlen)).decode())
        blob = fh.read()
    out: dict[str, Parameter] = {}
    for e in manifest["tensors"]:
        raw = blob[e["offset"] : e["offset"] + e["nbytes"]]
        data = np.frombuffer(raw, dtype=e["dtype"]).reshape(e["shape"]).copy()
        data = data.astype(np.dtype(e["dtype"]).newbyteorder("="))
        out[e["name"]] = Parameter(data, e["name"], decay_exempt=e["decay_exempt"],
                                   trainable=e["trainable"])
    return out
