"""Dense float64 kernels with a small reverse-mode differentiation tape.

Every primitive records its parents and a hand-derived backward rule. Values
are plain numpy arrays held by :class:`Tensor`; summations inside
:func:`matmul` run in ascending index order so results are reproducible bit
for bit and match a naive triple loop exactly.
"""
from __future__ import annotations

import math
from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import ContractError, DegenerateInputError, NumericError, ParameterError, ShapeError

__all__ = [
    "Tensor", "GradTape", "as_tensor", "backward", "finite_diff_check",
    "matmul", "add", "sub", "mul", "neg", "scale", "sum_all", "mean", "reshape",
    "transpose", "crop", "take", "pick", "concat_rows",
    "transposed_conv2d", "kron_expand",
    "softmax_temp", "masked_softmax", "log_softmax", "cross_entropy",
    "relu", "layer_norm", "l2_normalize", "pca2d",
]


class Tensor:
    """An array node in the differentiation graph.

    Leaves created with ``requires_grad=True`` are parameters; anything
    computed from them records its parents and a backward closure.
    """

    __slots__ = ("data", "parents", "backward_fn", "requires_grad", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None, parents=(), backward_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self.parents = parents
        self.backward_fn = backward_fn

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def numpy(self):
        return self.data

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward_fn) -> Tensor:
    live = tuple(p for p in parents if p.requires_grad)
    if not live:
        return Tensor(data)
    return Tensor(data, requires_grad=True, parents=tuple(parents), backward_fn=backward_fn)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- backward


class GradTape:
    """Registry of trainable leaves; ``gradient`` runs the reverse sweep."""

    def __init__(self, params: Mapping[str, Tensor] | None = None):
        self.params: dict[str, Tensor] = {}
        for name, p in (params or {}).items():
            self.register(name, p)

    def register(self, name: str, tensor: Tensor) -> Tensor:
        if name in self.params:
            raise ContractError(f"parameter {name!r} registered twice")
        if any(t is tensor for t in self.params.values()):
            raise ContractError(f"tensor already registered under another name ({name!r})")
        tensor.requires_grad = True
        tensor.name = tensor.name or name
        self.params[name] = tensor
        return tensor

    def gradient(self, loss: Tensor) -> dict[str, np.ndarray]:
        return backward(self, loss)


def _topo_order(root: Tensor) -> list[Tensor]:
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
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(tape: GradTape | Mapping[str, Tensor], loss: Tensor) -> dict[str, np.ndarray]:
    """Gradient of a scalar ``loss`` with respect to every registered parameter.

    Parameters the loss does not depend on get an exact zero array.
    """
    params = tape.params if isinstance(tape, GradTape) else dict(tape)
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {np.shape(loss)}")
    grads: dict[int, np.ndarray] = {}
    if loss.requires_grad:
        grads[id(loss)] = np.ones_like(loss.data)
        for node in reversed(_topo_order(loss)):
            g = grads.get(id(node))
            if g is None or node.backward_fn is None:
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg
    out = {}
    for name, p in params.items():
        g = grads.get(id(p))
        out[name] = np.zeros_like(p.data) if g is None else np.asarray(g, dtype=np.float64).reshape(p.shape)
    return out


def finite_diff_check(f: Callable[[], float], params: Mapping[str, Tensor],
                      grads: Mapping[str, np.ndarray], h: float = 1e-6) -> float:
    """Largest relative gap between analytic gradients and central differences.

    ``f`` re-evaluates the loss from the current contents of ``params``; each
    entry is nudged by +-h in place and restored afterwards. The per-entry
    error is ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    if not h > 0:
        raise ParameterError(f"step h must be positive, got {h}")
    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        analytic = np.asarray(grads[name], dtype=np.float64).reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            fp = float(f())
            flat[idx] = orig - h
            fm = float(f())
            flat[idx] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                loc = [int(i) for i in np.unravel_index(idx, p.shape)]
                raise NumericError(f"non-finite loss while probing {name}{loc}")
            num = (fp - fm) / (2.0 * h)
            a = analytic[idx]
            err = abs(a - num) / max(1e-8, abs(a) + abs(num))
            worst = max(worst, err)
    return worst


# ------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _node(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,))


def scale(a, c: float) -> Tensor:
    """Multiply by a constant scalar."""
    a = as_tensor(a)
    c = float(c)
    return _node(a.data * c, (a,), lambda g: (g * c,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    on = a.data > 0
    return _node(np.where(on, a.data, 0.0), (a,), lambda g: (g * on,))


# --------------------------------------------------------------- reductions


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
        return _node(np.asarray(a.data.mean()), (a,),
                     lambda g: (np.full(a.shape, float(g) / n),))
    n = a.shape[axis]

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g, axis) / n, a.shape).copy(),)

    return _node(a.data.mean(axis=axis), (a,), bw)


# ---------------------------------------------------------------- structure


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a) -> Tensor:
    """Swap the last two axes."""
    a = as_tensor(a)
    return _node(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def crop(a, rows: int, cols: int) -> Tensor:
    """Top-left ``rows x cols`` block of a matrix."""
    a = as_tensor(a)
    if a.ndim != 2 or rows > a.shape[0] or cols > a.shape[1] or rows < 1 or cols < 1:
        raise ShapeError(f"cannot crop {a.shape} to ({rows}, {cols})")
    if (rows, cols) == a.shape:
        return a

    def bw(g):
        full = np.zeros(a.shape)
        full[:rows, :cols] = g
        return (full,)

    return _node(a.data[:rows, :cols], (a,), bw)


def take(a, index, axis=0) -> Tensor:
    """Gather along ``axis`` (embedding lookup); repeated indices accumulate."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.intp)

    def bw(g):
        full = np.zeros(a.shape)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, index.reshape(-1), np.moveaxis(g, axis, 0).reshape((-1,) + moved.shape[1:]))
        return (full,)

    return _node(np.take(a.data, index, axis=axis), (a,), bw)


def pick(a, index) -> Tensor:
    """``out[i] = a[i, index[i]]`` for a 2-D ``a``."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.intp)
    rows = np.arange(a.shape[0])

    def bw(g):
        full = np.zeros(a.shape)
        full[rows, index] = g
        return (full,)

    return _node(a.data[rows, index], (a,), bw)


def concat_rows(parts: Iterable) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = np.cumsum([p.shape[0] for p in parts])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=0))

    return _node(np.concatenate([p.data for p in parts], axis=0), parts, bw)


# ------------------------------------------------------------------- matmul


def _ordered_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # c = sum_r a[..., :, r] b[..., r, :], accumulated r = 0, 1, ... in order
    inner = a.shape[-1]
    out = a[..., :, 0:1] * b[..., 0:1, :]
    for r in range(1, inner):
        out += a[..., :, r:r + 1] * b[..., r:r + 1, :]
    return out


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    try:
        out = _ordered_matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul batch mismatch: {a.shape} @ {b.shape}") from exc

    def bw(g):
        ga = _unbroadcast(_ordered_matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(_ordered_matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return _node(out, (a, b), bw)


# ------------------------------------------------------ transposed convolution


def _check_kernel(k: Tensor, stride: int):
    if k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise ShapeError(f"kernel must be square, got {k.shape}")
    if int(stride) != stride or stride < 1:
        raise ParameterError(f"stride must be a positive integer, got {stride}")


def kron_expand(z, k) -> Tensor:
    """Transposed convolution with stride equal to kernel size, i.e. ``z (x) k``."""
    z, k = as_tensor(z), as_tensor(k)
    _check_kernel(k, 1)
    (rows, cols), s = z.shape, k.shape[0]
    out = (z.data[:, None, :, None] * k.data[None, :, None, :]).reshape(rows * s, cols * s)

    def bw(g):
        g4 = g.reshape(rows, s, cols, s)
        gz = np.einsum("apbq,pq->ab", g4, k.data) if z.requires_grad else None
        gk = np.einsum("apbq,ab->pq", g4, z.data) if k.requires_grad else None
        return gz, gk

    return _node(out, (z, k), bw)


def transposed_conv2d(z, k, stride: int) -> Tensor:
    """Scatter ``z[a, b] * k`` into the block anchored at ``(a*stride, b*stride)``.

    Overlapping contributions are summed in ascending ``(a, b)`` order. When
    ``stride`` equals the kernel size the Kronecker fast path is taken.
    """
    z, k = as_tensor(z), as_tensor(k)
    _check_kernel(k, stride)
    if z.ndim != 2:
        raise ShapeError(f"input must be a matrix, got {z.shape}")
    s = k.shape[0]
    if stride == s:
        return kron_expand(z, k)
    rows, cols = z.shape
    out_r, out_c = (rows - 1) * stride + s, (cols - 1) * stride + s
    out = np.zeros((out_r, out_c))
    # kernel offsets walked in descending order so each output cell
    # receives its contributions in ascending (a, b) order
    for p in range(s - 1, -1, -1):
        for q in range(s - 1, -1, -1):
            out[p:p + (rows - 1) * stride + 1:stride, q:q + (cols - 1) * stride + 1:stride] += z.data * k.data[p, q]

    def bw(g):
        gz = np.zeros(z.shape) if z.requires_grad else None
        gk = np.zeros(k.shape) if k.requires_grad else None
        for p in range(s):
            for q in range(s):
                window = g[p:p + (rows - 1) * stride + 1:stride, q:q + (cols - 1) * stride + 1:stride]
                if gz is not None:
                    gz += window * k.data[p, q]
                if gk is not None:
                    gk[p, q] = np.sum(window * z.data)
        return gz, gk

    return _node(out, (z, k), bw)


# ------------------------------------------------------------------ softmax


def _check_tau(tau):
    if not tau > 0:
        raise ParameterError(f"temperature must be positive, got {tau}")


def softmax_temp(v, tau: float = 1.0) -> Tensor:
    """Temperature softmax over the last axis."""
    v = as_tensor(v)
    _check_tau(tau)
    if v.data.size == 0:
        raise ShapeError("softmax of an empty vector")
    if not np.all(np.isfinite(v.data)):
        raise NumericError("softmax input contains non-finite values")
    z = (v.data - v.data.max(axis=-1, keepdims=True)) / tau
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)) / tau,)

    return _node(p, (v,), bw)


def masked_softmax(v, mask, tau: float = 1.0) -> Tensor:
    """Temperature softmax restricted to ``mask``; masked-out entries are exactly 0."""
    v = as_tensor(v)
    mask = np.asarray(mask, dtype=bool)
    _check_tau(tau)
    if not np.all(mask.any(axis=-1)):
        raise ContractError("every row needs at least one selected entry")
    if not np.all(np.isfinite(v.data)):
        raise NumericError("gating logits contain non-finite values")
    top = np.where(mask, v.data, -np.inf).max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp((np.where(mask, v.data, top) - top) / tau), 0.0)
    p = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)) / tau,)

    return _node(p, (v,), bw)


def log_softmax(v) -> Tensor:
    v = as_tensor(v)
    z = v.data - v.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def bw(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _node(out, (v,), bw)


def cross_entropy(logits, target) -> Tensor:
    """``-log softmax(logits)[target]``; a batch of rows gives one loss per row."""
    logits = as_tensor(logits)
    target_arr = np.asarray(target)
    classes = logits.shape[-1]
    if np.any(target_arr < 0) or np.any(target_arr >= classes):
        raise IndexError(f"target {target} out of range for {classes} classes")
    if logits.ndim == 1:
        row = reshape(logits, (1, classes))
        return reshape(neg(pick(log_softmax(row), [int(target_arr)])), ())
    return neg(pick(log_softmax(logits), target_arr))


# -------------------------------------------------------------- normalisers


def layer_norm(x, eps: float = 1e-5) -> Tensor:
    """Parameter-free normalisation over the last axis."""
    x = as_tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    y = xc * inv

    def bw(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * y).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - y * gy),)

    return _node(y, (x,), bw)


def l2_normalize(x) -> Tensor:
    """Scale each row (last axis) to unit Euclidean norm."""
    x = as_tensor(x)
    norm = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    if np.any(norm == 0):
        raise DegenerateInputError("cannot normalise a zero-norm vector")
    y = x.data / norm

    def bw(g):
        return ((g - y * (g * y).sum(axis=-1, keepdims=True)) / norm,)

    return _node(y, (x,), bw)


# ---------------------------------------------------------------------- PCA


def _power_top(cov: np.ndarray, start: np.ndarray, max_iter: int, tol: float) -> np.ndarray:
    v = start / np.linalg.norm(start)
    for _ in range(max_iter):
        w = cov @ v
        norm = np.linalg.norm(w)
        if norm < 1e-300:
            return v
        w /= norm
        if np.linalg.norm(w - v) < tol:
            return w
        v = w
    return v


def _sign_fix(v: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(np.abs(v) > 1e-15)
    if nz.size and v[nz[0]] < 0:
        return -v
    return v


def pca2d(points, max_iter: int = 200, tol: float = 1e-10, return_components: bool = False):
    """Project mean-centred rows onto the two leading covariance eigenvectors.

    Eigenvectors come from power iteration with deflation; each is signed so
    that its first nonzero coordinate is positive.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3 or x.shape[1] < 2:
        raise ShapeError(f"pca2d needs >= 3 points of dimension >= 2, got {x.shape}")
    xc = x - x.mean(axis=0)
    if not np.any(xc):
        raise DegenerateInputError("all points are identical")
    cov = xc.T @ xc / (x.shape[0] - 1)
    start = np.random.default_rng(0).standard_normal(x.shape[1])
    v1 = _sign_fix(_power_top(cov, start, max_iter, tol))
    # deflate by projecting out v1, so the second iteration cannot drift back
    # onto it when the remaining spectrum is flat (rank-1 data)
    q = np.eye(x.shape[1]) - np.outer(v1, v1)
    start2 = q @ start
    v2 = q @ _power_top(q @ cov @ q, start2, max_iter, tol)
    if np.linalg.norm(v2) < 1e-12:
        v2 = start2
    v2 = _sign_fix(v2 / np.linalg.norm(v2))
    comps = np.stack([v1, v2], axis=1)
    coords = xc @ comps
    return (coords, comps) if return_components else coords
