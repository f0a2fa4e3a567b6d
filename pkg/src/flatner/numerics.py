"""A small reverse-mode autodiff core over numpy arrays.

Only the operations the lattice encoder and the CRF need are provided.  Graphs
are built dynamically on every forward pass, so each sentence (or padded
batch) gets its own graph.
"""
from __future__ import annotations

import contextlib
import hashlib
import json
import math
import struct
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

NEG_INF = -1e30
LAYER_NORM_EPS = 1e-5

_state = threading.local()


class ShapeError(ValueError):
    pass


class GradCheckError(RuntimeError):
    pass


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (per thread)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topological(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar
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

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)


class Parameter(Tensor):
    """A named leaf tensor that the optimizer updates."""

    __slots__ = ("name", "init")

    def __init__(self, name: str, value, init: str = "custom", requires_grad: bool = True):
        super().__init__(np.array(value, dtype=np.float64), requires_grad=requires_grad)
        self.name = name
        self.init = init

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, init={self.init!r})"


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    return _result(a.data * c, (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


def where(cond: np.ndarray, a, b) -> Tensor:
    """Select from ``a`` where ``cond`` holds, else from ``b``; ``cond`` is constant."""
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)

    def backward(g):
        return (_unbroadcast(np.where(cond, g, 0.0), a.shape),
                _unbroadcast(np.where(cond, 0.0, g), b.shape))

    return _result(np.where(cond, a.data, b.data), (a, b), backward)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def getitem(a: Tensor, index) -> Tensor:
    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, index, g)
        return (out,)

    return _result(a.data[index], (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            d1 != d2 for i, (d1, d2) in enumerate(zip(ref, t.shape)) if i != ax
        ):
            raise ShapeError(f"concat: incompatible shapes {ref} and {t.shape} along axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=ax))

    return _result(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward)


def take(table: Tensor, index: np.ndarray) -> Tensor:
    """Row lookup: ``out[..., :] = table[index[...], :]``."""
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= table.shape[0]):
        raise IndexError(f"take: index out of range for table with {table.shape[0]} rows")

    def backward(g):
        out = np.zeros_like(table.data)
        np.add.at(out, index, g)
        return (out,)

    return _result(table.data[index], (table,), backward)


embedding_lookup = take


# ---------------------------------------------------------------------------
# reductions and linear algebra


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward)


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return scale(tsum(a, axis=axis), 1.0 / n)


def matmul(a, b) -> Tensor:
    """``a @ b`` where ``b`` is 2-D (weights) or both share leading batch dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if b.ndim == 2:
            a2 = a.data.reshape(-1, a.shape[-1])
            gb = a2.T @ g.reshape(-1, g.shape[-1])
        else:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return _unbroadcast(ga, a.shape), gb

    return _result(a.data @ b.data, (a, b), backward)


def einsum(spec: str, a, b) -> Tensor:
    """Two-operand einsum without repeated or operand-private summed indices."""
    a, b = as_tensor(a), as_tensor(b)
    inputs, out = spec.replace(" ", "").split("->")
    sa, sb = inputs.split(",")
    for mine, other in ((sa, sb), (sb, sa)):
        if len(set(mine)) != len(mine) or any(c not in other and c not in out for c in mine):
            raise ValueError(f"einsum {spec!r}: unsupported subscripts for autodiff")
    try:
        data = np.einsum(spec, a.data, b.data, optimize=True)
    except ValueError as exc:
        raise ShapeError(f"einsum {spec!r}: shapes {a.shape} and {b.shape}: {exc}") from None

    def backward(g):
        ga = np.einsum(f"{out},{sb}->{sa}", g, b.data, optimize=True) if a.requires_grad else None
        gb = np.einsum(f"{out},{sa}->{sb}", g, a.data, optimize=True) if b.requires_grad else None
        return ga, gb

    return _result(data, (a, b), backward)


def logsumexp(a: Tensor, axis: int = -1) -> Tensor:
    m = np.max(a.data, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = (np.log(s) + m).squeeze(axis)

    def backward(g):
        return (np.expand_dims(g, axis) * (e / s),)

    return _result(out, (a,), backward)


def softmax(a: Tensor, axis: int = -1, keep: np.ndarray | None = None) -> Tensor:
    """Softmax along ``axis``.

    With a boolean ``keep`` mask, excluded entries get exactly zero weight and a
    row with nothing kept comes out as all zeros instead of NaN.
    """
    x = a.data
    if keep is not None:
        keep = np.broadcast_to(np.asarray(keep, dtype=bool), x.shape)
        x = np.where(keep, x, -np.inf)
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x - m)
    s = e.sum(axis=axis, keepdims=True)
    out = e / np.where(s > 0, s, 1.0)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _result(out, (a,), backward)


def dropout(a: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; the identity when not training or ``p == 0``."""
    if not training or p == 0.0:
        return a
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if rng is None:
        raise ValueError("dropout in training mode needs an explicit rng")
    mask = (rng.random(a.shape) >= p) / (1.0 - p)
    return _result(a.data * mask, (a,), lambda g: (g * mask,))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    n = x.shape[-1]

    def backward(g):
        dxhat = g * gain.data
        dx = inv / n * (n * dxhat - dxhat.sum(-1, keepdims=True)
                        - xhat * (dxhat * xhat).sum(-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(xhat * gain.data + bias.data, (x, gain, bias), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


# ---------------------------------------------------------------------------
# initialisation


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    limit = math.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape)


def embedding_normal(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    return rng.normal(0.0, shape[1] ** -0.5, size=shape)


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    frozen: list[str]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.errors.values())

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def __str__(self) -> str:
        lines = [f"{name:<24s} {err:.3e}" for name, err in self.errors.items()]
        lines += [f"{name:<24s} frozen (grad 0)" for name in self.frozen]
        lines.append(f"max rel err {self.max_error:.3e} tol {self.tolerance:g} "
                     f"{'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def grad_check(
    model_fn: Callable[[], Tensor],
    params: Iterable[Parameter],
    tolerance: float = 1e-4,
    step: float = 1e-5,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare analytic gradients with central differences, element by element.

    The relative error of one entry is ``|a - n| / max(|a|, |n|, floor)``; a
    parameter's error is the max over its entries.  ``model_fn`` must return a
    scalar and be deterministic (no dropout).
    """
    params = list(params)
    first = float(model_fn().data)
    if float(model_fn().data) != first:
        raise GradCheckError("forward pass is not deterministic; disable dropout before checking")
    for p in params:
        p.zero_grad()
    model_fn().backward()

    errors: dict[str, float] = {}
    frozen: list[str] = []
    for p in params:
        if not p.requires_grad:
            frozen.append(p.name)
            continue
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up = float(model_fn().data)
            flat[k] = orig - step
            down = float(model_fn().data)
            flat[k] = orig
            numeric.reshape(-1)[k] = (up - down) / (2 * step)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
        errors[p.name] = float(np.max(np.abs(analytic - numeric) / denom)) if p.data.size else 0.0
    return GradCheckReport(errors, frozen, tolerance)


# ---------------------------------------------------------------------------
# checkpoint files
#
# Layout, all integers little-endian:
#   magic        8 bytes  b"FLATCKPT"
#   version      uint32   CHECKPOINT_VERSION
#   meta_len     uint32   length of the metadata blob
#   meta         meta_len bytes of UTF-8 JSON
#   n_arrays     uint32
#   per array:
#     name_len   uint16, then name_len bytes of UTF-8 name
#     ndim       uint8,  then ndim x uint32 dims
#     values     prod(dims) x float32 (little-endian, C order)

CHECKPOINT_MAGIC = b"FLATCKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    blob = json.dumps(meta or {}, ensure_ascii=False, sort_keys=True).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(blob)), blob,
             struct.pack("<I", len(arrays))]
    for name, value in arrays.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(value, dtype="<f4")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    buf = Path(path).read_bytes()
    if buf[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, meta_len = struct.unpack_from("<II", buf, 8)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    meta = json.loads(buf[pos:pos + meta_len].decode("utf-8"))
    pos += meta_len
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        n = int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(buf, dtype="<f4", count=n, offset=pos).reshape(shape).copy()
        pos += 4 * n
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return arrays, meta


def checksum(arrays: Iterable[np.ndarray]) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()
