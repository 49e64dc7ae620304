"""Minimal reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps an ``ndarray``. Primitive applications are recorded on
the innermost active :class:`Tape` whenever one of the operands requires a
gradient; :meth:`Tape.backward` then walks the recorded nodes in reverse order
and accumulates vector-Jacobian products.

Without an active tape nothing is recorded, which is how inference runs::

    with Tape() as tape:
        loss = ((w @ x).tanh() ** 2).sum()
        grads = tape.backward(loss)
"""
from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, GradientCheckError, ShapeError, StateError

_dtype = np.float64
_tape_stack: list = []


def set_default_dtype(dtype) -> None:
    """Switch the floating type used for new tensors (float64 or float32)."""
    global _dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float64), np.dtype(np.float32)):
        raise ConfigError(f"unsupported dtype {dtype}")
    _dtype = dtype.type


def get_default_dtype():
    return _dtype


class Tensor:
    """Dense real array taking part in reverse-mode differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_recorded")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, np.ndarray) and data.dtype == _dtype:
            self.data = data
        else:
            self.data = np.asarray(data, dtype=_dtype)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self._recorded = False

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __len__(self) -> int:
        return len(self.data)

    # arithmetic ---------------------------------------------------------
    def __add__(self, other):
        return apply_primitive("add", (self, other))

    def __radd__(self, other):
        return apply_primitive("add", (other, self))

    def __sub__(self, other):
        return apply_primitive("sub", (self, other))

    def __rsub__(self, other):
        return apply_primitive("sub", (other, self))

    def __mul__(self, other):
        return apply_primitive("mul", (self, other))

    def __rmul__(self, other):
        return apply_primitive("mul", (other, self))

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return apply_primitive("mul", (self, 1.0 / other))
        return apply_primitive("div", (self, other))

    def __neg__(self):
        return apply_primitive("neg", (self,))

    def __matmul__(self, other):
        return apply_primitive("matmul", (self, other))

    def __pow__(self, p):
        return apply_primitive("pow", (self,), {"p": float(p)})

    def __getitem__(self, key):
        return apply_primitive("slice", (self,), {"key": key})

    # elementwise / reductions -------------------------------------------
    def tanh(self):
        return apply_primitive("tanh", (self,))

    def sigmoid(self):
        return apply_primitive("sigmoid", (self,))

    def relu(self):
        return apply_primitive("relu", (self,))

    def exp(self):
        return apply_primitive("exp", (self,))

    def log(self):
        return apply_primitive("log", (self,))

    def sqrt(self):
        return apply_primitive("sqrt", (self,))

    def clip(self, lo: float, hi: float):
        return apply_primitive("clip", (self,), {"lo": lo, "hi": hi})

    def sum(self, axis=None, keepdims: bool = False):
        return apply_primitive("sum", (self,), {"axis": axis, "keepdims": keepdims})

    def mean(self, axis=None, keepdims: bool = False):
        return apply_primitive("mean", (self,), {"axis": axis, "keepdims": keepdims})

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return apply_primitive("reshape", (self,), {"shape": shape})

    def transpose(self, *axes):
        return apply_primitive("transpose", (self,), {"axes": axes or None})

    def softmax(self, axis: int = -1, mask=None):
        return apply_primitive("softmax", (self,), {"axis": axis, "mask": mask})

    def log_softmax(self, axis: int = -1):
        return apply_primitive("log_softmax", (self,), {"axis": axis})


def _raise_item(t):
    raise ContractError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    """Leaf tensor that requires a gradient; data is copied into a contiguous buffer."""
    return Tensor(np.array(data, dtype=_dtype, order="C"), requires_grad=True, name=name)


# ---------------------------------------------------------------------------
# tape
# ---------------------------------------------------------------------------


class Tape:
    """Ordered record of primitive applications for one optimisation step.

    Nodes are appended in execution order, so every node's operands were
    produced by earlier nodes (or are leaves). ``backward`` consumes and clears
    the tape; a second call raises :class:`StateError`.
    """

    def __init__(self):
        self.nodes: list = []
        self.leaves: dict = {}
        self.cleared = False

    def __enter__(self) -> "Tape":
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Tensor, inputs: tuple, backward: Callable) -> None:
        if self.cleared:
            raise StateError("cannot record on a cleared tape")
        for t in inputs:
            if t.requires_grad and not t._recorded and id(t) not in self.leaves:
                self.leaves[id(t)] = t
        self.nodes.append((out, inputs, backward))

    def clear(self) -> None:
        self.nodes = []
        self.leaves = {}
        self.cleared = True

    def backward(self, loss: Tensor, params: Iterable[Tensor] | None = None) -> dict:
        """Back-propagate from a single-element ``loss``.

        Returns a dict keyed by leaf tensor (identity) holding gradient arrays.
        Every tensor in ``params`` gets an entry, zero if it is unreachable.
        Leaf ``.grad`` attributes are set as a side effect.
        """
        if self.cleared:
            raise StateError("backward called on a cleared tape")
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict = {id(loss): np.ones_like(loss.data)}
        for out, inputs, fn in reversed(self.nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            in_grads = fn(g)
            for t, gi in zip(inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                k = id(t)
                prev = grads.get(k)
                grads[k] = gi if prev is None else prev + gi
        result = {}
        for k, t in self.leaves.items():
            g = grads.get(k)
            if g is not None:
                result[t] = g
        if loss.requires_grad and not loss._recorded:
            result[loss] = grads[id(loss)]
        if params is not None:
            for p in params:
                if p not in result:
                    result[p] = np.zeros_like(p.data)
        for t, g in result.items():
            t.grad = g
        self.clear()
        return result


def active_tape() -> Tape | None:
    return _tape_stack[-1] if _tape_stack else None


@contextmanager
def no_grad():
    """Suspend recording: primitives applied inside produce untracked tensors."""
    _tape_stack.append(None)
    try:
        yield
    finally:
        _tape_stack.pop()


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> dict:
    """Back-propagate ``loss`` on the innermost active tape."""
    tape = active_tape()
    if tape is None:
        raise StateError("no active tape")
    return tape.backward(loss, params)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _add(a, b):
    out = a + b
    sa, sb = a.shape, b.shape
    return out, lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))


def _sub(a, b):
    out = a - b
    sa, sb = a.shape, b.shape
    return out, lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb))


def _mul(a, b):
    out = a * b
    return out, lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape))


def _div(a, b):
    out = a / b
    return out, lambda g: (_unbroadcast(g / b, a.shape), _unbroadcast(-g * out / b, b.shape))


def _neg(a):
    return -a, lambda g: (-g,)


def _matmul(a, b):
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[0 if b.ndim == 1 else -2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = np.matmul(a, b)

    def back(g):
        if b.ndim == 1:
            ga = g[..., None] * b
            gb = np.tensordot(a, g, axes=(tuple(range(a.ndim - 1)), tuple(range(g.ndim))))
            return ga, gb
        if a.ndim == 1:
            return g @ b.T if b.ndim == 2 else _unbroadcast(np.matmul(b, g[..., None])[..., 0], a.shape), \
                _unbroadcast(a[:, None] * g[..., None, :], b.shape)
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b, -1, -2)), a.shape)
        if b.ndim == 2:
            gb = a.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = _unbroadcast(np.matmul(np.swapaxes(a, -1, -2), g), b.shape)
        return ga, gb

    return out, back


def _tanh(a):
    y = np.tanh(a)
    return y, lambda g: (g * (1.0 - y * y),)


def _sigmoid(a):
    y = 0.5 * (np.tanh(0.5 * a) + 1.0)
    return y, lambda g: (g * y * (1.0 - y),)


def _relu(a):
    pos = a > 0
    return a * pos, lambda g: (g * pos,)


def _exp(a):
    y = np.exp(a)
    return y, lambda g: (g * y,)


def _log(a):
    return np.log(a), lambda g: (g / a,)


def _sqrt(a):
    y = np.sqrt(a)
    return y, lambda g: (g * 0.5 / y,)


def _pow(a, p):
    y = a ** p
    return y, lambda g: (g * p * a ** (p - 1.0),)


def _clip(a, lo, hi):
    inside = (a >= lo) & (a <= hi)
    return np.clip(a, lo, hi), lambda g: (g * inside,)


def _softmax(a, axis=-1, mask=None):
    if mask is not None:
        a = np.where(mask, a, -np.inf)
    m = np.max(a, axis=axis, keepdims=True)
    e = np.exp(a - m)
    y = e / e.sum(axis=axis, keepdims=True)
    return y, lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),)


def _log_softmax(a, axis=-1):
    m = np.max(a, axis=axis, keepdims=True)
    s = a - m
    lse = np.log(np.exp(s).sum(axis=axis, keepdims=True))
    y = s - lse
    return y, lambda g: (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)


def _sum(a, axis=None, keepdims=False):
    out = np.sum(a, axis=axis, keepdims=keepdims)
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return out, back


def _mean(a, axis=None, keepdims=False):
    out = np.mean(a, axis=axis, keepdims=keepdims)
    shape = a.shape
    n = a.size / max(np.size(out), 1)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, shape).copy(),)

    return out, back


def _reshape(a, shape):
    src = a.shape
    return a.reshape(shape), lambda g: (g.reshape(src),)


def _transpose(a, axes=None):
    out = np.transpose(a, axes)
    inv = None if axes is None else tuple(np.argsort(axes))
    return out, lambda g: (np.transpose(g, inv),)


def _slice(a, key):
    out = a[key]
    shape = a.shape

    def back(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[key] = g
        return (full,)

    return out, back


def _concat(*arrays, axis=-1):
    out = np.concatenate(arrays, axis=axis)
    bounds = np.cumsum([x.shape[axis] for x in arrays])[:-1]
    return out, lambda g: tuple(np.split(g, bounds, axis=axis))


def _stack(*arrays, axis=0):
    out = np.stack(arrays, axis=axis)
    n = len(arrays)
    return out, lambda g: tuple(np.take(g, i, axis=axis) for i in range(n))


def _squared_error(a, b):
    d = a - b
    return d * d, lambda g: (_unbroadcast(2.0 * g * d, a.shape), _unbroadcast(-2.0 * g * d, b.shape))


def _abs_error(a, b):
    d = a - b
    s = np.sign(d)
    return np.abs(d), lambda g: (_unbroadcast(g * s, a.shape), _unbroadcast(-g * s, b.shape))


def _conv1d(x, w, b=None):
    # x: (..., L, C), w: (K, C, C_out); same-length output with symmetric zero padding
    if w.ndim != 3 or x.shape[-1] != w.shape[1]:
        raise ShapeError(f"conv1d: input {x.shape} does not match kernel {w.shape}")
    k, c, c_out = w.shape
    if k % 2 == 0:
        raise ConfigError(f"conv1d: kernel width must be odd, got {k}")
    pad = k // 2
    length = x.shape[-2]
    lead = x.shape[:-2]
    widths = [(0, 0)] * len(lead) + [(pad, pad), (0, 0)]
    xp = np.pad(x, widths)
    cols = np.stack([xp[..., i:i + length, :] for i in range(k)], axis=-2)
    cols = cols.reshape(*lead, length, k * c)
    wf = w.reshape(k * c, c_out)
    out = cols @ wf
    if b is not None:
        out = out + b

    def back(g):
        gw = (cols.reshape(-1, k * c).T @ g.reshape(-1, c_out)).reshape(k, c, c_out)
        gcols = (g @ wf.T).reshape(*lead, length, k, c)
        gxp = np.zeros(xp.shape, dtype=g.dtype)
        for i in range(k):
            gxp[..., i:i + length, :] += gcols[..., i, :]
        gx = gxp[..., pad:pad + length, :]
        if b is None:
            return gx, gw
        return gx, gw, g.reshape(-1, c_out).sum(axis=0)

    return out, back


def _embedding(table, ids):
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding: ids outside [0, {table.shape[0]}) for table {table.shape}")
    out = table[ids]

    def back(g):
        gt = np.zeros_like(table)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return gt, None

    return out, back


def _take(a, idx, axis=0):
    idx = np.asarray(idx)
    out = np.take(a, idx, axis=axis)

    def back(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        return full, None

    return out, back


def _pick(a, idx):
    # a: (..., V), idx: (...) -> a[..., idx]
    idx = np.asarray(idx)[..., None]
    if idx.shape[:-1] != a.shape[:-1]:
        raise ShapeError(f"pick: index shape {idx.shape[:-1]} vs operand {a.shape}")
    out = np.take_along_axis(a, idx, axis=-1)[..., 0]

    def back(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        np.put_along_axis(full, idx, g[..., None], axis=-1)
        return full, None

    return out, back


def _take_along(a, idx, axis=1):
    # idx is a per-row permutation along ``axis`` (e.g. reversal within each length)
    idx = np.asarray(idx)
    expand = idx.reshape(idx.shape + (1,) * (a.ndim - idx.ndim))
    out = np.take_along_axis(a, expand, axis=axis)

    def back(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        np.put_along_axis(full, np.broadcast_to(expand, g.shape), g, axis=axis)
        return full, None

    return out, back


def _where(a, b, mask):
    mask = np.asarray(mask, dtype=bool)
    out = np.where(mask, a, b)
    return out, lambda g: (_unbroadcast(np.where(mask, g, 0.0), a.shape),
                           _unbroadcast(np.where(mask, 0.0, g), b.shape))


def _lstm_cell(zx, hc, wh):
    # zx: (B, 4H) input projection incl. bias; hc: (B, 2H) = [h, c]; wh: (H, 4H)
    n = wh.shape[0]
    if hc.shape[-1] != 2 * n or zx.shape[-1] != 4 * n or wh.shape[1] != 4 * n:
        raise ShapeError(f"lstm_cell: zx {zx.shape}, hc {hc.shape}, wh {wh.shape}")
    h, c = hc[..., :n], hc[..., n:]
    z = zx + h @ wh
    s = 0.5 * (np.tanh(0.5 * z[..., :3 * n]) + 1.0)
    i, f, o = s[..., :n], s[..., n:2 * n], s[..., 2 * n:]
    gg = np.tanh(z[..., 3 * n:])
    c2 = f * c + i * gg
    tc = np.tanh(c2)
    h2 = o * tc
    out = np.concatenate([h2, c2], axis=-1)

    def back(g):
        gh2 = g[..., :n]
        gc2 = g[..., n:] + gh2 * o * (1.0 - tc * tc)
        gz = np.concatenate([gc2 * gg * i * (1.0 - i), gc2 * c * f * (1.0 - f),
                             gh2 * tc * o * (1.0 - o), gc2 * i * (1.0 - gg * gg)], axis=-1)
        gh = gz @ wh.T
        gwh = h.reshape(-1, n).T @ gz.reshape(-1, 4 * n)
        return gz, np.concatenate([gh, gc2 * f], axis=-1), gwh

    return out, back


@dataclass(frozen=True)
class Primitive:
    name: str
    fn: Callable
    n_diff: int | None = None  # number of leading differentiable operands (None: all)


PRIMITIVES: dict[str, Primitive] = {
    p.name: p
    for p in [
        Primitive("add", _add),
        Primitive("sub", _sub),
        Primitive("mul", _mul),
        Primitive("div", _div),
        Primitive("neg", _neg),
        Primitive("matmul", _matmul),
        Primitive("tanh", _tanh),
        Primitive("sigmoid", _sigmoid),
        Primitive("relu", _relu),
        Primitive("exp", _exp),
        Primitive("log", _log),
        Primitive("sqrt", _sqrt),
        Primitive("pow", _pow),
        Primitive("clip", _clip),
        Primitive("softmax", _softmax),
        Primitive("log_softmax", _log_softmax),
        Primitive("sum", _sum),
        Primitive("mean", _mean),
        Primitive("reshape", _reshape),
        Primitive("transpose", _transpose),
        Primitive("slice", _slice),
        Primitive("concat", _concat),
        Primitive("stack", _stack),
        Primitive("squared_error", _squared_error),
        Primitive("abs_error", _abs_error),
        Primitive("conv1d", _conv1d),
        Primitive("embedding", _embedding, n_diff=1),
        Primitive("take", _take, n_diff=1),
        Primitive("pick", _pick, n_diff=1),
        Primitive("take_along", _take_along, n_diff=1),
        Primitive("where", _where, n_diff=2),
        Primitive("lstm_cell", _lstm_cell),
    ]
}


def apply_primitive(op: str, inputs: Sequence, attrs: dict | None = None) -> Tensor:
    """Apply the primitive ``op`` to ``inputs`` and record it if needed.

    Non-differentiable operands (token ids, gather indices) are passed through
    as plain arrays; everything else is coerced to :class:`Tensor`.
    """
    prim = PRIMITIVES.get(op)
    if prim is None:
        raise ConfigError(f"unknown primitive {op!r}")
    n_diff = len(inputs) if prim.n_diff is None else prim.n_diff
    tensors = tuple(as_tensor(x) for x in inputs[:n_diff])
    rest = tuple(inputs[n_diff:])
    arrays = [t.data for t in tensors]
    try:
        out, back = prim.fn(*arrays, *rest, **(attrs or {}))
    except (ValueError, IndexError) as exc:
        if isinstance(exc, ShapeError):
            raise
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"{op}: {exc} (operand shapes {shapes})") from None
    result = Tensor(out)
    tape = _tape_stack[-1] if _tape_stack else None
    if tape is not None and any(t.requires_grad for t in tensors):
        result.requires_grad = True
        result._recorded = True
        tape.record(result, tensors, back)
    return result


# functional spellings used by the layers ----------------------------------


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    return apply_primitive("concat", tuple(tensors), {"axis": axis})


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    return apply_primitive("stack", tuple(tensors), {"axis": axis})


def conv1d(x, w, b=None) -> Tensor:
    return apply_primitive("conv1d", (x, w) if b is None else (x, w, b))


def embedding(table: Tensor, ids) -> Tensor:
    return apply_primitive("embedding", (table, np.asarray(ids)))


def take(x: Tensor, idx, axis: int = 0) -> Tensor:
    return apply_primitive("take", (x, np.asarray(idx)), {"axis": axis})


def pick(x: Tensor, idx) -> Tensor:
    return apply_primitive("pick", (x, np.asarray(idx)))


def take_along(x: Tensor, idx, axis: int = 1) -> Tensor:
    return apply_primitive("take_along", (x, np.asarray(idx)), {"axis": axis})


def where(mask, a, b) -> Tensor:
    """``a`` where ``mask`` is true, else ``b``; the mask is a constant."""
    return apply_primitive("where", (a, b, mask))


def lstm_cell(zx, hc, wh) -> Tensor:
    return apply_primitive("lstm_cell", (zx, hc, wh))


def squared_error(a, b) -> Tensor:
    return apply_primitive("squared_error", (a, b))


def abs_error(a, b) -> Tensor:
    return apply_primitive("abs_error", (a, b))


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradReport:
    """Maximum relative analytic-vs-numeric error per parameter."""

    errors: dict = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_error < tol


def relative_error(a: np.ndarray, n: np.ndarray) -> np.ndarray:
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


@contextmanager
def _numeric_precision(params: Sequence[Tensor], dtype):
    """Temporarily run every new tensor and ``params`` in ``dtype``."""
    global _dtype
    saved_dtype, saved = _dtype, [p.data for p in params]
    _dtype = np.dtype(dtype).type
    for p in params:
        p.data = np.array(p.data, dtype=_dtype)
    try:
        yield
    finally:
        _dtype = saved_dtype
        for p, d in zip(params, saved):
            p.data = d


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
               numeric: str = "float64") -> GradReport:
    """Compare tape gradients of ``f()`` with central finite differences.

    ``f`` must be deterministic; stochastic layers should run frozen. The
    analytic side always uses the current default precision. With
    ``numeric="extended"`` the finite differences are evaluated in
    ``np.longdouble``, which lowers their rounding floor (about
    ``|f| * 1e-16 / eps`` in float64) so that small but genuine gradients can
    be checked at a relative tolerance.
    """
    if eps <= 0:
        raise ConfigError("eps must be positive")
    if numeric not in ("float64", "extended"):
        raise ConfigError(f"numeric precision must be 'float64' or 'extended', got {numeric!r}")
    params = list(params)
    with Tape() as tape:
        loss = f()
        analytic = tape.backward(loss, params)
    report = GradReport()
    dtype = np.longdouble if numeric == "extended" else np.float64
    with _numeric_precision(params, dtype):
        for i, p in enumerate(params):
            name = p.name or f"param{i}"
            if name in report.errors:  # sub-layers reuse short names such as "w" and "b"
                name = f"{name}#{i}"
            a = analytic[p]
            flat = p.data.reshape(-1)
            if not np.shares_memory(flat, p.data):
                raise ContractError(f"{name}: parameter buffer must be contiguous")
            num = np.empty(flat.size, dtype=dtype)
            with no_grad():
                for j in range(flat.size):
                    old = flat[j]
                    flat[j] = old + eps
                    fp = f().data.reshape(-1)[0]
                    flat[j] = old - eps
                    fm = f().data.reshape(-1)[0]
                    flat[j] = old
                    num[j] = (fp - fm) / (2 * dtype(eps))
            num = num.astype(np.float64).reshape(p.shape)
            if not (np.all(np.isfinite(a)) and np.all(np.isfinite(num))):
                raise GradientCheckError(f"non-finite gradient for parameter {name}")
            report.errors[name] = float(relative_error(a, num).max()) if a.size else 0.0
    return report
