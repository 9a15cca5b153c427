"""Reverse-mode tensor engine: numpy-backed tape, ops, L1 objective, Adam, finite differences."""

from __future__ import annotations

import threading
import warnings

import numpy as np

DEFAULT_DTYPE = np.float32


class Tensor:
    """A dense row-major value, optionally tracked for gradients.

    grad, when populated, always has the same shape and dtype as data.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"


class _TapeStack(threading.local):
    def __init__(self):
        self.stack: list["Tape"] = []


_TAPES = _TapeStack()


class Tape:
    """Ordered operation record for one forward pass; inputs always precede their consumers."""

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], callable]] = []

    def __enter__(self) -> "Tape":
        _TAPES.stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        assert _TAPES.stack and _TAPES.stack[-1] is self
        _TAPES.stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def clear(self):
        self.nodes.clear()


def _active_tape():
    stack = _TAPES.stack
    return stack[-1] if stack else None


def _record(out: Tensor, inputs: tuple[Tensor, ...], vjp) -> Tensor:
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape = _active_tape()
        if tape is not None:
            tape.nodes.append((out, inputs, vjp))
    return out


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else DEFAULT_DTYPE
    return Tensor(np.asarray(x, dtype=dtype))


def _check_extents(op: str, *tensors: Tensor):
    for t in tensors:
        if 0 in t.data.shape:
            raise ValueError(f"{op}: zero-extent axis in operand of shape {t.data.shape}")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] > 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# forward ops


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, like=a)
    _check_extents("matmul", a, b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError(f"matmul: operands must be at least 2-d, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner extents disagree for shapes {a.shape} and {b.shape}")
    out = Tensor(np.matmul(a.data, b.data))

    def vjp(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), vjp)


def batch_matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, like=a)
    if a.data.ndim < 3 and b.data.ndim < 3:
        raise ValueError(f"batch_matmul: expected a batched operand, got {a.shape} and {b.shape}")
    return matmul(a, b)


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    _check_extents("add", a, b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ValueError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from None
    out = Tensor(data)

    def vjp(g):
        ga = _unbroadcast(g, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g, b.shape) if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    _check_extents("mul", a, b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ValueError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from None
    out = Tensor(data)

    def vjp(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    return add(a, mul(b, -1.0))


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ValueError("concat: empty input list")
    _check_extents("concat", *ts)
    nd = ts[0].data.ndim
    for t in ts[1:]:
        if t.data.ndim != nd:
            raise ValueError(f"concat: rank mismatch between {ts[0].shape} and {t.shape}")
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ValueError(f"concat: incompatible shapes {[t.shape for t in ts]} along axis {axis}") from None
    out = Tensor(data)
    sizes = [t.data.shape[axis] for t in ts]

    def vjp(g):
        pieces = np.split(g, np.cumsum(sizes)[:-1], axis=axis)
        return tuple(p if t.requires_grad else None for p, t in zip(pieces, ts))

    return _record(out, tuple(ts), vjp)


def relu(x) -> Tensor:
    x = _as_tensor(x)
    _check_extents("relu", x)
    out = Tensor(np.maximum(x.data, 0))

    def vjp(g):
        return ((g * (x.data > 0)).astype(x.data.dtype),)

    return _record(out, (x,), vjp)


def softmax(x, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    _check_extents("softmax", x)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)
    out = Tensor(y)

    def vjp(g):
        dot = np.sum(g * y, axis=axis, keepdims=True)
        return (y * (g - dot),)

    return _record(out, (x,), vjp)


def layer_norm(x, axis: int = -1, eps: float = 1e-5) -> Tensor:
    x = _as_tensor(x)
    _check_extents("layer_norm", x)
    mu = np.mean(x.data, axis=axis, keepdims=True)
    var = np.var(x.data, axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor(xhat.astype(x.data.dtype))

    def vjp(g):
        gm = np.mean(g, axis=axis, keepdims=True)
        gx = np.mean(g * xhat, axis=axis, keepdims=True)
        return ((inv * (g - gm - xhat * gx)).astype(x.data.dtype),)

    return _record(out, (x,), vjp)


def max_over_axis(x, axis: int) -> Tensor:
    x = _as_tensor(x)
    _check_extents("max_over_axis", x)
    out = Tensor(np.max(x.data, axis=axis))
    idx = np.argmax(x.data, axis=axis)

    def vjp(g):
        gi = np.zeros_like(x.data)
        np.put_along_axis(gi, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis)
        return (gi,)

    return _record(out, (x,), vjp)


def mean_over_axis(x, axis: int | None = None) -> Tensor:
    x = _as_tensor(x)
    _check_extents("mean_over_axis", x)
    out = Tensor(np.mean(x.data, axis=axis))

    def vjp(g):
        if axis is None:
            return (np.full_like(x.data, 1.0 / x.data.size) * g,)
        count = x.data.shape[axis]
        return (np.broadcast_to(np.expand_dims(g, axis), x.data.shape) / count,)

    return _record(out, (x,), vjp)


def slice_axis(x, axis: int, start: int, stop: int) -> Tensor:
    x = _as_tensor(x)
    _check_extents("slice", x)
    n = x.data.shape[axis]
    if not (0 <= start < stop <= n):
        raise ValueError(f"slice: range [{start}:{stop}) invalid for extent {n} on axis {axis}")
    sl = [slice(None)] * x.data.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)
    out = Tensor(x.data[sl].copy())

    def vjp(g):
        gi = np.zeros_like(x.data)
        gi[sl] = g
        return (gi,)

    return _record(out, (x,), vjp)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    _check_extents("reshape", x)
    shape = tuple(shape)
    out = Tensor(x.data.reshape(shape))

    def vjp(g):
        return (g.reshape(x.data.shape),)

    return _record(out, (x,), vjp)


def transpose(x, axes) -> Tensor:
    x = _as_tensor(x)
    _check_extents("transpose", x)
    axes = tuple(axes)
    out = Tensor(np.transpose(x.data, axes))
    inverse = np.argsort(axes)

    def vjp(g):
        return (np.transpose(g, inverse),)

    return _record(out, (x,), vjp)


_OPS = {
    "matmul": matmul,
    "batch_matmul": batch_matmul,
    "add": add,
    "mul": mul,
    "concat": concat,
    "relu": relu,
    "softmax": softmax,
    "layer_norm": layer_norm,
    "max_over_axis": max_over_axis,
    "mean_over_axis": mean_over_axis,
    "slice": slice_axis,
    "reshape": reshape,
    "transpose": transpose,
}


def forward_op(kind: str, inputs, **kwargs) -> Tensor:
    """Dispatch a recorded op by name; see _OPS for the supported kinds."""
    if kind not in _OPS:
        raise ValueError(f"unknown op kind '{kind}'")
    fn = _OPS[kind]
    if kind == "concat":
        return fn(inputs, **kwargs)
    return fn(*inputs, **kwargs)


def l1_loss(pred, target) -> Tensor:
    """Mean absolute difference over every element; subgradient at 0 is 0."""
    pred, target = _as_tensor(pred), _as_tensor(target, like=pred)
    if pred.shape != target.shape:
        raise ValueError(f"l1_loss: shapes {pred.shape} and {target.shape} differ")
    _check_extents("l1_loss", pred)
    diff = pred.data - target.data
    out = Tensor(np.mean(np.abs(diff)))
    n = diff.size

    def vjp(g):
        s = np.sign(diff) * (g / n)
        gp = s.astype(pred.data.dtype) if pred.requires_grad else None
        gt = (-s).astype(target.data.dtype) if target.requires_grad else None
        return gp, gt

    return _record(out, (pred, target), vjp)


# ---------------------------------------------------------------------------
# backward sweep


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate .grad on every requires_grad tensor reachable on the tape.

    Tensors recorded on the tape but not contributing to the loss get zero grads.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    produced = any(out is loss for out, _, _ in tape.nodes)
    tracked: list[Tensor] = []
    seen = set()
    for out, inputs, _ in tape.nodes:
        for t in (out, *inputs):
            if t.requires_grad and id(t) not in seen:
                seen.add(id(t))
                tracked.append(t)
    if not produced:
        warnings.warn("backward: loss is not a tape output; graph is detached, grads set to zero")
        for t in tracked:
            t.grad = np.zeros_like(t.data)
        if loss.requires_grad:
            loss.grad = np.ones_like(loss.data)
        return

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for out, inputs, vjp in reversed(tape.nodes):
        g = grads.get(id(out))
        if g is None:
            continue
        for t, gi in zip(inputs, vjp(g)):
            if gi is None or not t.requires_grad:
                continue
            acc = grads.get(id(t))
            grads[id(t)] = gi if acc is None else acc + gi
    for t in tracked:
        g = grads.get(id(t))
        t.grad = np.zeros_like(t.data) if g is None else g.astype(t.data.dtype, copy=False).reshape(t.data.shape)


# ---------------------------------------------------------------------------
# optimizer


class OptimizerState:
    """Adam moments keyed by parameter name, plus the shared step counter."""

    def __init__(self, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: OptimizerState) -> None:
    """One bias-corrected Adam update, in place on params."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"adam_step: non-finite gradient for parameter '{name}'")
        if g.shape != p.data.shape:
            raise ValueError(f"adam_step: gradient shape {g.shape} mismatches parameter '{name}' {p.data.shape}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.m[name] = m
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def collect_grads(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


# ---------------------------------------------------------------------------
# verification oracle


def finite_difference_check(f, x: Tensor, h: float = 1e-5, max_coords: int | None = None, rng=None) -> float:
    """Max relative error between backprop and central differences, in float64.

    f must be a pure scalar-valued function of x. When max_coords is given, a
    random coordinate subset is probed instead of every entry.
    """
    x64 = Tensor(x.data.astype(np.float64), requires_grad=True)
    with Tape() as tape:
        out = f(x64)
        if out.data.size != 1:
            raise ValueError("finite_difference_check: f must be scalar-valued")
        backward(tape, out)
    analytic = x64.grad.reshape(-1).copy()
    flat = x64.data.reshape(-1)
    n = flat.size
    if max_coords is not None and n > max_coords:
        if rng is None:
            rng = np.random.default_rng(0)
        coords = rng.choice(n, size=max_coords, replace=False)
    else:
        coords = range(n)
    worst = 0.0
    for i in coords:
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(Tensor(x64.data, requires_grad=False)).data)
        flat[i] = orig - h
        fm = float(f(Tensor(x64.data, requires_grad=False)).data)
        flat[i] = orig
        fd = (fp - fm) / (2.0 * h)
        rel = abs(analytic[i] - fd) / (abs(analytic[i]) + 1e-8)
        if rel > worst:
            worst = rel
    return worst
