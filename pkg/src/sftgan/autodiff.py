"""Minimal dense-tensor engine with reverse-mode gradients.

Every op records its parents and a backward closure on the output tensor.
Node ids come from one monotonically increasing counter, so sorting the
reachable nodes by id gives a valid topological order; backward walks them
in strictly decreasing id order.

Only the ops the super-resolution models need are provided. Broadcasting is
restricted to the second operand of ``add``/``mul`` expanding size-1 axes
into the first operand's shape (per-channel bias, per-map FiLM scalars,
per-pixel blend weights).
"""

from __future__ import annotations

import contextlib
import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

_node_ids = itertools.count()
_dtype = np.float32
_grad_enabled = True


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class NondeterministicError(RuntimeError):
    pass


@contextlib.contextmanager
def double_precision():
    """Create every tensor in float64 inside the block."""
    global _dtype
    prev, _dtype = _dtype, np.float64
    try:
        yield
    finally:
        _dtype = prev


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def default_dtype():
    return _dtype


class Tensor:
    def __init__(self, data, requires_grad: bool = False, *, _parents=(), _backward=None, _op: str = "leaf"):
        arr = np.asarray(data, dtype=_dtype)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite values produced by {_op}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node_id = next(_node_ids)
        self._parents = _parents
        self._backward = _backward
        self.op = _op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        """Populate ``.grad`` on every reachable grad-requiring leaf."""
        for leaf, g in _run_backward(self).items():
            leaf.grad = g

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _lift(other, self))

    def __radd__(self, other):
        return add(self, _lift(other, self))

    def __sub__(self, other):
        return add(self, neg(_lift(other, self)))

    def __rsub__(self, other):
        return add(neg(self), _lift(other, self))

    def __mul__(self, other):
        return mul(self, _lift(other, self))

    def __rmul__(self, other):
        return mul(self, _lift(other, self))

    def __neg__(self):
        return neg(self)


def _lift(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.full((1,) * like.data.ndim, value))


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    track = _grad_enabled and any(p.requires_grad for p in parents)
    if track:
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward, _op=op)
    return Tensor(data, _op=op)


# ---------------------------------------------------------------------------
# elementwise


def _check_broadcast(a: Tensor, b: Tensor, kind: str) -> None:
    if a.shape == b.shape:
        return
    ok = a.data.ndim == b.data.ndim and all(db in (1, da) for da, db in zip(a.shape, b.shape))
    if not ok:
        raise ShapeError(f"{kind}: cannot combine shapes {a.shape} and {b.shape}")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")

    def backward(g):
        return g, _reduce_to(g, b.shape)

    return _make(a.data + b.data, (a, b), backward, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")

    def backward(g):
        return g * b.data, _reduce_to(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), backward, "mul")


def ew_binary(a: Tensor, b: Tensor, kind: str) -> Tensor:
    if kind == "add":
        return add(a, b)
    if kind == "mul":
        return mul(a, b)
    raise ValueError(f"unknown elementwise op {kind!r}")


def neg(x: Tensor) -> Tensor:
    return _make(-x.data, (x,), lambda g: (-g,), "neg")


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    if not 0.0 <= slope < 1.0:
        raise ValueError(f"leaky slope must lie in [0, 1), got {slope}")
    pos = x.data >= 0
    scale = np.where(pos, 1.0, slope).astype(x.data.dtype)

    return _make(x.data * scale, (x,), lambda g: (g * scale,), "leaky_relu")


def sigmoid(x: Tensor) -> Tensor:
    z = np.exp(-np.abs(x.data))
    s = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))

    return _make(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def log_softmax(x: Tensor, axis: int = 1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    soft = np.exp(out)

    def backward(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), backward, "log_softmax")


def sigmoid_softmax(x: Tensor, kind: str) -> Tensor:
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "log_softmax":
        return log_softmax(x, axis=1)
    raise ValueError(f"unknown kind {kind!r}")


def log(x: Tensor) -> Tensor:
    if (x.data <= 0).any():
        raise ValueError("log of non-positive value; clamp first")
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)
    return _make(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "clamp")


# ---------------------------------------------------------------------------
# reductions and reshaping


def sum_all(x: Tensor) -> Tensor:
    return _make(x.data.sum(), (x,), lambda g: (np.broadcast_to(g.reshape(()), x.shape).copy(),), "sum")


def mean(x: Tensor) -> Tensor:
    n = x.size

    def backward(g):
        return (np.full(x.shape, g.reshape(()) / n, dtype=x.data.dtype),)

    return _make(x.data.mean(), (x,), backward, "mean")


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel spatial average of an NCHW tensor, keeping 1x1 spatial axes."""
    n, c, h, w = x.shape

    def backward(g):
        return (np.broadcast_to(g / (h * w), x.shape).copy(),)

    return _make(x.data.mean(axis=(2, 3), keepdims=True), (x,), backward, "global_avg_pool")


def reduce(x: Tensor, kind: str) -> Tensor:
    if x.size == 0:
        raise ShapeError("cannot reduce an empty tensor")
    if kind == "sum":
        return sum_all(x)
    if kind == "mean":
        return mean(x)
    if kind == "global_avg_pool":
        return global_avg_pool(x)
    raise ValueError(f"unknown reduction {kind!r}")


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    bounds = np.cumsum([0] + [x.shape[axis] for x in xs])

    def backward(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _make(np.concatenate([x.data for x in xs], axis=axis), xs, backward, "concat")


def take_channels(x: Tensor, start: int, stop: int) -> Tensor:
    def backward(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        return (full,)

    return _make(x.data[:, start:stop], (x,), backward, "take_channels")


def nearest_upsample(x: Tensor, factor: int) -> Tensor:
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    if factor == 1:
        return _make(x.data.copy(), (x,), lambda g: (g,), "nearest_upsample")
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def backward(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return _make(out, (x,), backward, "nearest_upsample")


# ---------------------------------------------------------------------------
# convolution


def _conv1x1(x: Tensor, weight: Tensor, bias: Tensor | None) -> Tensor:
    # Per-pixel arithmetic is identical everywhere: one scaled add per input
    # channel, so equal inputs at two pixels give bit-identical outputs.
    w = weight.data[:, :, 0, 0]
    out = np.zeros((x.shape[0], w.shape[0]) + x.shape[2:], dtype=np.result_type(x.data, w))
    for c in range(w.shape[1]):
        out += w[None, :, c, None, None] * x.data[:, c : c + 1]
    if bias is not None:
        out += bias.data[None, :, None, None]

    def backward(g):
        n, o, h, wd = g.shape
        g3 = g.reshape(n, o, h * wd)
        gx = (w.T @ g3).reshape(x.shape)
        gw = np.tensordot(g3, x.data.reshape(n, -1, h * wd), axes=([0, 2], [0, 2]))[:, :, None, None]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, backward, "conv2d")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of an NCHW input with an OIHW kernel."""
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if c != ci:
        raise ShapeError(f"conv2d: input has {c} channels, weight expects {ci} (shapes {x.shape}, {weight.shape})")
    if stride < 1 or pad < 0:
        raise ValueError(f"conv2d: need stride >= 1 and pad >= 0, got stride={stride} pad={pad}")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d: non-positive output extent for input {x.shape} and kernel {weight.shape}")
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {o} output channels")
    if kh == kw == 1 and stride == 1 and pad == 0:
        return _conv1x1(x, weight, bias)

    # Columns are laid out channel-major, (c*kh*kw, n*ho*wo), and filled one
    # kernel tap at a time in row-major tap order.
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    xpt = xp.transpose(1, 0, 2, 3)
    hspan, wspan = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    cols = np.empty((c, kh, kw, n, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xpt[:, :, i : i + hspan : stride, j : j + wspan : stride]
    cols = cols.reshape(c * kh * kw, n * ho * wo)
    wmat = weight.data.reshape(o, -1)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(o, n, ho, wo).transpose(1, 0, 2, 3)

    def backward(g):
        gt = g.transpose(1, 0, 2, 3).reshape(o, n * ho * wo)
        gw = (gt @ cols.T).reshape(weight.shape)
        gcols = (wmat.T @ gt).reshape(c, kh, kw, n, ho, wo)
        gxpt = np.zeros((c, n) + xp.shape[2:], dtype=gcols.dtype)
        for i in range(kh):
            for j in range(kw):
                gxpt[:, :, i : i + hspan : stride, j : j + wspan : stride] += gcols[:, i, j]
        gx = gxpt.transpose(1, 0, 2, 3)
        if pad:
            gx = gx[:, :, pad : pad + h, pad : pad + w]
        grads = [np.ascontiguousarray(gx), gw]
        if bias is not None:
            grads.append(gt.sum(axis=1))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(np.ascontiguousarray(out), parents, backward, "conv2d")


# ---------------------------------------------------------------------------
# backward pass


def backward_order(loss: Tensor) -> list[Tensor]:
    """Grad-requiring nodes reachable from ``loss``, newest first."""
    nodes: dict[int, Tensor] = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if t.node_id in nodes or not t.requires_grad:
            continue
        nodes[t.node_id] = t
        stack.extend(t._parents)
    return [nodes[nid] for nid in sorted(nodes, reverse=True)]


def _run_backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    leaves: dict[Tensor, np.ndarray] = {}
    for t in backward_order(loss):
        g = grads.pop(t.node_id, None)
        if g is None:
            continue
        if t._backward is None:
            leaves[t] = g
            continue
        for parent, pg in zip(t._parents, t._backward(g)):
            if not parent.requires_grad:
                continue
            if parent.node_id in grads:
                grads[parent.node_id] = grads[parent.node_id] + pg
            else:
                grads[parent.node_id] = pg
    return leaves


def grad(loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of a scalar ``loss`` w.r.t. each of ``params``.

    Parameters the loss does not depend on get zeros of their own shape.
    """
    leaves = _run_backward(loss)
    return [leaves[p] if p in leaves else np.zeros_like(p.data) for p in params]


def backward(loss: Tensor, params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    names = list(params)
    return dict(zip(names, grad(loss, [params[k] for k in names])))


# ---------------------------------------------------------------------------
# finite-difference verification


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tol: float
    passed: bool
    checked: dict[str, int] = field(default_factory=dict)
    skipped: dict[str, int] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)


def relative_error(analytic, numeric, abs_floor: float) -> np.ndarray:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), abs_floor)


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor] | Sequence[Tensor],
    eps: float = 1e-6,
    tol: float = 1e-3,
    *,
    max_coords: int = 16,
    abs_floor: float = 1e-7,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients of ``f()`` against central differences.

    ``f`` must rebuild its graph from the current contents of ``params`` on
    every call. Both routes run in float64; the parameters are cast for the
    duration of the check and restored afterwards. Tensors larger than
    ``max_coords`` are checked on a seeded random subset of coordinates.
    Coordinates sitting on a non-differentiable point are skipped and
    counted in ``skipped``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    named = dict(params) if isinstance(params, Mapping) else {f"p{i}": p for i, p in enumerate(params)}
    originals = {k: p.data for k, p in named.items()}
    rng = np.random.default_rng(seed)
    errors: dict[str, float] = {}
    checked: dict[str, int] = {}
    skipped: dict[str, int] = {}
    try:
        for p in named.values():
            p.data = p.data.astype(np.float64)
        with double_precision():
            first, second = f(), f()
            if first.data.tobytes() != second.data.tobytes():
                raise NondeterministicError("two identical forward passes disagree")
            f0 = first.item()
            analytic = grad(first, list(named.values()))
            for (name, p), g in zip(named.items(), analytic):
                flat = p.data.reshape(-1)
                if flat.size <= max_coords:
                    coords = np.arange(flat.size)
                else:
                    coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
                errs = []
                for idx in coords:
                    numeric = _central_difference(f, flat, idx, f0, eps, tol, abs_floor)
                    if numeric is not None:
                        errs.append(float(relative_error(g.reshape(-1)[idx], numeric, abs_floor)))
                errors[name] = max(errs, default=0.0)
                checked[name] = len(errs)
                skipped[name] = len(coords) - len(errs)
    finally:
        for k, p in named.items():
            p.data = originals[k]
    passed = all(e <= tol for e in errors.values())
    return GradCheckReport(errors=errors, tol=tol, passed=passed, checked=checked, skipped=skipped)


def _central_difference(f, flat, idx, f0, eps, tol, abs_floor, retries: int = 2):
    """Central difference at one coordinate, or None if it sits on a kink.

    A kink shows up as disagreeing one-sided differences; the step is shrunk
    up to ``retries`` times before the coordinate is given up on. Away from
    kinks both one-sided estimates agree, so a wrong analytic gradient is
    still caught.
    """
    keep = flat[idx]
    try:
        for _ in range(retries + 1):
            flat[idx] = keep + eps
            fp = f().item()
            flat[idx] = keep - eps
            fm = f().item()
            flat[idx] = keep
            fwd, bwd = (fp - f0) / eps, (f0 - fm) / eps
            if relative_error(fwd, bwd, abs_floor) <= tol:
                return (fp - fm) / (2 * eps)
            eps /= 10
    finally:
        flat[idx] = keep
    return None


def parameters_checksum(params: Iterable[Tensor]) -> str:
    import hashlib

    h = hashlib.sha256()
    for p in params:
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()
