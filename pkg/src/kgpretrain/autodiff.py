"""Dense-tensor engine with reverse-mode automatic differentiation.

Design notes:
  - Eager define-by-run. Each primitive records a tape node (inputs,
    vector-Jacobian closure) on its output; ``Tape.from_output`` collects
    the nodes in topological order and ``backward`` walks them once in
    reverse, accumulating into ``Tensor.grad``.
  - Two precisions: float32 for training, float64 for verification.
    ``using_dtype("float64")`` switches the default; gradient checks are
    only meaningful in 64-bit.
  - Broadcasting is limited to trailing-dimension bias addition (``add``
    with a 1-D right operand) plus non-differentiable constants
    (``add_const``). Everything else requires exact shapes; mismatches
    raise ShapeError naming both shapes.
  - GeLU is the exact erf formulation, not the tanh approximation.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np
from scipy.special import erf

from .errors import NumericError, ShapeError

_DTYPES = {"float32": np.float32, "float64": np.float64}
_default_dtype = np.float32
_grad_enabled = True


def set_default_dtype(name: str) -> None:
    global _default_dtype
    if name not in _DTYPES:
        raise ValueError(f"unknown dtype {name!r}; expected one of {sorted(_DTYPES)}")
    _default_dtype = _DTYPES[name]


def default_dtype() -> type:
    return _default_dtype


@contextmanager
def using_dtype(name: str):
    global _default_dtype
    prev = _default_dtype
    set_default_dtype(name)
    try:
        yield
    finally:
        _default_dtype = prev


@contextmanager
def no_grad():
    """Disable tape recording (inference, finite-difference evaluations)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A dense float array plus optional gradient and tape linkage."""

    __slots__ = ("data", "grad", "requires_grad", "node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype if dtype is not None else _default_dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node: _Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"


class _Node:
    __slots__ = ("out", "inputs", "vjp", "name")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...], vjp, name: str):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp  # vjp(g) accumulates into the inputs' .grad
        self.name = name


def _make(out_data, inputs: tuple[Tensor, ...], vjp, name: str) -> Tensor:
    out = Tensor(out_data, dtype=out_data.dtype)
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = _Node(out, inputs, vjp, name)
    return out


class Tape:
    """Topologically ordered record of the primitive ops below an output."""

    def __init__(self, nodes: list[_Node]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, out: Tensor) -> "Tape":
        nodes: list[_Node] = []
        seen: set[int] = set()
        # iterative post-order DFS so deep graphs don't hit the recursion limit
        stack: list[tuple[Tensor, bool]] = [(out, False)]
        while stack:
            t, expanded = stack.pop()
            if t.node is None or id(t.node) in seen:
                continue
            if expanded:
                seen.add(id(t.node))
                nodes.append(t.node)
            else:
                stack.append((t, True))
                for parent in t.node.inputs:
                    if parent.node is not None and id(parent.node) not in seen:
                        stack.append((parent, False))
        return cls(nodes)

    def backward(self, out: Tensor, seed: np.ndarray | None = None) -> None:
        if seed is None:
            seed = np.ones_like(out.data)
        out.accumulate_grad(seed)
        for node in reversed(self.nodes):
            g = node.out.grad
            if g is None:
                continue
            node.vjp(g)

    def reachable(self) -> set[int]:
        """ids of every tensor that participates in this tape (for flow checks)."""
        ids: set[int] = set()
        for node in self.nodes:
            ids.add(id(node.out))
            for t in node.inputs:
                ids.add(id(t))
        return ids


def backward(out: Tensor) -> None:
    """Reverse pass from a scalar (or any) output, accumulating leaf grads."""
    Tape.from_output(out).backward(out)


def reaches(out: Tensor, param: Tensor) -> bool:
    """True if the tape below ``out`` contains a path from ``param``."""
    return id(param) in Tape.from_output(out).reachable()


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def _swap_last(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {ad.shape} x {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {ad.shape} x {bd.shape}")
    weight_case = bd.ndim == 2 and ad.ndim > 2
    if not weight_case and ad.shape[:-2] != bd.shape[:-2]:
        raise ShapeError(f"matmul batch dims differ: {ad.shape} x {bd.shape}")
    out_data = ad @ bd

    def vjp(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g @ _swap_last(bd))
        if b.requires_grad:
            if weight_case:
                k, n = bd.shape
                b.accumulate_grad(ad.reshape(-1, k).T @ g.reshape(-1, n))
            else:
                b.accumulate_grad(_swap_last(ad) @ g)

    return _make(out_data, (a, b), vjp, "matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    bias_case = bd.ndim == 1 and ad.ndim >= 1 and ad.shape[-1:] == bd.shape and ad.shape != bd.shape
    if not bias_case and ad.shape != bd.shape:
        raise ShapeError(f"add shapes differ: {ad.shape} + {bd.shape}")
    out_data = ad + bd

    def vjp(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            if bias_case:
                b.accumulate_grad(g.reshape(-1, bd.shape[0]).sum(axis=0))
            else:
                b.accumulate_grad(g)

    return _make(out_data, (a, b), vjp, "add")


def add_const(a: Tensor, c: np.ndarray) -> Tensor:
    """Add a non-differentiable constant; the constant may broadcast."""
    out_data = a.data + c

    def vjp(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g if g.shape == a.data.shape else _unbroadcast(g, a.data.shape))

    return _make(out_data, (a,), vjp, "add_const")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if g.shape[ax] != n:
            g = g.sum(axis=ax, keepdims=True)
    return g


def mul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if ad.shape != bd.shape:
        raise ShapeError(f"mul shapes differ: {ad.shape} * {bd.shape}")
    out_data = ad * bd

    def vjp(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g * bd)
        if b.requires_grad:
            b.accumulate_grad(g * ad)

    return _make(out_data, (a, b), vjp, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    out_data = a.data * a.data.dtype.type(c)

    def vjp(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g * a.data.dtype.type(c))

    return _make(out_data, (a,), vjp, "scale")


def sum_all(a: Tensor) -> Tensor:
    out_data = np.asarray(a.data.sum(), dtype=a.data.dtype)

    def vjp(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(np.broadcast_to(g, a.data.shape).copy())

    return _make(out_data, (a,), vjp, "sum_all")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def vjp(g: np.ndarray) -> None:
        if a.requires_grad:
            inner = (g * s).sum(axis=axis, keepdims=True)
            a.accumulate_grad(s * (g - inner))

    return _make(s, (a,), vjp, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise ShapeError(f"layer_norm affine shapes {gamma.data.shape}/{beta.data.shape} vs feature dim ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)  # biased, standard for LN
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = xhat * gamma.data + beta.data

    def vjp(g: np.ndarray) -> None:
        if gamma.requires_grad:
            gamma.accumulate_grad((g * xhat).reshape(-1, d).sum(axis=0))
        if beta.requires_grad:
            beta.accumulate_grad(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gx = g * gamma.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            x.accumulate_grad(inv * (gx - m1 - xhat * m2))

    return _make(out_data, (x, gamma, beta), vjp, "layer_norm")


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _INV_SQRT2))
    out_data = (xd * cdf).astype(xd.dtype)

    def vjp(g: np.ndarray) -> None:
        if x.requires_grad:
            pdf = np.exp(-0.5 * xd * xd) * _INV_SQRT2PI
            x.accumulate_grad(g * (cdf + xd * pdf))

    return _make(out_data, (x,), vjp, "gelu")


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    out_data = np.where(xd >= 0, 1.0 / (1.0 + np.exp(-xd)), np.exp(xd) / (1.0 + np.exp(xd))).astype(xd.dtype)

    def vjp(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(g * out_data * (1.0 - out_data))

    return _make(out_data, (x,), vjp, "sigmoid")


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of ``table`` along axis 0; also used to pick out token
    positions from flattened activations."""
    idx = np.asarray(ids)
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise ShapeError(f"lookup index out of range for table {table.data.shape}")
    out_data = table.data[idx]

    def vjp(g: np.ndarray) -> None:
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, idx, g)

    return _make(out_data, (table,), vjp, "embedding_lookup")


def cross_entropy_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-softmax at the target class; logits (N, V), targets (N,)."""
    ld = logits.data
    t = np.asarray(targets)
    if ld.ndim != 2 or t.shape != (ld.shape[0],):
        raise ShapeError(f"cross_entropy: logits {ld.shape} vs targets {t.shape}")
    if t.shape[0] == 0:
        raise ShapeError("cross_entropy: empty batch")
    shifted = ld - ld.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1)) + ld.max(axis=1)
    out_data = np.asarray((lse - ld[np.arange(t.shape[0]), t]).mean(), dtype=ld.dtype)

    def vjp(g: np.ndarray) -> None:
        if logits.requires_grad:
            sm = np.exp(shifted)
            sm /= sm.sum(axis=1, keepdims=True)
            sm[np.arange(t.shape[0]), t] -= 1.0
            logits.accumulate_grad(g * sm / t.shape[0])

    return _make(out_data, (logits,), vjp, "cross_entropy_with_logits")


def binary_cross_entropy(probs: Tensor, labels: np.ndarray) -> Tensor:
    """Mean BCE between probabilities in (0,1) and 0/1 labels."""
    p = probs.data
    y = np.asarray(labels, dtype=p.dtype)
    if p.shape != y.shape:
        raise ShapeError(f"binary_cross_entropy: probs {p.shape} vs labels {y.shape}")
    if p.size == 0:
        raise ShapeError("binary_cross_entropy: empty batch")
    tiny = 1e-7 if p.dtype == np.float32 else 1e-12
    pc = np.clip(p, tiny, 1.0 - tiny)
    out_data = np.asarray(-(y * np.log(pc) + (1.0 - y) * np.log1p(-pc)).mean(), dtype=p.dtype)

    def vjp(g: np.ndarray) -> None:
        if probs.requires_grad:
            probs.accumulate_grad(g * (pc - y) / (pc * (1.0 - pc)) / p.size)

    return _make(out_data, (probs,), vjp, "binary_cross_entropy")


def dropout(x: Tensor, p: float, seed: int) -> Tensor:
    """Inverted dropout with an explicit seed; p = 0 is the identity."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability {p} outside [0, 1)")
    if p == 0.0:
        return x
    keep = (np.random.default_rng(seed).random(x.data.shape) >= p).astype(x.data.dtype)
    mask = keep / x.data.dtype.type(1.0 - p)
    out_data = x.data * mask

    def vjp(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(g * mask)

    return _make(out_data, (x,), vjp, "dropout")


def transpose(x: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    out_data = np.transpose(x.data, axes)
    inv = None if axes is None else tuple(np.argsort(axes))

    def vjp(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(np.transpose(g, inv))

    return _make(out_data, (x,), vjp, "transpose")


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out_data = x.data.reshape(shape)

    def vjp(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(g.reshape(x.data.shape))

    return _make(out_data, (x,), vjp, "reshape")


def slice_(x: Tensor, key) -> Tensor:
    """Basic (non-fancy) slicing; gradient scatters back into place."""
    out_data = x.data[key]

    def vjp(g: np.ndarray) -> None:
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[key] = g
            x.accumulate_grad(full)

    return _make(np.array(out_data, copy=True), (x,), vjp, "slice")


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------


def grad_check(f, params: list[Tensor], eps: float = 1e-4, floor: float = 1e-3) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` re-evaluates the scalar loss from the current parameter values;
    it must be deterministic (dropout off) and should run in float64.
    The relative error denominator is floored at ``floor`` so elements
    with near-zero gradients are judged on the absolute scale where
    finite differences bottom out.
    """
    for p in params:
        p.zero_grad()
    out = f()
    if out.data.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    backward(out)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    max_rel = 0.0
    with no_grad():
        for p, an in zip(params, analytic):
            flat = p.data.reshape(-1)
            an_flat = an.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                f_plus = float(f().data)
                flat[i] = orig - eps
                f_minus = float(f().data)
                flat[i] = orig
                if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                    raise NumericError("non-finite loss during gradient check")
                num = (f_plus - f_minus) / (2.0 * eps)
                a = float(an_flat[i])
                rel = abs(a - num) / max(abs(a), abs(num), floor)
                if rel > max_rel:
                    max_rel = rel
    return max_rel
