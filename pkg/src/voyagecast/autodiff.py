"""Reverse-mode differentiation over dense float64 numpy arrays.

Define-by-run: every operation returns a :class:`DiffNode` that remembers its
parents and a backward rule, so the graph built during a forward pass doubles
as the gradient tape. ``backward`` on a scalar node walks the tape once in
reverse topological order; gradients accumulate additively across fan-out.

The operation set is exactly what the forecasting model needs: matrix
multiply (with leading batch dimensions), broadcast add, concatenation and
slicing on arbitrary axes, embedding gather, ReLU, masked softmax, layer
normalization, inverted dropout, absolute value and sum reductions.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


_GRAD_ENABLED = True


class no_grad:
    """Context manager disabling tape construction (evaluation passes)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class DiffNode:
    """A shaped float64 array with an accumulated gradient slot."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "_done")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[DiffNode, ...] = ()
        self._backward = None
        self._done = False

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = None
        self._done = False

    def accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def __repr__(self):
        return f"DiffNode(shape={self.value.shape}, requires_grad={self.requires_grad})"


def as_node(x) -> DiffNode:
    return x if isinstance(x, DiffNode) else DiffNode(x)


def parameter(value) -> DiffNode:
    return DiffNode(np.array(value, dtype=np.float64), requires_grad=True)


def _tracked(*nodes: DiffNode) -> bool:
    return _GRAD_ENABLED and any(n.requires_grad or n._parents for n in nodes)


def _make(value, parents, backward) -> DiffNode:
    out = DiffNode(value)
    if _tracked(*parents):
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitives


def matmul(a: DiffNode, b: DiffNode) -> DiffNode:
    """Matrix product; either operand may carry leading batch dimensions."""
    a, b = as_node(a), as_node(b)
    if a.value.ndim < 2 or b.value.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.value.shape[-1] != b.value.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    value = a.value @ b.value

    def backward(g):
        if a.requires_grad or a._parents:
            a.accumulate(_unbroadcast(g @ np.swapaxes(b.value, -1, -2), a.shape))
        if b.requires_grad or b._parents:
            b.accumulate(_unbroadcast(np.swapaxes(a.value, -1, -2) @ g, b.shape))

    return _make(value, (a, b), backward)


def add(a: DiffNode, b: DiffNode) -> DiffNode:
    """Elementwise sum with numpy broadcasting (covers bias add)."""
    a, b = as_node(a), as_node(b)
    try:
        value = a.value + b.value
    except ValueError as e:
        raise ShapeError(f"add cannot broadcast {a.shape} + {b.shape}") from e

    def backward(g):
        if a.requires_grad or a._parents:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad or b._parents:
            b.accumulate(_unbroadcast(g, b.shape))

    return _make(value, (a, b), backward)


def sub(a: DiffNode, b: DiffNode) -> DiffNode:
    a, b = as_node(a), as_node(b)
    try:
        value = a.value - b.value
    except ValueError as e:
        raise ShapeError(f"sub cannot broadcast {a.shape} - {b.shape}") from e

    def backward(g):
        if a.requires_grad or a._parents:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad or b._parents:
            b.accumulate(_unbroadcast(-g, b.shape))

    return _make(value, (a, b), backward)


def mul(a: DiffNode, b: DiffNode) -> DiffNode:
    """Elementwise (Hadamard) product with broadcasting."""
    a, b = as_node(a), as_node(b)
    try:
        value = a.value * b.value
    except ValueError as e:
        raise ShapeError(f"mul cannot broadcast {a.shape} * {b.shape}") from e

    def backward(g):
        if a.requires_grad or a._parents:
            a.accumulate(_unbroadcast(g * b.value, a.shape))
        if b.requires_grad or b._parents:
            b.accumulate(_unbroadcast(g * a.value, b.shape))

    return _make(value, (a, b), backward)


def scale(a: DiffNode, c: float) -> DiffNode:
    a = as_node(a)
    c = float(c)
    return _make(a.value * c, (a,), lambda g: a.accumulate(g * c))


def relu(a: DiffNode) -> DiffNode:
    """max(x, 0); gradient passes only where the input is strictly positive."""
    a = as_node(a)
    mask = a.value > 0.0
    return _make(np.where(mask, a.value, 0.0), (a,), lambda g: a.accumulate(g * mask))


def abs_(a: DiffNode) -> DiffNode:
    a = as_node(a)
    return _make(np.abs(a.value), (a,), lambda g: a.accumulate(g * np.sign(a.value)))


def concat_lastdim(nodes) -> DiffNode:
    """Concatenate along the last axis."""
    nodes = [as_node(n) for n in nodes]
    if not nodes:
        raise ShapeError("concat_lastdim of an empty sequence")
    lead = nodes[0].value.shape[:-1]
    for n in nodes:
        if n.value.shape[:-1] != lead:
            raise ShapeError(
                f"concat_lastdim leading shapes differ: {[n.shape for n in nodes]}"
            )
    value = np.concatenate([n.value for n in nodes], axis=-1)
    widths = [n.value.shape[-1] for n in nodes]
    offsets = np.cumsum([0] + widths)

    def backward(g):
        for n, lo, hi in zip(nodes, offsets[:-1], offsets[1:]):
            if n.requires_grad or n._parents:
                n.accumulate(g[..., lo:hi])

    return _make(value, tuple(nodes), backward)


def narrow(a: DiffNode, axis: int, start: int, length: int) -> DiffNode:
    """Contiguous slice of ``length`` entries along ``axis``."""
    a = as_node(a)
    dim = a.value.shape[axis]
    if start < 0 or start + length > dim:
        raise ShapeError(f"narrow [{start}:{start + length}) out of range for dim {dim}")
    index = [slice(None)] * a.value.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def backward(g):
        full = np.zeros_like(a.value)
        full[index] = g
        a.accumulate(full)

    return _make(a.value[index].copy(), (a,), backward)


def reshape(a: DiffNode, shape) -> DiffNode:
    a = as_node(a)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.value.size:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}")
    orig = a.value.shape
    return _make(a.value.reshape(shape), (a,), lambda g: a.accumulate(g.reshape(orig)))


def transpose_last2(a: DiffNode) -> DiffNode:
    """Swap the last two axes."""
    a = as_node(a)
    if a.value.ndim < 2:
        raise ShapeError(f"transpose_last2 needs >=2-d input, got {a.shape}")
    return _make(
        np.swapaxes(a.value, -1, -2).copy(),
        (a,),
        lambda g: a.accumulate(np.swapaxes(g, -1, -2)),
    )


def embedding_lookup(table: DiffNode, indices) -> DiffNode:
    """Gather rows of a [V, d] table; gradient scatters rows back."""
    table = as_node(table)
    if table.value.ndim != 2:
        raise ShapeError(f"embedding table must be 2-d, got {table.shape}")
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ShapeError(f"embedding indices must be integers, got dtype {idx.dtype}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.value.shape[0]):
        raise ShapeError(
            f"embedding index out of range [0, {table.value.shape[0]}): "
            f"min={idx.min()}, max={idx.max()}"
        )
    value = table.value[idx]

    def backward(g):
        acc = np.zeros_like(table.value)
        np.add.at(acc, idx.ravel(), g.reshape(-1, table.value.shape[1]))
        table.accumulate(acc)

    return _make(value, (table,), backward)


def masked_softmax(scores: DiffNode, mask: np.ndarray) -> DiffNode:
    """Row softmax over the last axis with disallowed entries exactly zero.

    ``mask`` is boolean, broadcastable to the score shape; every row must
    keep at least one allowed entry. Rows are stabilized by subtracting the
    max over allowed entries.
    """
    scores = as_node(scores)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), scores.value.shape)
    if not mask.any(axis=-1).all():
        raise ShapeError("masked_softmax: some row masks out every entry")
    shifted = np.where(mask, scores.value, -np.inf)
    shifted = shifted - shifted.max(axis=-1, keepdims=True)
    expd = np.where(mask, np.exp(shifted), 0.0)
    value = expd / expd.sum(axis=-1, keepdims=True)

    def backward(g):
        inner = (g * value).sum(axis=-1, keepdims=True)
        scores.accumulate(value * (g - inner))

    return _make(value, (scores,), backward)


def layer_norm(x: DiffNode, gain: DiffNode, bias: DiffNode, eps: float = 1e-5) -> DiffNode:
    """Per-row normalization over the last axis (population variance)."""
    x, gain, bias = as_node(x), as_node(gain), as_node(bias)
    d = x.value.shape[-1]
    if d < 2:
        raise ShapeError(f"layer_norm needs feature dim >= 2, got {d}")
    if gain.value.shape != (d,) or bias.value.shape != (d,):
        raise ShapeError(
            f"layer_norm gain/bias must be ({d},), got {gain.shape}/{bias.shape}"
        )
    mean = x.value.mean(axis=-1, keepdims=True)
    var = x.value.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.value - mean) * inv
    value = xhat * gain.value + bias.value

    def backward(g):
        if gain.requires_grad or gain._parents:
            gain.accumulate((g * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad or bias._parents:
            bias.accumulate(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad or x._parents:
            gh = g * gain.value
            x.accumulate(
                inv
                * (
                    gh
                    - gh.mean(axis=-1, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
                )
            )

    return _make(value, (x, gain, bias), backward)


def dropout(x: DiffNode, p: float, mode: str, rng: "Rng | None" = None) -> DiffNode:
    """Inverted dropout: identity in eval mode, 1/(1-p) rescaling in train."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout rate must satisfy 0 <= p < 1, got {p}")
    if mode not in ("train", "eval"):
        raise ConfigError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    x = as_node(x)
    if mode == "eval" or p == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in train mode needs an Rng")
    keep = (rng.uniform(x.value.shape) >= p) / (1.0 - p)
    return mul(x, DiffNode(keep))


def sum_(a: DiffNode, axis: int | None = None) -> DiffNode:
    a = as_node(a)
    if axis is None:
        value = a.value.sum()

        def backward(g):
            a.accumulate(np.full_like(a.value, float(g)))

    else:
        value = a.value.sum(axis=axis)

        def backward(g):
            a.accumulate(np.expand_dims(g, axis) * np.ones_like(a.value))

    return _make(value, (a,), backward)


def mean_(a: DiffNode) -> DiffNode:
    a = as_node(a)
    return scale(sum_(a), 1.0 / a.value.size)


# ---------------------------------------------------------------------------
# tape traversal


def backward(loss: DiffNode) -> None:
    """Populate gradients of every tape ancestor of a scalar loss node."""
    if loss.value.ndim != 0 and loss.value.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._done:
        raise TapeError("backward already ran on this node; rebuild the tape first")
    if loss._backward is None and not loss.requires_grad:
        raise TapeError("loss node is not attached to a tape (built under no_grad?)")

    order: list[DiffNode] = []
    seen: set[int] = set()
    stack: list[tuple[DiffNode, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    loss._done = True


# ---------------------------------------------------------------------------
# counter-based randomness


class Rng:
    """Counter-based random stream: the same (seed, counter) pair always
    yields the same draw, independent of anything drawn before it."""

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed)
        self.counter = int(counter)

    def uniform(self, shape) -> np.ndarray:
        out = np.random.default_rng([self.seed, self.counter]).random(shape)
        self.counter += 1
        return out

    def state(self) -> tuple[int, int]:
        return (self.seed, self.counter)
