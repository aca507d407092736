"""Dense float64 tensors with tape-based reverse-mode automatic differentiation.

Every differentiable operation returns a new Tensor that remembers its parent
tensors and a closure computing the local vector-Jacobian product.  Calling
``backward`` on a scalar walks that record in reverse topological order and
accumulates gradients onto the leaf tensors (the ones created with
``requires_grad=True``).  The graph is an ordinary object graph: it is freed
by garbage collection as soon as the loss goes out of scope, and repeated
backward calls on a still-alive loss add into the existing leaf gradients.

Storage is float64 row-major throughout; the few kilobytes of extra precision
are far cheaper than chasing float32 drift in gradient checks.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class DegenerateMaskError(ValueError):
    """A softmax row (or attention query) has no unmasked entry left."""


class NonFiniteGradientError(RuntimeError):
    """A gradient buffer contains NaN or Inf; the optimizer step was aborted."""


class Tensor:
    """An n-dimensional float64 array plus an optional gradient record.

    ``data`` is the value, ``grad`` (same shape, lazily allocated) collects
    accumulated gradients for leaves.  Intermediate results carry the tape
    closure in ``_backward`` and their parents in ``_prev``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._backward = None
        self._prev = ()

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
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # arithmetic sugar; the module-level functions do the real work
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(data) -> Tensor:
    """A leaf tensor that the optimizer may update."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, prev, backward_fn) -> Tensor:
    """Wrap an op result; record the tape edge only if a parent needs it."""
    out = Tensor(data)
    if any(p.requires_grad for p in prev):
        out.requires_grad = True
        out._prev = tuple(prev)
        out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# Elementwise and structural operations
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        ),
    )


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.data.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def back(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        ge = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(ge, a.data.shape).copy(),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), back)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        count = a.data.shape[axis]

    def back(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.data.shape).copy(),)
        ge = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(ge / count, a.data.shape).copy(),)

    return _make(a.data.mean(axis=axis, keepdims=keepdims), (a,), back)


def gelu(a: Tensor) -> Tensor:
    """Gaussian-error linear unit, exact erf form."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / np.sqrt(2.0)))
    out = x * cdf

    def back(g):
        pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
        return (g * (cdf + x * pdf),)

    return _make(out, (a,), back)


def dropout(a: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when p == 0.  Only call while training."""
    if p <= 0.0:
        return a
    keep = (rng.random(a.data.shape) >= p) / (1.0 - p)
    return mul(a, Tensor(keep))


# ---------------------------------------------------------------------------
# Contractions and normalizations
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Batched matrix product: (.., n, k) @ (.., k, m) -> (.., n, m).

    Leading extents broadcast; the two trailing ones contract.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents disagree: {a.shape} x {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul batch extents disagree: {a.shape} x {b.shape}") from None

    def back(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape)
        return ga, gb

    return _make(a.data @ b.data, (a, b), back)


def softmax_lastdim(a: Tensor) -> Tensor:
    """Softmax over the last axis, max-subtracted for stability.

    Entries of -inf receive weight exactly 0; a row that is entirely -inf has
    no well-defined distribution and raises DegenerateMaskError.
    """
    x = a.data
    if x.shape[-1] < 1:
        raise ShapeError("softmax_lastdim needs a non-empty last axis")
    mx = np.max(x, axis=-1, keepdims=True)
    if np.any(np.isneginf(mx)):
        raise DegenerateMaskError("softmax row with every entry masked to -inf")
    e = np.exp(x - mx)
    s = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        inner = (g * s).sum(axis=-1, keepdims=True)
        return (s * (g - inner),)

    return _make(s, (a,), back)


def layernorm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each last-axis slice to mean 0 / variance 1, then affine.

    Constant slices normalize to 0 (the epsilon keeps the division finite),
    so their output is just the bias.
    """
    gain, bias = _as_tensor(gain), _as_tensor(bias)
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layernorm affine shapes {gain.shape}/{bias.shape} do not match last extent {d}"
        )
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    out = xhat * gain.data + bias.data

    def back(g):
        reduce_axes = tuple(range(x.ndim - 1))
        ggain = (g * xhat).sum(axis=reduce_axes)
        gbias = g.sum(axis=reduce_axes)
        gxhat = g * gain.data
        gx = inv * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, ggain, gbias

    return _make(out, (a, gain, bias), back)


def conv1d(x, kernels, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation along the last axis.

    ``x`` is (C_in, W) or batched (B, C_in, W); ``kernels`` is
    (C_out, C_in, K).  Output width is floor((W + 2*padding - K)/stride) + 1.
    """
    x, kernels = _as_tensor(x), _as_tensor(kernels)
    squeeze = x.ndim == 2
    if x.ndim not in (2, 3) or kernels.ndim != 3:
        raise ShapeError(f"conv1d operand ranks: input {x.shape}, kernels {kernels.shape}")
    c_out, c_in, k = kernels.shape
    xin = x.data[None] if squeeze else x.data
    b, c, w = xin.shape
    if c != c_in:
        raise ShapeError(f"conv1d channel mismatch: input {x.shape} vs kernels {kernels.shape}")
    if w + 2 * padding < k:
        raise ShapeError(
            f"conv1d kernel width {k} exceeds padded input width {w + 2 * padding}"
        )
    xp = np.pad(xin, ((0, 0), (0, 0), (padding, padding)))
    # (B, C_in, W_padded - K + 1, K) windows, subsampled by stride
    patches = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)[:, :, ::stride, :]
    out = np.einsum("bcwk,ock->bow", patches, kernels.data, optimize=True)
    w_out = out.shape[-1]

    def back(g):
        if squeeze:
            g = g[None]
        gk = np.einsum("bow,bcwk->ock", g, patches, optimize=True)
        gpatch = np.einsum("bow,ock->bcwk", g, kernels.data, optimize=True)
        gxp = np.zeros_like(xp)
        for kk in range(k):
            gxp[:, :, kk : kk + stride * w_out : stride] += gpatch[:, :, :, kk]
        gx = gxp[:, :, padding : padding + w] if padding else gxp
        return (gx[0] if squeeze else gx), gk

    return _make(out[0] if squeeze else out, (x, kernels), back)


# ---------------------------------------------------------------------------
# Reverse pass
# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every reachable leaf of a scalar loss.

    Gradients add into existing buffers, so two backward calls double them;
    the optimizer's ``zero_grad`` is the reset point.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor with requires_grad=True")

    # iterative post-order DFS; recursion would overflow on deep tapes
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._prev:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    flow: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = flow.pop(id(node), None)
        if g is None:
            continue
        if node._backward is not None:
            for p, pg in zip(node._prev, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                if id(p) in flow:
                    flow[id(p)] = flow[id(p)] + pg
                else:
                    flow[id(p)] = pg
        else:
            node.grad = np.array(g) if node.grad is None else node.grad + g


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


class Adam:
    """Adam with bias correction over a named parameter collection.

    Moments are kept per parameter name; ``t`` counts completed steps.  A
    non-finite gradient aborts the step before anything mutates and names
    the offending parameter.
    """

    def __init__(self, params, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.t = 0

    def step(self, lr: float) -> None:
        if lr <= 0.0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        for name, p in self.params.items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NonFiniteGradientError(f"non-finite gradient for parameter '{name}'")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else 0.0
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
