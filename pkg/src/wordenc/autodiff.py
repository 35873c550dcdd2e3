"""Reverse-mode automatic differentiation over dense numpy arrays.

A small tape-based kernel: every operation records its input tensors and a
backward closure on the output, and ``Tensor.backward()`` walks the recorded
graph in reverse topological order, accumulating gradients into the leaves.

Arrays are row-major numpy ndarrays.  float32 is the working precision for
training and inference; float64 is used when checking gradients against
central differences (see ``wordenc.gradcheck``).

Every operation here has a matching backward rule.  The set is deliberately
closed: matrix multiply, broadcasting add/multiply, scalar affine, embedding
lookup, valid 1-d convolution, max-over-time pooling, ReLU, GELU, sigmoid,
tanh, layer normalization, softmax, dropout, concatenation, softmax
cross-entropy, mean squared error, plus the shape plumbing (reshape,
transpose) the encoder needs.
"""

from __future__ import annotations

import numpy as np

# tanh-approximation GELU constant, sqrt(2/pi)
GELU_COEFF = 0.7978845608028654
GELU_CUBIC = 0.044715

# Additive attention-mask bias.  Large but finite so masked scores underflow
# to an exact 0.0 after softmax while never producing inf/nan.
MASK_BIAS = -1.0e30


class Tensor:
    """A dense array plus the bookkeeping for reverse-mode differentiation."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.name = name
        self._parents = tuple(_parents)
        self._backward = _backward
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in self._parents)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Backpropagate from a scalar tensor through the recorded graph."""
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar tensor, got shape {self.data.shape}")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"


def constant(data, dtype=None) -> Tensor:
    """Wrap an array as a non-differentiable tensor."""
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=False)


def parameter(data, name=None) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True, name=name)


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to the shape that was broadcast up in forward."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """np.matmul with broadcasting over leading axes; both inputs ndim >= 2."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError("matmul expects tensors with ndim >= 2")
    out = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))

    return Tensor(out, _parents=(a, b), _backward=backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Broadcasting add; covers bias add and residual connections."""
    out = a.data + b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.data.shape))

    return Tensor(out, _parents=(a, b), _backward=backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Broadcasting elementwise (Hadamard) product."""
    out = a.data * b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return Tensor(out, _parents=(a, b), _backward=backward)


def scale(x: Tensor, alpha: float) -> Tensor:
    alpha = float(alpha)

    def backward(g):
        _accumulate(x, g * alpha)

    return Tensor(x.data * alpha, _parents=(x,), _backward=backward)


def add_scalar(x: Tensor, c: float) -> Tensor:
    def backward(g):
        _accumulate(x, g)

    return Tensor(x.data + float(c), _parents=(x,), _backward=backward)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def backward(g):
        _accumulate(x, g.reshape(x.data.shape))

    return Tensor(x.data.reshape(shape), _parents=(x,), _backward=backward)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        _accumulate(x, g.transpose(inverse))

    return Tensor(x.data.transpose(axes), _parents=(x,), _backward=backward)


def concat(tensors, axis: int) -> Tensor:
    tensors = tuple(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accumulate(t, piece)

    return Tensor(out, _parents=tensors, _backward=backward)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows table[ids]; gradient scatter-adds into the table.

    ``ids`` is a plain integer ndarray of any shape; output shape is
    ids.shape + table.shape[1:].  Also used to select rows of activations
    (masked positions, first-piece positions, [CLS] slots).
    """
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise IndexError(
            f"embedding id out of range [0, {table.data.shape[0]}): "
            f"min={ids.min()}, max={ids.max()}"
        )
    out = table.data[ids]

    def backward(g):
        if table.requires_grad:
            gt = np.zeros_like(table.data)
            np.add.at(gt, ids, g)
            _accumulate(table, gt)

    return Tensor(out, _parents=(table,), _backward=backward)


# ---------------------------------------------------------------------------
# convolution and pooling
# ---------------------------------------------------------------------------


def conv1d_valid(seq: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Valid-mode 1-d convolution.

    seq (..., T, Cin), weight (Cout, w, Cin), bias (Cout,) ->
    out (..., T-w+1, Cout) with out[..., t, c] =
    bias[c] + sum_{i<w, j<Cin} seq[..., t+i, j] * weight[c, i, j].
    """
    if seq.data.ndim < 2:
        raise ValueError("conv1d_valid expects seq with ndim >= 2")
    cout, w, cin = weight.data.shape
    t_len = seq.data.shape[-2]
    if w < 1:
        raise ValueError("filter width must be >= 1")
    if t_len < w:
        raise ValueError(f"sequence length {t_len} shorter than filter width {w}")
    if seq.data.shape[-1] != cin:
        raise ValueError(f"channel mismatch: seq has {seq.data.shape[-1]}, weight wants {cin}")

    t_out = t_len - w + 1
    lead = seq.data.shape[:-2]
    # windows[..., t, j, i] = seq[..., t+i, j]  ->  reorder to (..., t, i, j)
    windows = np.lib.stride_tricks.sliding_window_view(seq.data, w, axis=-2)
    win2d = np.ascontiguousarray(windows.swapaxes(-1, -2)).reshape(-1, w * cin)
    wflat = weight.data.reshape(cout, w * cin)
    out = (win2d @ wflat.T).reshape(lead + (t_out, cout)) + bias.data

    def backward(g):
        g2d = g.reshape(-1, cout)
        if weight.requires_grad:
            _accumulate(weight, (g2d.T @ win2d).reshape(cout, w, cin))
        if bias.requires_grad:
            _accumulate(bias, g2d.sum(axis=0))
        if seq.requires_grad:
            gwin = (g2d @ wflat).reshape(lead + (t_out, w, cin))
            gseq = np.zeros_like(seq.data)
            for i in range(w):
                gseq[..., i : i + t_out, :] += gwin[..., :, i, :]
            _accumulate(seq, gseq)

    return Tensor(out, _parents=(seq, weight, bias), _backward=backward)


def max_over_time(x: Tensor) -> Tensor:
    """Per-channel max across positions: (..., T, C) -> (..., C).

    Backward routes the gradient to exactly one argmax position per channel;
    np.argmax picks the first occurrence, so ties send gradient to the
    earliest row.
    """
    if x.data.ndim < 2:
        raise ValueError("max_over_time expects ndim >= 2")
    if x.data.shape[-2] < 1:
        raise ValueError("max_over_time needs at least one position")
    idx = np.argmax(x.data, axis=-2)
    out = np.take_along_axis(x.data, idx[..., None, :], axis=-2).squeeze(-2)

    def backward(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            np.put_along_axis(gx, idx[..., None, :], g[..., None, :], axis=-2)
            _accumulate(x, gx)

    return Tensor(out, _parents=(x,), _backward=backward)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0.0).astype(x.data.dtype, copy=False)

    def backward(g):
        _accumulate(x, g * mask)

    return Tensor(out, _parents=(x,), _backward=backward)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation: 0.5*x*(1 + tanh(c*(x + 0.044715*x^3)))."""
    xd = x.data
    inner = GELU_COEFF * (xd + GELU_CUBIC * xd**3)
    t = np.tanh(inner)
    out = 0.5 * xd * (1.0 + t)

    def backward(g):
        sech2 = 1.0 - t * t
        dinner = GELU_COEFF * (1.0 + 3.0 * GELU_CUBIC * xd * xd)
        _accumulate(x, g * (0.5 * (1.0 + t) + 0.5 * xd * sech2 * dinner))

    return Tensor(out, _parents=(x,), _backward=backward)


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    # split by sign so exp never overflows
    pos = xd >= 0
    z = np.exp(np.where(pos, -xd, xd))
    s = np.where(pos, 1.0 / (1.0 + z), z / (1.0 + z))

    def backward(g):
        _accumulate(x, g * s * (1.0 - s))

    return Tensor(s, _parents=(x,), _backward=backward)


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)

    def backward(g):
        _accumulate(x, g * (1.0 - t * t))

    return Tensor(t, _parents=(x,), _backward=backward)


# ---------------------------------------------------------------------------
# normalization, softmax, dropout
# ---------------------------------------------------------------------------


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float) -> Tensor:
    """Normalize the last axis with 1/d (biased) variance, then scale+shift."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gamma.data * xhat + beta.data

    def backward(g):
        if gamma.requires_grad:
            _accumulate(gamma, _unbroadcast(g * xhat, gamma.data.shape))
        if beta.requires_grad:
            _accumulate(beta, _unbroadcast(g, beta.data.shape))
        if x.requires_grad:
            dxhat = g * gamma.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            _accumulate(x, inv * (dxhat - m1 - xhat * m2))

    return Tensor(out, _parents=(x, gamma, beta), _backward=backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    p = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if x.requires_grad:
            _accumulate(x, p * (g - (g * p).sum(axis=axis, keepdims=True)))

    return Tensor(p, _parents=(x,), _backward=backward)


def dropout(x: Tensor, rate: float, rng=None, train: bool = False) -> Tensor:
    """Inverted dropout: scales kept units by 1/(1-rate) at train time.

    rate 0 or eval mode returns the input tensor unchanged (exact identity).
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0 or not train:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs an rng")
    keep = (rng.random(x.data.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)

    def backward(g):
        _accumulate(x, g * keep)

    return Tensor(x.data * keep, _parents=(x,), _backward=backward)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def softmax_cross_entropy(logits: Tensor, targets, reduction: str = "mean") -> Tensor:
    """Cross-entropy of softmax(logits) against integer targets.

    logits (..., K), targets integer array of shape logits.shape[:-1]
    (a scalar for a single K-vector).  Computed with max-subtraction for
    stability; gradient is softmax(logits) - onehot(targets), scaled by the
    reduction.
    """
    targets = np.asarray(targets)
    k = logits.data.shape[-1]
    if targets.shape != logits.data.shape[:-1]:
        raise ValueError(f"target shape {targets.shape} != logit batch shape {logits.data.shape[:-1]}")
    if targets.size and (targets.min() < 0 or targets.max() >= k):
        raise IndexError(f"target out of range [0, {k})")
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduction!r}")

    m = logits.data.max(axis=-1, keepdims=True)
    e = np.exp(logits.data - m)
    denom = e.sum(axis=-1, keepdims=True)
    lse = np.log(denom) + m
    picked = np.take_along_axis(logits.data, targets[..., None], axis=-1)
    losses = (lse - picked).squeeze(-1)
    n = max(losses.size, 1)
    total = losses.sum()
    out = total / n if reduction == "mean" else total

    def backward(g):
        if logits.requires_grad:
            p = e / denom
            np.subtract.at(p, (*np.indices(targets.shape), targets), 1.0)
            w = g / n if reduction == "mean" else g
            _accumulate(logits, p * w)

    return Tensor(np.asarray(out, dtype=logits.data.dtype), _parents=(logits,), _backward=backward)


def mse_loss(pred: Tensor, target, reduction: str = "mean") -> Tensor:
    """Mean (or sum of) squared error against a constant target array."""
    target = np.asarray(target, dtype=pred.data.dtype)
    if target.shape != pred.data.shape:
        raise ValueError(f"target shape {target.shape} != prediction shape {pred.data.shape}")
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduction!r}")
    diff = pred.data - target
    n = max(diff.size, 1)
    total = (diff * diff).sum()
    out = total / n if reduction == "mean" else total

    def backward(g):
        w = 2.0 / n if reduction == "mean" else 2.0
        _accumulate(pred, g * w * diff)

    return Tensor(np.asarray(out, dtype=pred.data.dtype), _parents=(pred,), _backward=backward)
