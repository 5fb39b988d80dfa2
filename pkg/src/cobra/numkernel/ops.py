"""Differentiable primitives over 2-D float64 tensors.

Every op computes its forward value with numpy and records a closure that maps
the output gradient to one gradient per input (None where not needed).
"""

import contextlib
import contextvars
import math
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import erf

from ..errors import ConfigError, DegenerateMaskError, DimensionError, UsageError
from .tensor import Tensor, as_tensor, record_op

_madd_counter: contextvars.ContextVar[Optional[List[int]]] = contextvars.ContextVar(
    "cobra_attention_madds", default=None
)


@contextlib.contextmanager
def count_attention_madds() -> Iterator[List[int]]:
    """Count multiply-adds spent on attention scores (q·kᵀ) inside the block.

    Yields a one-element list whose value is updated in place.
    """
    counter = [0]
    token = _madd_counter.set(counter)
    try:
        yield counter
    finally:
        _madd_counter.reset(token)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -----------------------------------------------------------------------------
# Elementwise
# -----------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record_op(a.data + b.data, (a, b), grad_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return record_op(a.data - b.data, (a, b), grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def grad_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return record_op(a.data * b.data, (a, b), grad_fn)


def scale(a: Tensor, factor: float) -> Tensor:
    def grad_fn(g):
        return (g * factor,)

    return record_op(a.data * factor, (a,), grad_fn)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def swish(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)

    def grad_fn(g):
        return (g * (s + x.data * s * (1.0 - s)),)

    return record_op(x.data * s, (x,), grad_fn)


def gelu(x: Tensor) -> Tensor:
    cdf = 0.5 * (1.0 + erf(x.data / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x.data**2) / math.sqrt(2.0 * math.pi)

    def grad_fn(g):
        return (g * (cdf + x.data * pdf),)

    return record_op(x.data * cdf, (x,), grad_fn)


def glu(x: Tensor) -> Tensor:
    """Gated linear unit over the last axis: first half * sigmoid(second half)."""
    if x.shape[-1] % 2:
        raise DimensionError(f"glu needs an even last dimension, got shape {x.shape}")
    half = x.shape[-1] // 2
    a, b = x.data[..., :half], x.data[..., half:]
    s = _sigmoid(b)

    def grad_fn(g):
        return (np.concatenate([g * s, g * a * s * (1.0 - s)], axis=-1),)

    return record_op(a * s, (x,), grad_fn)


# -----------------------------------------------------------------------------
# Linear algebra and reductions
# -----------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")

    def grad_fn(g):
        return g @ b.data.T, a.data.T @ g

    return record_op(a.data @ b.data, (a, b), grad_fn)


def sum_all(a: Tensor) -> Tensor:
    def grad_fn(g):
        return (np.broadcast_to(g, a.shape).copy(),)

    return record_op(np.sum(a.data), (a,), grad_fn)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size

    def grad_fn(g):
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return record_op(np.mean(a.data), (a,), grad_fn)


def mean_of(tensors: Sequence[Tensor]) -> Tensor:
    """Elementwise mean over a non-empty set of equally shaped tensors."""
    if not tensors:
        raise UsageError("mean_of needs at least one tensor")
    shape = tensors[0].shape
    for t in tensors:
        if t.shape != shape:
            raise DimensionError(f"mean_of shape mismatch: {shape} vs {t.shape}")
    n = len(tensors)
    data = tensors[0].data.copy()
    for t in tensors[1:]:
        data = data + t.data
    data = data / n

    def grad_fn(g):
        return tuple(g / n for _ in tensors)

    return record_op(data, tuple(tensors), grad_fn)


# -----------------------------------------------------------------------------
# Softmax family and normalization
# -----------------------------------------------------------------------------


def _softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_rows(x: Tensor) -> Tensor:
    p = _softmax(x.data)

    def grad_fn(g):
        return (p * (g - np.sum(g * p, axis=-1, keepdims=True)),)

    return record_op(p, (x,), grad_fn)


def log_softmax_rows(x: Tensor) -> Tensor:
    shifted = x.data - np.max(x.data, axis=-1, keepdims=True)
    out = shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
    p = np.exp(out)

    def grad_fn(g):
        return (g - p * np.sum(g, axis=-1, keepdims=True),)

    return record_op(out, (x,), grad_fn)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered**2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    n = x.shape[-1]

    def grad_fn(g):
        g_xhat = g * gain.data
        grad_x = inv_std * (
            g_xhat
            - g_xhat.mean(axis=-1, keepdims=True)
            - xhat * (g_xhat * xhat).sum(axis=-1, keepdims=True) / n
        )
        grad_gain = (g * xhat).reshape(-1, n).sum(axis=0)
        grad_bias = g.reshape(-1, n).sum(axis=0)
        return grad_x, grad_gain, grad_bias

    return record_op(xhat * gain.data + bias.data, (x, gain, bias), grad_fn)


def depthwise_conv1d(x: Tensor, kernel: Tensor) -> Tensor:
    """Per-channel 1-D cross-correlation with zero 'same' padding.

    x is T×D, kernel is K×D with K odd; out[t, d] = Σ_k x[t + k - K//2, d]·kernel[k, d].
    """
    k_len, channels = kernel.shape
    if k_len % 2 == 0:
        raise ConfigError(f"depthwise_conv1d needs an odd kernel length, got {k_len}")
    if x.shape[1] != channels:
        raise DimensionError(f"depthwise_conv1d channel mismatch: {x.shape} vs kernel {kernel.shape}")
    steps = x.shape[0]
    pad = k_len // 2
    padded = np.pad(x.data, ((pad, pad), (0, 0)))
    out = np.zeros_like(x.data)
    for k in range(k_len):
        out += padded[k : k + steps] * kernel.data[k]

    def grad_fn(g):
        grad_padded = np.zeros_like(padded)
        grad_kernel = np.zeros_like(kernel.data)
        for k in range(k_len):
            grad_padded[k : k + steps] += g * kernel.data[k]
            grad_kernel[k] = np.sum(g * padded[k : k + steps], axis=0)
        return grad_padded[pad : pad + steps], grad_kernel

    return record_op(out, (x, kernel), grad_fn)


# -----------------------------------------------------------------------------
# Attention
# -----------------------------------------------------------------------------


def scaled_dot_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    mask: Optional[np.ndarray] = None,
    heads: int = 1,
) -> Tuple[Tensor, Tensor]:
    """Multi-head softmax(q·kᵀ/√d_head)·v.

    `mask` is boolean T_q×T_k with True marking entries that must not be
    attended. Returns the output and the head-averaged weight matrix; the
    weights are a plain (non-differentiable) tensor kept for rollout.
    """
    t_q, dim = q.shape
    t_k = k.shape[0]
    if k.shape[1] != dim or v.shape != (t_k, dim):
        raise DimensionError(f"attention shape mismatch: q {q.shape}, k {k.shape}, v {v.shape}")
    if dim % heads:
        raise DimensionError(f"model dim {dim} is not divisible by {heads} heads")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (t_q, t_k):
            raise DimensionError(f"mask shape {mask.shape} does not match scores ({t_q}, {t_k})")
        if np.any(mask.all(axis=1)):
            raise DegenerateMaskError("attention mask hides every key for at least one query")

    counter = _madd_counter.get()
    if counter is not None:
        counter[0] += t_q * t_k * dim

    head_dim = dim // heads
    factor = 1.0 / math.sqrt(head_dim)
    q_h = q.data.reshape(t_q, heads, head_dim).transpose(1, 0, 2)
    k_h = k.data.reshape(t_k, heads, head_dim).transpose(1, 0, 2)
    v_h = v.data.reshape(t_k, heads, head_dim).transpose(1, 0, 2)
    scores = (q_h @ k_h.transpose(0, 2, 1)) * factor
    if mask is not None:
        scores = np.where(mask[np.newaxis], -np.inf, scores)
    weights = _softmax(scores)
    out = (weights @ v_h).transpose(1, 0, 2).reshape(t_q, dim)

    def grad_fn(g):
        g_h = g.reshape(t_q, heads, head_dim).transpose(1, 0, 2)
        g_weights = g_h @ v_h.transpose(0, 2, 1)
        g_scores = weights * (g_weights - np.sum(g_weights * weights, axis=-1, keepdims=True))
        g_q = (g_scores @ k_h) * factor
        g_k = (g_scores.transpose(0, 2, 1) @ q_h) * factor
        g_v = weights.transpose(0, 2, 1) @ g_h

        def merge(t, n):
            return t.transpose(1, 0, 2).reshape(n, dim)

        return merge(g_q, t_q), merge(g_k, t_k), merge(g_v, t_k)

    out_t = record_op(out, (q, k, v), grad_fn)
    return out_t, Tensor(weights.mean(axis=0))


# -----------------------------------------------------------------------------
# Frame-axis structure
# -----------------------------------------------------------------------------


def concat_frames(tensors: Sequence[Tensor]) -> Tensor:
    """[a ∥ b ∥ ...] along the frame (first) axis."""
    widths = {t.shape[1] for t in tensors}
    if len(widths) != 1:
        raise DimensionError(f"concat_frames needs a shared width, got {[t.shape for t in tensors]}")
    bounds = np.cumsum([0] + [t.shape[0] for t in tensors])

    def grad_fn(g):
        return tuple(g[bounds[i] : bounds[i + 1]] for i in range(len(tensors)))

    return record_op(np.concatenate([t.data for t in tensors], axis=0), tuple(tensors), grad_fn)


def slice_frames(x: Tensor, start: int, stop: int) -> Tensor:
    def grad_fn(g):
        full = np.zeros_like(x.data)
        full[start:stop] = g
        return (full,)

    return record_op(x.data[start:stop], (x,), grad_fn)


def split_frames(x: Tensor, sizes: Sequence[int]) -> List[Tensor]:
    if sum(sizes) != x.shape[0]:
        raise DimensionError(f"split sizes {list(sizes)} do not cover {x.shape[0]} frames")
    parts, start = [], 0
    for size in sizes:
        parts.append(slice_frames(x, start, start + size))
        start += size
    return parts


def embedding(table: Tensor, ids: Sequence[int]) -> Tensor:
    index = np.asarray(ids, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= table.shape[0]):
        raise UsageError(f"embedding ids out of range for table of {table.shape[0]} rows")

    def grad_fn(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, index, g)
        return (grad,)

    return record_op(table.data[index], (table,), grad_fn)


def dropout(x: Tensor, p: float, rng: np.random.Generator, training: bool) -> Tensor:
    if not training or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)

    def grad_fn(g):
        return (g * keep,)

    return record_op(x.data * keep, (x,), grad_fn)


def cross_entropy(logits: Tensor, targets: Sequence[int], label_smoothing: float = 0.0) -> Tensor:
    """Mean token cross-entropy with uniform label smoothing over all classes."""
    index = np.asarray(targets, dtype=np.int64)
    rows, classes = logits.shape
    if index.shape != (rows,):
        raise DimensionError(f"{rows} logit rows but {index.size} targets")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    dist = np.full((rows, classes), label_smoothing / classes)
    dist[np.arange(rows), index] += 1.0 - label_smoothing
    loss = -np.sum(dist * logp) / rows

    def grad_fn(g):
        return (g * (np.exp(logp) - dist) / rows,)

    return record_op(loss, (logits,), grad_fn)
