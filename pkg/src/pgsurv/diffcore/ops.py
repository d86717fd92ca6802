"""Operators with their backward rules.

Each forward function accepts Nodes or array-likes and returns a Node.
Backward rules are looked up by tag in ``tensor.RULES`` so that tests can
swap one out (mutation testing of the gradient checker).
"""
import numpy as np

from .tensor import DimensionError, DomainError, Node, as_array, const, make, register

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    ndim_extra = g.ndim - len(shape)
    if ndim_extra > 0:
        g = g.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- linear algebra -------------------------------------------------------

def matmul(a, b):
    a, b = const(a), const(b)
    av, bv = a.value, b.value
    if av.ndim < 2 or bv.ndim < 2 or av.shape[-1] != bv.shape[-2] or av.shape[:-2] != bv.shape[:-2]:
        raise DimensionError(f"matmul shape mismatch: {av.shape} @ {bv.shape}")
    return make(av @ bv, (a, b), "matmul")


@register("matmul")
def _matmul_bw(node, g):
    a, b = node.parents
    ga = g @ np.swapaxes(b.value, -1, -2) if a.requires_grad else None
    gb = np.swapaxes(a.value, -1, -2) @ g if b.requires_grad else None
    return ga, gb


def transpose(x, axes=None):
    x = const(x)
    if axes is None:
        axes = tuple(reversed(range(x.value.ndim)))
    return make(np.transpose(x.value, axes), (x,), "transpose", axes)


@register("transpose")
def _transpose_bw(node, g):
    return (np.transpose(g, np.argsort(node.ctx)),)


def reshape(x, shape):
    x = const(x)
    return make(x.value.reshape(shape), (x,), "reshape")


@register("reshape")
def _reshape_bw(node, g):
    return (g.reshape(node.parents[0].value.shape),)


def concat(xs, axis=0):
    xs = [const(x) for x in xs]
    out = np.concatenate([x.value for x in xs], axis=axis)
    sizes = [x.value.shape[axis] for x in xs]
    return make(out, tuple(xs), "concat", (axis, np.cumsum(sizes)[:-1]))


@register("concat")
def _concat_bw(node, g):
    axis, cuts = node.ctx
    return tuple(np.split(g, cuts, axis=axis))


# -- elementwise arithmetic -----------------------------------------------

def add(a, b):
    a, b = const(a), const(b)
    return make(a.value + b.value, (a, b), "add")


@register("add")
def _add_bw(node, g):
    a, b = node.parents
    return _unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)


def sub(a, b):
    a, b = const(a), const(b)
    return make(a.value - b.value, (a, b), "sub")


@register("sub")
def _sub_bw(node, g):
    a, b = node.parents
    return _unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)


def mul(a, b):
    a, b = const(a), const(b)
    return make(a.value * b.value, (a, b), "mul")


@register("mul")
def _mul_bw(node, g):
    a, b = node.parents
    ga = _unbroadcast(g * b.value, a.value.shape) if a.requires_grad else None
    gb = _unbroadcast(g * a.value, b.value.shape) if b.requires_grad else None
    return ga, gb


def div(a, b):
    a, b = const(a), const(b)
    return make(a.value / b.value, (a, b), "div")


@register("div")
def _div_bw(node, g):
    a, b = node.parents
    ga = _unbroadcast(g / b.value, a.value.shape) if a.requires_grad else None
    gb = _unbroadcast(-g * node.value / b.value, b.value.shape) if b.requires_grad else None
    return ga, gb


def scale(x, c):
    x = const(x)
    return make(x.value * c, (x,), "scale", c)


@register("scale")
def _scale_bw(node, g):
    return (g * node.ctx,)


def square(x):
    x = const(x)
    return make(x.value * x.value, (x,), "square")


@register("square")
def _square_bw(node, g):
    return (2.0 * g * node.parents[0].value,)


def sqrt(x):
    x = const(x)
    if np.any(x.value < 0):
        raise DomainError("sqrt of a negative entry")
    return make(np.sqrt(x.value), (x,), "sqrt")


@register("sqrt")
def _sqrt_bw(node, g):
    return (g * 0.5 / node.value,)


def log(x):
    x = const(x)
    if np.any(x.value <= 0):
        bad = float(x.value[x.value <= 0].flat[0])
        raise DomainError(f"log of non-positive entry {bad!r}; clamp the input first")
    return make(np.log(x.value), (x,), "log")


@register("log")
def _log_bw(node, g):
    return (g / node.parents[0].value,)


def exp(x):
    x = const(x)
    return make(np.exp(x.value), (x,), "exp")


@register("exp")
def _exp_bw(node, g):
    return (g * node.value,)


def clip(x, lo, hi):
    """Clamp into [lo, hi]; the gradient is zero where clamping is active."""
    x = const(x)
    return make(np.clip(x.value, lo, hi), (x,), "clip", (lo, hi))


@register("clip")
def _clip_bw(node, g):
    lo, hi = node.ctx
    v = node.parents[0].value
    return (g * ((v >= lo) & (v <= hi)),)


# -- activations ----------------------------------------------------------

def tanh(x):
    x = const(x)
    return make(np.tanh(x.value), (x,), "tanh")


@register("tanh")
def _tanh_bw(node, g):
    return (g * (1.0 - node.value * node.value),)


def _sigmoid(v):
    # split by sign so exp never overflows
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x):
    x = const(x)
    return make(_sigmoid(x.value), (x,), "sigmoid")


@register("sigmoid")
def _sigmoid_bw(node, g):
    s = node.value
    return (g * s * (1.0 - s),)


def relu(x):
    x = const(x)
    return make(np.maximum(x.value, 0.0), (x,), "relu")


@register("relu")
def _relu_bw(node, g):
    return (g * (node.parents[0].value > 0),)


def selu(x):
    x = const(x)
    v = x.value
    neg = SELU_LAMBDA * SELU_ALPHA * np.expm1(np.minimum(v, 0.0))
    return make(np.where(v > 0, SELU_LAMBDA * v, neg), (x,), "selu")


@register("selu")
def _selu_bw(node, g):
    v = node.parents[0].value
    d = np.where(v > 0, SELU_LAMBDA, SELU_LAMBDA * SELU_ALPHA * np.exp(np.minimum(v, 0.0)))
    return (g * d,)


def softmax(x, axis=-1, mask=None):
    """Numerically stable softmax.

    ``mask`` (broadcastable boolean array) restricts each slice to its True
    entries; masked-out positions get exactly zero weight. Every slice must
    keep at least one entry.
    """
    x = const(x)
    v = x.value
    if mask is not None:
        mask = np.broadcast_to(mask, v.shape)
        v = np.where(mask, v, -np.inf)
    shifted = v - v.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    return make(out, (x,), "softmax", axis)


@register("softmax")
def _softmax_bw(node, g):
    s = node.value
    axis = node.ctx
    return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)


# -- reductions -----------------------------------------------------------

def sum(x, axis=None, keepdims=False):
    x = const(x)
    return make(np.sum(x.value, axis=axis, keepdims=keepdims), (x,), "sum", (axis, keepdims))


@register("sum")
def _sum_bw(node, g):
    axis, keepdims = node.ctx
    shape = node.parents[0].value.shape
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, shape).copy(),)


def mean(x, axis=None, keepdims=False):
    x = const(x)
    v = x.value
    count = v.size if axis is None else np.prod([v.shape[a] for a in np.atleast_1d(axis)])
    return make(np.mean(v, axis=axis, keepdims=keepdims), (x,), "mean", (axis, keepdims, count))


@register("mean")
def _mean_bw(node, g):
    axis, keepdims, count = node.ctx
    shape = node.parents[0].value.shape
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g / count, shape).copy(),)


# -- normalisation / regularisation ----------------------------------------

def layer_norm(x, gain, bias, eps=1e-5):
    """Normalise over the last axis, then scale and shift."""
    x, gain, bias = const(x), const(gain), const(bias)
    v = x.value
    mu = v.mean(axis=-1, keepdims=True)
    xc = v - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    return make(xhat * gain.value + bias.value, (x, gain, bias), "layer_norm", (xhat, inv))


@register("layer_norm")
def _layer_norm_bw(node, g):
    x, gain, bias = node.parents
    xhat, inv = node.ctx
    gx = None
    if x.requires_grad:
        gh = g * gain.value
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
    ggain = _unbroadcast(g * xhat, gain.value.shape) if gain.requires_grad else None
    gbias = _unbroadcast(g, bias.value.shape) if bias.requires_grad else None
    return gx, ggain, gbias


def alpha_dropout(x, p, training, rng):
    """Alpha dropout for self-normalising nets.

    Dropped units are set to the SeLU saturation value, then an affine map
    restores zero mean / unit variance for standardised input.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {p}")
    x = const(x)
    if not training or p == 0.0:
        return x
    sat = -SELU_LAMBDA * SELU_ALPHA
    keep = 1.0 - p
    a = (keep + sat * sat * keep * p) ** -0.5
    b = -a * sat * p
    kept = rng.random(x.value.shape) < keep
    out = a * np.where(kept, x.value, sat) + b
    return make(out, (x,), "alpha_dropout", a * kept)


@register("alpha_dropout")
def _alpha_dropout_bw(node, g):
    return (g * node.ctx,)


__all__ = [
    "Node", "as_array", "matmul", "transpose", "reshape", "concat", "add", "sub", "mul",
    "div", "scale", "square", "sqrt", "log", "exp", "clip", "tanh", "sigmoid", "relu", "selu",
    "softmax", "sum", "mean", "layer_norm", "alpha_dropout",
]
