"""Differentiable operations.

Image-like tensors are channels-last (B, H, W, C) so that patch matrices feed
BLAS without transposes. Convolutions are stride-1 correlations with ``"valid"``, ``"same"`` or explicit
``((top, bottom), (left, right))`` padding; ``"same"`` puts the extra row or
column at the bottom/right.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DimensionError
from .tensor import Tensor, as_tensor


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return Tensor(a.data + b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return Tensor(a.data * b.data, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(-a.data, (a,), lambda g: a._accumulate(-g))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return Tensor(out, (a,), lambda g: a._accumulate(g * out))


def square(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(a.data * a.data, (a,), lambda g: a._accumulate(2.0 * g * a.data))


def sum(a, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    out = a.data.sum(axis=axis, dtype=np.float64).astype(a.dtype)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    return Tensor(out, (a,), backward)


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from None
    return Tensor(out, (a,), lambda g: a._accumulate(g.reshape(a.shape)))


def flatten(a) -> Tensor:
    return reshape(a, (a.shape[0], -1))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return Tensor(a.data @ b.data, (a, b), backward)


def dense(x, w, b=None) -> Tensor:
    """Affine map ``x @ w + b`` with ``w`` of shape (in, out)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise DimensionError(f"dense: input {x.shape} does not match weight {w.shape}")
    out = matmul(x, w)
    return out if b is None else add(out, b)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return Tensor(x.data * mask, (x,), lambda g: x._accumulate(g * mask))


def dropout(x, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; the identity outside training mode."""
    x = as_tensor(x)
    if not training or rate <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape, dtype=np.float32) >= rate) * np.asarray(1.0 / (1.0 - rate), x.dtype)
    return Tensor(x.data * keep, (x,), lambda g: x._accumulate(g * keep))


def log_softmax(z, axis=-1) -> Tensor:
    z = as_tensor(z)
    shifted = z.data - z.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted.astype(np.float64)).sum(axis=axis, keepdims=True))
    out = (shifted - lse).astype(z.dtype)
    soft = np.exp(out.astype(np.float64))

    def backward(g):
        z._accumulate((g - soft * g.sum(axis=axis, keepdims=True)).astype(z.dtype))

    return Tensor(out, (z,), backward)


def softmax(z, axis=-1) -> Tensor:
    z = as_tensor(z)
    shifted = z.data - z.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted.astype(np.float64))
    out = (e / e.sum(axis=axis, keepdims=True)).astype(z.dtype)

    def backward(g):
        z._accumulate(out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return Tensor(out, (z,), backward)


def cross_entropy(logits, onehot, reduction: str = "mean") -> Tensor:
    """Categorical cross-entropy from raw logits against (soft) one-hot targets."""
    logits = as_tensor(logits)
    y = np.asarray(onehot.data if isinstance(onehot, Tensor) else onehot)
    if y.shape != logits.shape:
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs targets {y.shape}")
    z = logits.data.astype(np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    per_row = -(y * logp).sum(axis=-1)
    scale = 1.0 / len(per_row) if reduction == "mean" else 1.0
    out = per_row.sum() * scale
    p = np.exp(logp)

    def backward(g):
        # d/dz of -sum(y log softmax z) = softmax(z) * sum(y) - y
        grad = (p * y.sum(axis=-1, keepdims=True) - y) * (g * scale)
        logits._accumulate(grad.astype(logits.dtype))

    return Tensor(np.asarray(out, dtype=logits.dtype), (logits,), backward)


def gaussian_reparam(mu, logvar, rng: np.random.Generator) -> Tensor:
    """Sample ``mu + exp(logvar / 2) * eps`` with eps ~ N(0, I)."""
    mu, logvar = as_tensor(mu), as_tensor(logvar)
    if mu.shape != logvar.shape:
        raise DimensionError(f"gaussian_reparam: mu {mu.shape} vs logvar {logvar.shape}")
    eps = rng.standard_normal(mu.shape).astype(mu.dtype)
    return add(mu, mul(exp(mul(logvar, 0.5)), eps))


def kl_divergence(mu, logvar, reduction: str = "mean") -> Tensor:
    """KL(N(mu, exp(logvar)) || N(0, I)), summed over latent dims."""
    mu, logvar = as_tensor(mu), as_tensor(logvar)
    if mu.shape != logvar.shape:
        raise DimensionError(f"kl_divergence: mu {mu.shape} vs logvar {logvar.shape}")
    terms = add(add(exp(logvar), square(mu)), add(neg(logvar), -1.0))
    total = mul(sum(terms), 0.5)
    if reduction == "mean":
        total = mul(total, 1.0 / mu.shape[0])
    return total


def squared_error(pred, target, reduction: str = "mean") -> Tensor:
    """Sum of squared differences per sample, averaged over the batch by default."""
    pred = as_tensor(pred)
    target = np.asarray(target.data if isinstance(target, Tensor) else target)
    if pred.shape != target.shape:
        raise DimensionError(f"squared_error: {pred.shape} vs {target.shape}")
    diff = pred.data.astype(np.float64) - target
    scale = 1.0 / pred.shape[0] if reduction == "mean" else 1.0
    out = (diff * diff).sum() * scale
    return Tensor(np.asarray(out, dtype=pred.dtype), (pred,),
                  lambda g: pred._accumulate((2.0 * scale * g * diff).astype(pred.dtype)))


# --- convolutions -----------------------------------------------------------

def _resolve_padding(padding, kh, kw):
    if padding == "valid":
        return (0, 0), (0, 0)
    if padding == "same":
        th, tw = kh - 1, kw - 1
        return (th // 2, th - th // 2), (tw // 2, tw - tw // 2)
    (pt, pb), (pl, pr) = padding
    return (int(pt), int(pb)), (int(pl), int(pr))


def _pad(x, ph, pw):
    if ph == (0, 0) and pw == (0, 0):
        return x
    return np.pad(x, ((0, 0), ph, pw, (0, 0)))


def _im2col(xp, kh, kw):
    """(B, H, W, C) -> (B*Ho*Wo, kh*kw*C) patch matrix, channels innermost."""
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    b, ho, wo = win.shape[:3]
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(b * ho * wo, -1), (b, ho, wo)


def _correlate(xp, w):
    """Valid stride-1 correlation: xp (B, H, W, Cin), w (kh, kw, Cin, Cout)."""
    kh, kw, _, cout = w.shape
    cols, (b, ho, wo) = _im2col(xp, kh, kw)
    return (cols @ w.reshape(-1, cout)).reshape(b, ho, wo, cout)


def _kernel_grad(a, bp, kh, kw):
    """sum over b,h,w of bp[b,h+i,w+j,c] * a[b,h,w,o] -> (kh, kw, C, O)."""
    cols, _ = _im2col(bp, kh, kw)
    o, c = a.shape[3], bp.shape[3]
    return (cols.T @ a.reshape(-1, o)).reshape(kh, kw, c, o)


def _full_correlate_adjoint(g, w):
    """Adjoint of the valid correlation with kernel w, applied to g."""
    kh, kw = w.shape[:2]
    gp = _pad(g, (kh - 1, kh - 1), (kw - 1, kw - 1))
    return _correlate(gp, np.ascontiguousarray(w[::-1, ::-1].transpose(0, 1, 3, 2)))


def _crop(x, ph, pw):
    h, w = x.shape[1:3]
    return x[:, ph[0]:h - ph[1], pw[0]:w - pw[1], :]


def conv2d(x, w, b=None, padding="valid") -> Tensor:
    """2-D correlation of x (B, H, W, Cin) with w (kh, kw, Cin, Cout)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[3] != w.shape[2]:
        raise DimensionError(f"conv2d: input {x.shape} does not match kernel {w.shape}")
    kh, kw = w.shape[:2]
    ph, pw = _resolve_padding(padding, kh, kw)
    xp = _pad(x.data, ph, pw)
    if xp.shape[1] < kh or xp.shape[2] < kw:
        raise DimensionError(f"conv2d: kernel {w.shape} larger than padded input {xp.shape}")
    out = _correlate(xp, w.data)

    def backward(g):
        if w.requires_grad:
            w._accumulate(_kernel_grad(g, xp, kh, kw))
        if x.requires_grad:
            x._accumulate(_crop(_full_correlate_adjoint(g, w.data), ph, pw))

    y = Tensor(out, (x, w), backward)
    return y if b is None else add(y, b)


def conv_transpose2d(x, w, b=None, padding="valid") -> Tensor:
    """Transposed convolution, the adjoint of :func:`conv2d` in its input.

    ``w`` is (kh, kw, Cout, Cin): the kernel of the forward convolution this
    op is the transpose of. ``"same"`` keeps the spatial size; ``"valid"``
    grows it by ``k - 1``.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[3] != w.shape[3]:
        raise DimensionError(f"conv_transpose2d: input {x.shape} does not match kernel {w.shape}")
    kh, kw = w.shape[:2]
    ph, pw = _resolve_padding(padding, kh, kw)
    out = _crop(_full_correlate_adjoint(x.data, w.data), ph, pw)

    def backward(g):
        gp = _pad(g, ph, pw)
        if w.requires_grad:
            w._accumulate(_kernel_grad(x.data, gp, kh, kw))
        if x.requires_grad:
            x._accumulate(_correlate(gp, w.data))

    y = Tensor(np.ascontiguousarray(out), (x, w), backward)
    return y if b is None else add(y, b)
