"""Differentiable operations on :class:`~sepgconv.tensor.Tensor`.

Convolutions accept a single image ``[C, H, W]`` or a batch ``[B, C, H, W]``
and use cross-correlation semantics (no kernel flip).
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .tensor import Tensor, as_tensor, einsum, make_node

PADDINGS = ("same", "valid")


def _conv_setup(x: Tensor, w: Tensor, groups: int, padding: str):
    if padding not in PADDINGS:
        raise ValueError(f"padding must be one of {PADDINGS}, got {padding!r}")
    if x.ndim not in (3, 4):
        raise ValueError(f"input must be [C,H,W] or [B,C,H,W], got shape {x.shape}")
    if w.ndim != 4:
        raise ValueError(f"filter must be [C_out, C_in/groups, k, k], got shape {w.shape}")
    if x.dtype != w.dtype:
        raise TypeError(f"input dtype {x.dtype} does not match filter dtype {w.dtype}")
    k = w.shape[2]
    if w.shape[3] != k:
        raise ValueError(f"filter must be square, got {w.shape[2]}x{w.shape[3]}")
    if padding == "same" and k % 2 == 0:
        raise ValueError(f"'same' padding requires an odd kernel size, got k={k}")
    C = x.shape[-3]
    if groups < 1 or C % groups or w.shape[0] % groups:
        raise ValueError(
            f"group count {groups} must divide input channels {C} and output channels {w.shape[0]}"
        )
    if w.shape[1] * groups != C:
        raise ValueError(
            f"channel mismatch: input has {C} channels, filter expects {w.shape[1] * groups} "
            f"({w.shape[1]} per group x {groups} groups)"
        )
    return k, (k - 1) // 2 if padding == "same" else 0


def grouped_conv2d(x, w, groups: int = 1, padding: str = "same") -> Tensor:
    """Grouped cross-correlation; output group ``i`` sees only input group ``i``."""
    x, w = as_tensor(x), as_tensor(w)
    k, p = _conv_setup(x, w, groups, padding)
    single = x.ndim == 3
    xd = x.data[None] if single else x.data
    H, W = xd.shape[2], xd.shape[3]
    if H + 2 * p < k or W + 2 * p < k:
        raise ValueError(f"kernel size {k} exceeds input size {H}x{W} with padding {padding!r}")
    xp = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p))) if p else xd
    out = kernels.conv_forward(xp, w.data, groups)

    def grad(g):
        g4 = g[None] if single else g
        gx = gw = None
        if x.requires_grad:
            gx = kernels.conv_backward_input(g4, w.data, groups, xp.shape)
            if p:
                gx = gx[:, :, p : p + H, p : p + W]
            gx = np.ascontiguousarray(gx[0] if single else gx)
        if w.requires_grad:
            gw = kernels.conv_backward_weight(g4, xp, groups, k)
        return gx, gw

    return make_node(out[0] if single else out, (x, w), grad, "conv2d")


def conv2d(x, w, padding: str = "same") -> Tensor:
    return grouped_conv2d(x, w, 1, padding)


def depthwise_conv2d(x, w, padding: str = "same") -> Tensor:
    """Per-channel spatial convolution; ``w`` is ``[C, k, k]``."""
    w = as_tensor(w)
    if w.ndim != 3:
        raise ValueError(f"depthwise kernel must be [C, k, k], got shape {w.shape}")
    x = as_tensor(x)
    return grouped_conv2d(x, w.reshape(w.shape[0], 1, w.shape[1], w.shape[2]), x.shape[-3], padding)


def pointwise_contract(x, w, subscripts: str) -> Tensor:
    """Weighted sum over the axes shared by ``x`` and ``w`` but absent from the output.

    ``subscripts`` is an einsum expression, e.g. ``"bcgyx,nhcg->bnhcyx"`` for the
    per-input-channel group mixing of a g-separable layer.
    """
    x, w = as_tensor(x), as_tensor(w)
    inputs = subscripts.replace(" ", "").split("->")[0].split(",")
    if len(inputs) != 2 or len(inputs[0]) != x.ndim or len(inputs[1]) != w.ndim:
        raise ValueError(f"subscripts {subscripts!r} do not match shapes {x.shape} and {w.shape}")
    sizes: dict[str, int] = {}
    for sub, shape in zip(inputs, (x.shape, w.shape)):
        for ch, n in zip(sub, shape):
            if sizes.setdefault(ch, n) != n:
                raise ValueError(f"axis {ch!r} has size {sizes[ch]} in one operand and {n} in the other")
    return einsum(subscripts, x, w)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    # np.maximum propagates NaN, so a diverging run is not silently zeroed out
    return make_node(np.maximum(x.data, 0).astype(x.dtype, copy=False), (x,), lambda g: (g * mask,), "relu")


def maxpool2d(x, window: int = 2, stride: int | None = None) -> Tensor:
    """Max over non-overlapping windows of the last two axes (trailing remainder dropped)."""
    x = as_tensor(x)
    stride = window if stride is None else stride
    if stride != window:
        raise ValueError("only non-overlapping pooling (stride == window) is supported")
    H, W = x.shape[-2], x.shape[-1]
    Ho, Wo = H // window, W // window
    if Ho == 0 or Wo == 0:
        raise ValueError(f"pooling window {window} larger than input {H}x{W}")
    lead = x.shape[:-2]
    crop = x.data[..., : Ho * window, : Wo * window]
    win = crop.reshape(lead + (Ho, window, Wo, window)).swapaxes(-3, -2)
    win = win.reshape(lead + (Ho, Wo, window * window))
    idx = win.argmax(axis=-1)[..., None]
    out = np.take_along_axis(win, idx, axis=-1)[..., 0]

    def grad(g):
        gw = np.zeros(lead + (Ho, Wo, window * window), dtype=g.dtype)
        np.put_along_axis(gw, idx, g[..., None], axis=-1)
        gw = gw.reshape(lead + (Ho, Wo, window, window)).swapaxes(-3, -2)
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[..., : Ho * window, : Wo * window] = gw.reshape(lead + (Ho * window, Wo * window))
        return (gx,)

    return make_node(out, (x,), grad, "maxpool2d")


def max_reduce(x, axis) -> Tensor:
    """Max over one or more axes; the gradient goes to the first maximal entry."""
    x = as_tensor(x)
    axes = tuple(a % x.ndim for a in np.atleast_1d(axis))
    keep = [a for a in range(x.ndim) if a not in axes]
    moved = x.data.transpose(keep + list(axes))
    kept_shape = moved.shape[: len(keep)]
    flat = moved.reshape(kept_shape + (-1,))
    idx = flat.argmax(axis=-1)[..., None]
    out = np.take_along_axis(flat, idx, axis=-1)[..., 0]

    def grad(g):
        gf = np.zeros_like(flat)
        np.put_along_axis(gf, idx, g[..., None], axis=-1)
        gm = gf.reshape(moved.shape)
        return (gm.transpose(np.argsort(keep + list(axes))),)

    return make_node(out, (x,), grad, "max_reduce")


def batchnorm(
    x,
    gamma,
    beta,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Normalize per channel (axis 1); statistics pool over every other axis.

    For group feature maps ``[B, C, G, H, W]`` this pools over the group axis,
    so the operation commutes with group-axis permutations.  ``running_mean``
    and ``running_var`` are updated in place when ``training``.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim < 2:
        raise ValueError(f"batchnorm needs at least [B, C], got shape {x.shape}")
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ValueError(f"gamma/beta must have shape ({C},)")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, C) + (1,) * (x.ndim - 2)
    n = x.size // C
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * (n / max(n - 1, 1))
    else:
        mu, var = running_mean.astype(x.dtype), running_var.astype(x.dtype)
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mu.reshape(bshape)) * inv_std.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def grad(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        dxhat = g * gamma.data.reshape(bshape)
        if training:
            gx = (
                inv_std.reshape(bshape)
                / n
                * (
                    n * dxhat
                    - dxhat.sum(axis=axes).reshape(bshape)
                    - xhat * (dxhat * xhat).sum(axis=axes).reshape(bshape)
                )
            )
        else:
            gx = dxhat * inv_std.reshape(bshape)
        return gx, ggamma, gbeta

    return make_node(out, (x, gamma, beta), grad, "batchnorm")


def dropout(x, p: float, rng: np.random.Generator, training: bool = True) -> Tensor:
    """Inverted dropout with an explicit generator, so masks are reproducible."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    mask = ((rng.random(x.shape) >= p) / (1.0 - p)).astype(x.dtype)
    return make_node(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight.T + bias`` with ``x`` of shape ``[B, in]``."""
    out = einsum("bi,oi->bo", as_tensor(x), as_tensor(weight))
    return out if bias is None else out + bias


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(``logits``)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ValueError(f"logits must be [B, n_classes], got shape {logits.shape}")
    B, n = logits.shape
    if labels.shape != (B,):
        raise ValueError(f"labels must have shape ({B},), got {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise TypeError("labels must be integers")
    if labels.size and (labels.min() < 0 or labels.max() >= n):
        raise ValueError(f"labels must lie in [0, {n}), got range [{labels.min()}, {labels.max()}]")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    loss = -logp[np.arange(B), labels].mean()

    def grad(g):
        probs = np.exp(logp)
        probs[np.arange(B), labels] -= 1.0
        return ((g * probs / B).astype(logits.dtype),)

    return make_node(np.asarray(loss, dtype=logits.dtype), (logits,), grad, "softmax_cross_entropy")
