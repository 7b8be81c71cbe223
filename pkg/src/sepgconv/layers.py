"""Lifting, full, g-separable and gc-separable group convolutions plus helpers.

Feature maps of group layers are ``[B, C, G, H, W]`` (an unbatched
``[C, G, H, W]`` is accepted too).  Filter expansion happens inside the
autograd graph on every forward pass, so gradients reach the stored
parameters ``F``, ``K`` and ``w`` directly.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import functional as Fn
from .groups import GroupSpec, full_filter_index, pointwise_index
from .tensor import Parameter, Tensor, as_tensor, mul, take


class Module:
    """Minimal container: parameters, buffers and a train/eval flag."""

    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):  # pragma: no cover - abstract
        raise NotImplementedError

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in self._children():
            if isinstance(value, Parameter):
                yield prefix + name, value
            else:
                yield from value.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in getattr(self, "_buffer_names", ()):
            yield prefix + name, getattr(self, name)
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(prefix + name + ".")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _batched(x: Tensor, ndim: int) -> tuple[Tensor, bool]:
    if x.ndim == ndim - 1:
        return x.reshape((1,) + x.shape), True
    if x.ndim != ndim:
        raise ValueError(f"expected a {ndim - 1}-d sample or {ndim}-d batch, got shape {x.shape}")
    return x, False


def _unbatch(y: Tensor, single: bool) -> Tensor:
    return y.reshape(y.shape[1:]) if single else y


# ---------------------------------------------------------------------------
# plain convolutions
# ---------------------------------------------------------------------------


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel_size, padding="same", bias=True,
                 rng=None, dtype=np.float32):
        rng = np.random.default_rng() if rng is None else rng
        k = kernel_size
        self.padding = padding
        self.weight = Parameter(
            he_uniform(rng, (out_channels, in_channels, k, k), in_channels * k * k, dtype)
        )
        self.bias = Parameter(np.zeros(out_channels, dtype)) if bias else None

    def forward(self, x):
        x, single = _batched(as_tensor(x), 4)
        y = Fn.conv2d(x, self.weight, self.padding)
        if self.bias is not None:
            y = y + self.bias.reshape(1, -1, 1, 1)
        return _unbatch(y, single)


def depthwise_separable_conv2d(x, k_depthwise, w_point, padding="same") -> Tensor:
    """Per-channel spatial convolution ``[C_in,k,k]`` followed by 1x1 mixing ``[C_out,C_in]``."""
    w_point = as_tensor(w_point)
    if w_point.ndim != 2:
        raise ValueError(f"pointwise weights must be [C_out, C_in], got shape {w_point.shape}")
    k_depthwise = as_tensor(k_depthwise)
    if k_depthwise.shape[0] != w_point.shape[1]:
        raise ValueError(
            f"depthwise kernel has {k_depthwise.shape[0]} channels, pointwise expects {w_point.shape[1]}"
        )
    h = Fn.depthwise_conv2d(x, k_depthwise, padding)
    return Fn.conv2d(h, w_point.reshape(w_point.shape[0], w_point.shape[1], 1, 1), "valid")


class DepthwiseSeparableConv2d(Module):
    def __init__(self, in_channels, out_channels, kernel_size, padding="same", bias=True,
                 rng=None, dtype=np.float32):
        rng = np.random.default_rng() if rng is None else rng
        k = kernel_size
        self.padding = padding
        self.depthwise = Parameter(he_uniform(rng, (in_channels, k, k), k * k, dtype))
        self.pointwise = Parameter(he_uniform(rng, (out_channels, in_channels), in_channels, dtype))
        self.bias = Parameter(np.zeros(out_channels, dtype)) if bias else None

    def forward(self, x):
        x, single = _batched(as_tensor(x), 4)
        y = depthwise_separable_conv2d(x, self.depthwise, self.pointwise, self.padding)
        if self.bias is not None:
            y = y + self.bias.reshape(1, -1, 1, 1)
        return _unbatch(y, single)


# ---------------------------------------------------------------------------
# group convolutions
# ---------------------------------------------------------------------------


def _rotated_kernels(spec: GroupSpec, K: Tensor) -> Tensor:
    """``T_h`` applied to the last two axes of ``K``; new axis of size G before them."""
    k = K.shape[-1]
    idx = full_filter_index(spec.kind, 1, k)
    lead = K.shape[:-2]
    out = take(K.reshape(lead + (k * k,)), idx.ravel(), axis=-1)
    return out.reshape(lead + (spec.order, k, k))


def _permuted_pointwise(spec: GroupSpec, w: Tensor) -> Tensor:
    """``w~[..., h, g] = w[..., h^-1 g]``."""
    G = spec.order
    idx = pointwise_index(spec.kind)
    return take(w, idx.ravel(), axis=-1).reshape(w.shape[:-1] + (G, G))


def expand_filter_tensor(spec: GroupSpec, F: Tensor) -> Tensor:
    """Differentiable ``expand_full_filter``: ``[C_out,C_in,G_in,k,k]`` to ``[C_out,G,C_in,G_in,k,k]``.

    Lifting banks (``G_in == 1``) give ``[C_out, G, C_in, k, k]``.
    """
    C_out, C_in, G_in, k, _ = F.shape
    G = spec.order
    idx = full_filter_index(spec.kind, G_in, k)
    flat = take(F.reshape(C_out, C_in, G_in * k * k), idx.ravel(), axis=-1)
    if G_in == 1:
        return flat.reshape(C_out, C_in, G, k, k).transpose(0, 2, 1, 3, 4)
    return flat.reshape(C_out, C_in, G, G_in, k, k).transpose(0, 2, 1, 3, 4, 5)


def _gconv_with_full_filter(x: Tensor, Ft: Tensor, padding: str) -> Tensor:
    C_out, G, C_in, G_in, k, _ = Ft.shape
    B, _, _, H, W = x.shape
    y = Fn.conv2d(
        x.reshape(B, C_in * G_in, H, W), Ft.reshape(C_out * G, C_in * G_in, k, k), padding
    )
    return y.reshape(B, C_out, G, y.shape[-2], y.shape[-1])


class _GroupLayer(Module):
    spec: GroupSpec
    in_channels: int
    out_channels: int
    padding: str
    bias: Parameter | None

    def _init_common(self, spec, in_channels, out_channels, kernel_size, padding, bias, dtype):
        if padding not in Fn.PADDINGS:
            raise ValueError(f"padding must be one of {Fn.PADDINGS}, got {padding!r}")
        if padding == "same" and kernel_size % 2 == 0:
            raise ValueError(f"'same' padding requires an odd kernel size, got {kernel_size}")
        self.spec = spec
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.padding = padding
        self.bias = Parameter(np.zeros(out_channels, dtype)) if bias else None

    def _check_input(self, x: Tensor) -> tuple[Tensor, bool]:
        x, single = _batched(x, 5)
        if x.shape[1] != self.in_channels or x.shape[2] != self.spec.order:
            raise ValueError(
                f"expected input [B, {self.in_channels}, {self.spec.order}, H, W], got {x.shape}"
            )
        return x, single

    def _finish(self, y: Tensor, single: bool) -> Tensor:
        if self.bias is not None:
            y = y + self.bias.reshape(1, -1, 1, 1, 1)
        return _unbatch(y, single)


class LiftingGConv(_GroupLayer):
    """Image ``[B, C_in, H, W]`` to group feature map ``[B, C_out, G, H', W']``."""

    def __init__(self, spec, in_channels, out_channels, kernel_size=3, padding="same", bias=True,
                 rng=None, dtype=np.float32):
        rng = np.random.default_rng() if rng is None else rng
        self._init_common(spec, in_channels, out_channels, kernel_size, padding, bias, dtype)
        k = kernel_size
        self.F = Parameter(he_uniform(rng, (out_channels, in_channels, 1, k, k), in_channels * k * k, dtype))

    def forward(self, x):
        x, single = _batched(as_tensor(x), 4)
        if x.shape[1] != self.in_channels:
            raise ValueError(f"expected {self.in_channels} input channels, got shape {x.shape}")
        Ft = expand_filter_tensor(self.spec, self.F)
        C_out, G, C_in, k, _ = Ft.shape
        y = Fn.conv2d(x, Ft.reshape(C_out * G, C_in, k, k), self.padding)
        y = y.reshape(x.shape[0], C_out, G, y.shape[-2], y.shape[-1])
        return self._finish(y, single)

    def full_filter(self) -> np.ndarray:
        return self.F.data


class GConv(_GroupLayer):
    """Full group convolution with stored bank ``F[C_out, C_in, G, k, k]``."""

    def __init__(self, spec, in_channels, out_channels, kernel_size=3, padding="same", bias=True,
                 rng=None, dtype=np.float32):
        rng = np.random.default_rng() if rng is None else rng
        self._init_common(spec, in_channels, out_channels, kernel_size, padding, bias, dtype)
        k, G = kernel_size, spec.order
        self.F = Parameter(
            he_uniform(rng, (out_channels, in_channels, G, k, k), in_channels * G * k * k, dtype)
        )

    def forward(self, x):
        x, single = self._check_input(as_tensor(x))
        y = _gconv_with_full_filter(x, expand_filter_tensor(self.spec, self.F), self.padding)
        return self._finish(y, single)

    def full_filter(self) -> np.ndarray:
        return self.F.data


class _SeparableGConv(_GroupLayer):
    def forward(self, x, path: str = "efficient"):
        if path == "efficient":
            return self.forward_efficient(x)
        if path == "naive":
            return self.forward_naive(x)
        raise ValueError(f"path must be 'efficient' or 'naive', got {path!r}")

    def forward_naive(self, x):
        """Precompute the full bank ``F~`` and run a regular group convolution."""
        x, single = self._check_input(as_tensor(x))
        y = _gconv_with_full_filter(x, self.expanded_filter(), self.padding)
        return self._finish(y, single)

    def _init_pointwise(self, rng, dtype):
        G = self.spec.order
        bound = 1.0 / np.sqrt(G)
        shape = (self.out_channels, self.in_channels, G)
        self.w = Parameter(rng.uniform(-bound, bound, size=shape).astype(dtype))


class SepGConvG(_SeparableGConv):
    """g-separable GConv: kernel ``K[C_out, C_in, k, k]`` shared over the group axis."""

    def __init__(self, spec, in_channels, out_channels, kernel_size=3, padding="same", bias=True,
                 rng=None, dtype=np.float32):
        rng = np.random.default_rng() if rng is None else rng
        self._init_common(spec, in_channels, out_channels, kernel_size, padding, bias, dtype)
        k, G = kernel_size, spec.order
        self.K = Parameter(
            he_uniform(rng, (out_channels, in_channels, k, k), in_channels * G * k * k, dtype)
        )
        self._init_pointwise(rng, dtype)

    def expanded_filter(self) -> Tensor:
        C_out, C_in, k, _ = self.K.shape
        G = self.spec.order
        Kt = _rotated_kernels(self.spec, self.K)  # [n, c, h, k, k]
        wt = _permuted_pointwise(self.spec, self.w)  # [n, c, h, g]
        Ft = mul(Kt.reshape(C_out, C_in, G, 1, k, k), wt.reshape(C_out, C_in, G, G, 1, 1))
        return Ft.transpose(0, 2, 1, 3, 4, 5)

    def forward_efficient(self, x):
        """Group mixing per input channel, then a grouped spatial convolution."""
        x, single = self._check_input(as_tensor(x))
        C_out, C_in, k, _ = self.K.shape
        G = self.spec.order
        B, _, _, H, W = x.shape
        wt = _permuted_pointwise(self.spec, self.w).transpose(0, 2, 1, 3)  # [n, h, c, g]
        xt = Fn.pointwise_contract(x, wt, "bcgyx,nhcg->bnhcyx")
        Kt = _rotated_kernels(self.spec, self.K).transpose(0, 2, 1, 3, 4)  # [n, h, c, k, k]
        y = Fn.grouped_conv2d(
            xt.reshape(B, C_out * G * C_in, H, W),
            Kt.reshape(C_out * G, C_in, k, k),
            C_out * G,
            self.padding,
        )
        return self._finish(y.reshape(B, C_out, G, y.shape[-2], y.shape[-1]), single)

    def full_filter(self) -> np.ndarray:
        return self.K.data[:, :, None] * self.w.data[:, :, :, None, None]


class SepGConvGC(_SeparableGConv):
    """gc-separable GConv: one kernel ``K[C_out, k, k]`` shared over groups and input channels."""

    def __init__(self, spec, in_channels, out_channels, kernel_size=3, padding="same", bias=True,
                 rng=None, dtype=np.float32):
        rng = np.random.default_rng() if rng is None else rng
        self._init_common(spec, in_channels, out_channels, kernel_size, padding, bias, dtype)
        k, G = kernel_size, spec.order
        self.K = Parameter(he_uniform(rng, (out_channels, k, k), in_channels * G * k * k, dtype))
        self._init_pointwise(rng, dtype)

    def expanded_filter(self) -> Tensor:
        C_out, k, _ = self.K.shape
        C_in, G = self.in_channels, self.spec.order
        Kt = _rotated_kernels(self.spec, self.K)  # [n, h, k, k]
        wt = _permuted_pointwise(self.spec, self.w).transpose(0, 2, 1, 3)  # [n, h, c, g]
        return mul(Kt.reshape(C_out, G, 1, 1, k, k), wt.reshape(C_out, G, C_in, G, 1, 1))

    def forward_efficient(self, x):
        """Full 1x1 mixing over (channel, group), then a depthwise spatial convolution."""
        x, single = self._check_input(as_tensor(x))
        C_out, k, _ = self.K.shape
        G = self.spec.order
        B, _, _, H, W = x.shape
        wt = _permuted_pointwise(self.spec, self.w).transpose(0, 2, 1, 3)  # [n, h, c, g]
        xt = Fn.pointwise_contract(x, wt, "bcgyx,nhcg->bnhyx")
        Kt = _rotated_kernels(self.spec, self.K)  # [n, h, k, k]
        y = Fn.grouped_conv2d(
            xt.reshape(B, C_out * G, H, W), Kt.reshape(C_out * G, 1, k, k), C_out * G, self.padding
        )
        return self._finish(y.reshape(B, C_out, G, y.shape[-2], y.shape[-1]), single)

    def full_filter(self) -> np.ndarray:
        return self.K.data[:, None, None] * self.w.data[:, :, :, None, None]


# ---------------------------------------------------------------------------
# auxiliary layers
# ---------------------------------------------------------------------------


class BatchNorm(Module):
    """Per-channel batch normalization over axis 1; pools statistics over all other axes."""

    _buffer_names = ("running_mean", "running_var")

    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=np.float32):
        self.gamma = Parameter(np.ones(channels, dtype))
        self.beta = Parameter(np.zeros(channels, dtype))
        self.running_mean = np.zeros(channels, dtype)
        self.running_var = np.ones(channels, dtype)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x):
        return Fn.batchnorm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                            self.training, self.momentum, self.eps)


class Linear(Module):
    def __init__(self, in_features, out_features, bias=True, rng=None, dtype=np.float32):
        rng = np.random.default_rng() if rng is None else rng
        bound = 1.0 / np.sqrt(in_features)
        self.weight = Parameter(rng.uniform(-bound, bound, (out_features, in_features)).astype(dtype))
        self.bias = Parameter(np.zeros(out_features, dtype)) if bias else None

    def forward(self, x):
        return Fn.linear(x, self.weight, self.bias)


def group_coset_pool(x, mode: str = "max") -> Tensor:
    """Reduce the group axis of ``[..., C, G, H, W]``; invariant to group-axis permutation."""
    x = as_tensor(x)
    if x.ndim < 4:
        raise ValueError(f"expected [..., C, G, H, W], got shape {x.shape}")
    if mode == "max":
        return Fn.max_reduce(x, x.ndim - 3)
    if mode == "mean":
        return x.mean(axis=x.ndim - 3)
    raise ValueError(f"mode must be 'max' or 'mean', got {mode!r}")
