"""Numerical self-checks shared by the CLI and the test-suite."""

from __future__ import annotations

import numpy as np

from .groups import GroupSpec, group, transform_feature_map, transform_image
from .layers import GConv, LiftingGConv, SepGConvG, SepGConvGC
from .tensor import Tensor

LAYER_TYPES = ("lift", "full", "g", "gc")
TOLERANCE = {"f64": 1e-10, "f32": 1e-4}
_CLASSES = {"lift": LiftingGConv, "full": GConv, "g": SepGConvG, "gc": SepGConvGC}


def make_layer(kind: str, spec: GroupSpec, in_channels: int, out_channels: int, kernel_size: int = 3,
               rng: np.random.Generator | None = None, dtype=np.float64, padding: str = "same"):
    """A layer of the given type whose bias is randomised too."""
    if kind not in _CLASSES:
        raise ValueError(f"layer type must be one of {LAYER_TYPES}, got {kind!r}")
    rng = np.random.default_rng() if rng is None else rng
    layer = _CLASSES[kind](spec, in_channels, out_channels, kernel_size, padding=padding, rng=rng, dtype=dtype)
    layer.bias.data[...] = rng.standard_normal(out_channels).astype(dtype)
    return layer


def equivariance_deviations(
    group_name: str,
    kind: str,
    seed: int = 0,
    dtype: str = "f64",
    in_channels: int = 3,
    out_channels: int = 4,
    kernel_size: int = 3,
    size: int = 9,
    batch: int = 2,
) -> np.ndarray:
    """Max ``|layer(T_g x) - T'_g layer(x)|`` for every group element ``g``."""
    spec = group(group_name)
    np_dtype = np.float64 if dtype == "f64" else np.float32
    rng = np.random.default_rng(seed)
    layer = make_layer(kind, spec, in_channels, out_channels, kernel_size, rng, np_dtype)
    if kind == "lift":
        x = rng.standard_normal((batch, in_channels, size, size)).astype(np_dtype)
    else:
        x = rng.standard_normal((batch, in_channels, spec.order, size, size)).astype(np_dtype)
    y = layer(Tensor(x)).data
    out = np.empty(spec.order)
    for g in spec.elements():
        x_g = transform_image(spec, g, x) if kind == "lift" else transform_feature_map(spec, g, x)
        out[g] = np.abs(layer(Tensor(x_g)).data - transform_feature_map(spec, g, y)).max()
    return out
