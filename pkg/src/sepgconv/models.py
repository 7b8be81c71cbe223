"""The rotated-digit model family: Z2CNN, c-Z2CNN, P4CNN, g-P4CNN, gc-P4CNN.

All five share one skeleton of seven convolutions at width ``w``::

    conv3x3 (1 -> w)          BN  ReLU
    conv3x3 (w -> w)          BN  ReLU  maxpool 2x2  dropout
    conv3x3 (w -> w) x 4      BN  ReLU
    conv4x4 (w -> w)          BN  ReLU
    [coset max-pool]  global spatial max  dense (w -> 10)

with 'valid' padding, so a 28x28 input shrinks to 1x1 after the last
convolution.  Group families use a lifting GConv first and full / g / gc
GConvs afterwards; c-Z2CNN swaps the six inner convolutions for depthwise
separable ones.  The convolutions carry a bias and BN has an affine
scale/shift per channel; this skeleton reproduces the published
parameter counts (see ``REFERENCE_PARAMS``).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import functional as Fn
from .cost import LayerShape, NetworkReport, network_report
from .groups import group
from .layers import (BatchNorm, Conv2d, DepthwiseSeparableConv2d, GConv, LiftingGConv, Linear,
                     Module, SepGConvG, SepGConvGC, group_coset_pool)
from .tensor import Tensor, as_tensor

FAMILIES = ("Z2CNN", "cZ2CNN", "P4CNN", "gP4CNN", "gcP4CNN")
GROUP_FAMILIES = ("P4CNN", "gP4CNN", "gcP4CNN")

# Published parameter counts of the benchmark models, keyed by (family, width).
REFERENCE_PARAMS = {
    ("Z2CNN", 20): 25_210,
    ("cZ2CNN", 57): 25_600,
    ("P4CNN", 10): 24_810,
    ("gP4CNN", 10): 8_910,
    ("gcP4CNN", 10): 3_420,
    ("gP4CNN", 17): 25_260,
    ("gcP4CNN", 30): 24_640,
}

_ALIASES = {f.lower().replace("-", ""): f for f in FAMILIES}


def canonical_family(name: str) -> str:
    key = name.lower().replace("-", "").replace("_", "")
    if key not in _ALIASES:
        raise ValueError(f"unknown architecture {name!r}; expected one of {FAMILIES}")
    return _ALIASES[key]


@dataclass(frozen=True)
class ArchitectureConfig:
    family: str
    width: int
    group: str = "auto"  # none | p4 | p4m; auto picks p4 for group families
    dropout: float = 0.3
    bias: bool = True
    head: str = "coset-pool"  # coset-pool | flatten
    padding: str = "valid"
    n_layers: int = 7
    kernel_size: int = 3
    final_kernel_size: int = 4
    pool_after: int = 2
    input_size: int = 28
    n_classes: int = 10
    seed: int = 0
    dtype: str = "f32"

    def __post_init__(self):
        object.__setattr__(self, "family", canonical_family(self.family))
        if self.group == "auto":
            object.__setattr__(self, "group", "p4" if self.family in GROUP_FAMILIES else "none")
        if self.width < 1:
            raise ValueError(f"width must be >= 1, got {self.width}")
        if self.family in GROUP_FAMILIES and self.group not in ("p4", "p4m"):
            raise ValueError(f"{self.family} needs group p4 or p4m, got {self.group!r}")
        if self.family not in GROUP_FAMILIES and self.group != "none":
            raise ValueError(f"{self.family} is a plain CNN; group must be 'none', got {self.group!r}")
        if self.head not in ("coset-pool", "flatten"):
            raise ValueError(f"head must be 'coset-pool' or 'flatten', got {self.head!r}")
        if self.padding == "same" and (self.kernel_size % 2 == 0 or self.final_kernel_size % 2 == 0):
            raise ValueError("'same' padding needs odd kernel sizes")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.n_layers < 2 or not 1 <= self.pool_after <= self.n_layers:
            raise ValueError("need at least two layers and pool_after within range")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "f32" else np.float64

    def to_dict(self) -> dict:
        return asdict(self)


_GROUP_LAYER = {"P4CNN": GConv, "gP4CNN": SepGConvG, "gcP4CNN": SepGConvGC}
_LAYER_KIND = {"P4CNN": "full-gconv", "gP4CNN": "g-sep", "gcP4CNN": "gc-sep",
               "Z2CNN": "regular", "cZ2CNN": "depthwise-sep"}


class Network(Module):
    """A built model; ``forward`` maps ``[B, 1, H, W]`` images to ``[B, n_classes]`` logits."""

    def __init__(self, arch: ArchitectureConfig):
        self.arch = arch
        rng = np.random.default_rng(arch.seed)
        dtype = arch.np_dtype
        self.spec = group(arch.group) if arch.group != "none" else None
        w = arch.width
        self.convs: list[Module] = []
        self.norms: list[BatchNorm] = []
        for i in range(arch.n_layers):
            k = arch.final_kernel_size if i == arch.n_layers - 1 else arch.kernel_size
            c_in = 1 if i == 0 else w
            kw = dict(padding=arch.padding, bias=arch.bias, rng=rng, dtype=dtype)
            if self.spec is not None:
                layer = (LiftingGConv if i == 0 else _GROUP_LAYER[arch.family])(self.spec, c_in, w, k, **kw)
            elif arch.family == "cZ2CNN" and i > 0:
                layer = DepthwiseSeparableConv2d(c_in, w, k, **kw)
            else:
                layer = Conv2d(c_in, w, k, **kw)
            self.convs.append(layer)
            self.norms.append(BatchNorm(w, dtype=dtype))
        self.dropout_rng = np.random.default_rng(arch.seed + 1)
        head_in = w
        if arch.head == "flatten":
            head_in = w * (self.spec.order if self.spec is not None else 1) * self._final_hw() ** 2
        self.classifier = Linear(head_in, arch.n_classes, rng=rng, dtype=dtype)

    # geometry -------------------------------------------------------------
    def spatial_sizes(self) -> list[tuple[int, int]]:
        """``(input, output)`` side length of every convolution."""
        a, size, out = self.arch, self.arch.input_size, []
        for i in range(a.n_layers):
            k = a.final_kernel_size if i == a.n_layers - 1 else a.kernel_size
            new = size if a.padding == "same" else size - k + 1
            if new < 1:
                raise ValueError(f"input size {a.input_size} too small for {a.n_layers} layers")
            out.append((size, new))
            size = new // 2 if i + 1 == a.pool_after else new
        return out

    def _final_hw(self) -> int:
        return self.spatial_sizes()[-1][1]

    # forward ---------------------------------------------------------------
    def features(self, x, path: str = "efficient") -> list[Tensor]:
        """Post-activation feature maps of every convolution."""
        x = as_tensor(x, self.arch.np_dtype)
        outs = []
        for i, (conv, norm) in enumerate(zip(self.convs, self.norms)):
            if isinstance(conv, (SepGConvG, SepGConvGC)):
                x = conv(x, path=path)
            else:
                x = conv(x)
            x = Fn.relu(norm(x))
            if i + 1 == self.arch.pool_after:
                x = Fn.maxpool2d(x, 2)
                x = Fn.dropout(x, self.arch.dropout, self.dropout_rng, self.training)
            outs.append(x)
        return outs

    def forward(self, x, path: str = "efficient") -> Tensor:
        x = self.features(x, path)[-1]
        B = x.shape[0]
        if self.arch.head == "flatten":
            return self.classifier(x.reshape(B, -1))
        if self.spec is not None:
            x = group_coset_pool(x, "max")
        return self.classifier(Fn.max_reduce(x, (-2, -1)))

    # introspection ---------------------------------------------------------
    def group_filter_banks(self) -> list[tuple[str, np.ndarray]]:
        """``[C_out, C_in, G, k, k]`` banks of the layers after the lifting layer."""
        if self.spec is None:
            return []
        return [(f"layer{i + 1}", conv.full_filter()) for i, conv in enumerate(self.convs) if i > 0]

    def describe(self, exact_input: bool = False) -> tuple[list[tuple[str, LayerShape]], list[tuple[str, int]]]:
        """Layer shapes for the cost model plus per-layer normalisation parameter counts.

        With ``exact_input`` the true input resolution of each layer is recorded,
        so separable layers count their pointwise stage where it actually runs.
        """
        a, w = self.arch, self.arch.width
        G = self.spec.order if self.spec is not None else 1
        layers = []
        for i, (s_in, s_out) in enumerate(self.spatial_sizes()):
            k = a.final_kernel_size if i == a.n_layers - 1 else a.kernel_size
            c_in = 1 if i == 0 else w
            if self.spec is not None:
                kind = "lifting-gconv" if i == 0 else _LAYER_KIND[a.family]
                g_in = 1 if i == 0 else G
            else:
                kind = "regular" if i == 0 else _LAYER_KIND[a.family]
                g_in = 1
            extra = dict(H_in=s_in, W_in=s_in) if exact_input else {}
            layers.append((f"layer{i + 1}", LayerShape(kind, c_in, w, k, s_out, s_out, g_in,
                                                        G, bias=a.bias, **extra)))
        head_in = self.classifier.weight.shape[1]
        layers.append(("classifier", LayerShape("regular", head_in, a.n_classes, 1, 1, 1, bias=True)))
        norms = [(f"bn{i + 1}", 2 * w) for i in range(a.n_layers)]
        return layers, norms

    def cost_report(self, exact_input: bool = False) -> NetworkReport:
        layers, norms = self.describe(exact_input)
        return network_report(layers, norms)


def build(arch: ArchitectureConfig) -> Network:
    return Network(arch)
