"""Closed-form parameter and multiply-accumulate counts.

Only convolution MACs are counted (no bias, normalization, pooling or
activation work).  ``H`` and ``W`` are the *output* spatial size.  With the
default ``H_in = W_in = None`` the input is taken to be the same size
('same' padding), which gives the textbook formulas; passing the true input
size makes the pointwise stage of the separable kinds, which runs before the
spatial kernel, count at the resolution it actually operates on.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

KINDS = ("regular", "lifting-gconv", "full-gconv", "g-sep", "gc-sep", "depthwise-sep")


@dataclass(frozen=True)
class LayerShape:
    kind: str
    C_in: int
    C_out: int
    k: int
    H: int
    W: int
    G_in: int = 1
    G_out: int = 1
    H_in: int | None = None
    W_in: int | None = None
    bias: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}; expected one of {KINDS}")
        for name in ("C_in", "C_out", "k", "H", "W", "G_in", "G_out"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.kind in ("regular", "depthwise-sep") and (self.G_in, self.G_out) != (1, 1):
            raise ValueError(f"{self.kind} layers have no group axis (G_in = G_out = 1)")
        if self.kind == "lifting-gconv" and self.G_in != 1:
            raise ValueError("lifting layers take plain images (G_in = 1)")

    @property
    def input_hw(self) -> tuple[int, int]:
        return (self.H if self.H_in is None else self.H_in, self.W if self.W_in is None else self.W_in)


def count_params(s: LayerShape) -> int:
    """Stored weights, excluding bias (see :func:`count_bias`)."""
    k2 = s.k * s.k
    if s.kind == "regular":
        return s.C_in * s.C_out * k2
    if s.kind == "depthwise-sep":
        return s.C_in * k2 + s.C_in * s.C_out
    if s.kind in ("lifting-gconv", "full-gconv"):
        return s.C_in * s.G_in * k2 * s.C_out
    if s.kind == "g-sep":
        return s.C_in * s.C_out * (s.G_in + k2)
    if s.kind == "gc-sep":
        return s.C_out * (s.C_in * s.G_in + k2)
    raise ValueError(f"invalid kind {s.kind!r}")


def count_bias(s: LayerShape) -> int:
    return s.C_out if s.bias else 0


def count_macs(s: LayerShape) -> int:
    k2 = s.k * s.k
    hw = s.H * s.W
    h_in, w_in = s.input_hw
    hw_in = h_in * w_in
    if s.kind == "regular":
        return s.C_in * k2 * s.C_out * hw
    if s.kind == "depthwise-sep":
        return s.C_in * k2 * hw + s.C_in * s.C_out * hw
    if s.kind in ("lifting-gconv", "full-gconv"):
        return s.C_in * s.G_in * k2 * s.C_out * s.G_out * hw
    if s.kind == "g-sep":
        return s.C_in * s.C_out * s.G_out * (s.G_in * hw_in + k2 * hw)
    if s.kind == "gc-sep":
        return s.C_out * s.G_out * (s.C_in * s.G_in * hw_in + k2 * hw)
    raise ValueError(f"invalid kind {s.kind!r}")


def full_counterpart(s: LayerShape) -> LayerShape:
    """The undecomposed layer a separable shape replaces."""
    if s.kind in ("g-sep", "gc-sep"):
        kind = "full-gconv"
    elif s.kind == "depthwise-sep":
        kind = "regular"
    else:
        return s
    return LayerShape(kind, s.C_in, s.C_out, s.k, s.H, s.W, s.G_in, s.G_out, s.H_in, s.W_in, s.bias)


def reduction_factor(s: LayerShape) -> Fraction:
    """Cost of ``s`` relative to its undecomposed counterpart, as an exact rational.

    Holds for parameters always and for MACs under 'same' padding.
    """
    k2 = s.k * s.k
    if s.kind == "g-sep":
        return Fraction(1, k2) + Fraction(1, s.G_in)
    if s.kind == "gc-sep":
        return Fraction(1, k2) + Fraction(1, s.C_in * s.G_in)
    if s.kind == "depthwise-sep":
        return Fraction(1, k2) + Fraction(1, s.C_out)
    return Fraction(1)


@dataclass(frozen=True)
class CostReport:
    name: str
    kind: str
    params: int
    bias_params: int
    macs: int
    reduction_vs_full: Fraction

    @property
    def beneficial(self) -> bool:
        """False when the decomposition costs at least as much as the full layer."""
        return self.reduction_vs_full < 1 or self.kind not in ("g-sep", "gc-sep", "depthwise-sep")


def layer_report(name: str, s: LayerShape) -> CostReport:
    return CostReport(name, s.kind, count_params(s), count_bias(s), count_macs(s), reduction_factor(s))


@dataclass
class NetworkReport:
    layers: list[CostReport]
    norm_params: dict[str, int] = field(default_factory=dict)

    @property
    def conv_params(self) -> int:
        return sum(r.params for r in self.layers)

    @property
    def bias_params(self) -> int:
        return sum(r.bias_params for r in self.layers)

    @property
    def total_params(self) -> int:
        return self.conv_params + self.bias_params + sum(self.norm_params.values())

    @property
    def total_macs(self) -> int:
        return sum(r.macs for r in self.layers)

    def rows(self) -> list[dict]:
        out = [
            {"layer": r.name, "kind": r.kind, "params": r.params + r.bias_params, "macs": r.macs,
             "reduction": str(r.reduction_vs_full) + ("" if r.beneficial else " (not beneficial)")}
            for r in self.layers
        ]
        for name, n in self.norm_params.items():
            out.append({"layer": name, "kind": "batchnorm", "params": n, "macs": 0, "reduction": "1"})
        out.append({"layer": "total", "kind": "", "params": self.total_params,
                    "macs": self.total_macs, "reduction": ""})
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=["layer", "kind", "params", "macs", "reduction"],
                                lineterminator="\n")
        writer.writeheader()
        writer.writerows(self.rows())
        return buf.getvalue()

    def to_text(self) -> str:
        rows = self.rows()
        lines = [f"{'layer':<14} {'kind':<14} {'params':>10} {'macs':>14} reduction"]
        for r in rows:
            lines.append(f"{r['layer']:<14} {r['kind']:<14} {r['params']:>10,} {r['macs']:>14,} {r['reduction']}")
        return "\n".join(lines)


def network_report(
    layers: Sequence[tuple[str, LayerShape]], norm_params: Iterable[tuple[str, int]] = ()
) -> NetworkReport:
    """Per-layer and total costs for a list of named layer shapes."""
    return NetworkReport([layer_report(n, s) for n, s in layers], dict(norm_params))
