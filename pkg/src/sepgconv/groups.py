"""Point groups of p4 (C4) and p4m (D4) and their actions on kernels and feature maps.

Elements are plain integer indices.  C4 is ``{r0, r1, r2, r3}`` with ``r1`` a
90 degree counter-clockwise rotation.  D4 extends it with ``m*r0 .. m*r3`` at
indices 4..7, where ``m`` mirrors columns.  An element ``m^s r^i`` acts on a
square array by rotating ``i`` times and then mirroring if ``s == 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

GroupElement = int


@dataclass(frozen=True)
class GroupSpec:
    kind: str
    order: int
    cayley: np.ndarray = field(repr=False, compare=False)
    inverse: np.ndarray = field(repr=False, compare=False)

    @property
    def name(self) -> str:
        return {"C4": "p4", "D4": "p4m"}[self.kind]

    def elements(self) -> range:
        return range(self.order)

    def label(self, g: GroupElement) -> str:
        check_element(self, g)
        s, i = divmod(g, 4)
        return f"m*r{i}" if s else f"r{i}"


def _d4_compose(a: int, b: int) -> int:
    # m^s1 r^i1 . m^s2 r^i2 = m^(s1+s2) r^((-1)^s2 * i1 + i2), using r m = m r^-1
    s1, i1 = divmod(a, 4)
    s2, i2 = divmod(b, 4)
    i = ((-i1 if s2 else i1) + i2) % 4
    return 4 * ((s1 + s2) % 2) + i


def _build(kind: str) -> GroupSpec:
    if kind == "C4":
        order = 4
        cayley = np.array([[(a + b) % 4 for b in range(4)] for a in range(4)], dtype=np.intp)
    elif kind == "D4":
        order = 8
        cayley = np.array([[_d4_compose(a, b) for b in range(8)] for a in range(8)], dtype=np.intp)
    else:
        raise ValueError(f"unknown group kind {kind!r}; expected 'C4' or 'D4'")
    inverse = np.array([int(np.flatnonzero(cayley[g] == 0)[0]) for g in range(order)], dtype=np.intp)
    cayley.setflags(write=False)
    inverse.setflags(write=False)
    return GroupSpec(kind, order, cayley, inverse)


@lru_cache(maxsize=None)
def group(name: str) -> GroupSpec:
    """Look up a group by ``"p4"``/``"C4"`` or ``"p4m"``/``"D4"``."""
    kind = {"p4": "C4", "c4": "C4", "p4m": "D4", "d4": "D4"}.get(name.lower())
    if kind is None:
        raise ValueError(f"unknown group {name!r}; expected p4 or p4m")
    return _build(kind)


P4 = group("p4")
P4M = group("p4m")


def check_element(spec: GroupSpec, g: GroupElement) -> None:
    if not isinstance(g, (int, np.integer)) or not 0 <= g < spec.order:
        raise ValueError(f"group element {g!r} out of range for {spec.kind} (order {spec.order})")


def compose(spec: GroupSpec, a: GroupElement, b: GroupElement) -> GroupElement:
    check_element(spec, a)
    check_element(spec, b)
    return int(spec.cayley[a, b])


def inverse(spec: GroupSpec, g: GroupElement) -> GroupElement:
    check_element(spec, g)
    return int(spec.inverse[g])


def act_on_kernel(spec: GroupSpec, g: GroupElement, K: np.ndarray) -> np.ndarray:
    """Exact rotation/reflection of the last two (square) axes of ``K``."""
    check_element(spec, g)
    K = np.asarray(K)
    if K.ndim < 2 or K.shape[-1] != K.shape[-2]:
        raise ValueError(f"kernel must be square in its last two axes, got shape {K.shape}")
    s, i = divmod(g, 4)
    out = np.rot90(K, i, axes=(-2, -1))
    if s:
        out = out[..., ::-1]
    return np.ascontiguousarray(out)


def permute_group_axis(spec: GroupSpec, h: GroupElement, X: np.ndarray, axis: int = -3) -> np.ndarray:
    """Regular representation: ``out[..., g, ...] = X[..., h^-1 g, ...]``."""
    X = np.asarray(X)
    if X.shape[axis] != spec.order:
        raise ValueError(
            f"group axis {axis} has size {X.shape[axis]}, expected {spec.order} for {spec.kind}"
        )
    return np.take(X, permutation(spec, h), axis=axis)


def permutation(spec: GroupSpec, h: GroupElement) -> np.ndarray:
    """Index array ``idx`` with ``idx[g] = h^-1 g``."""
    check_element(spec, h)
    return spec.cayley[spec.inverse[h]].copy()


def transform_image(spec: GroupSpec, g: GroupElement, X: np.ndarray) -> np.ndarray:
    """Spatial action on plain images (last two axes)."""
    return act_on_kernel(spec, g, X)


def transform_feature_map(spec: GroupSpec, g: GroupElement, X: np.ndarray, group_axis: int = -3) -> np.ndarray:
    """Action on group feature maps: spatial transform plus group-axis permutation."""
    return permute_group_axis(spec, g, act_on_kernel(spec, g, X), axis=group_axis)


# ---------------------------------------------------------------------------
# filter expansion
# ---------------------------------------------------------------------------


def _expand_reference(spec: GroupSpec, F: np.ndarray) -> np.ndarray:
    C_out, C_in, G_in, k, _ = F.shape
    G = spec.order
    if G_in == 1:
        out = np.empty((C_out, G, C_in, k, k), dtype=F.dtype)
        for h in range(G):
            out[:, h] = act_on_kernel(spec, h, F[:, :, 0])
        return out
    out = np.empty((C_out, G, C_in, G_in, k, k), dtype=F.dtype)
    for h in range(G):
        out[:, h] = act_on_kernel(spec, h, F[:, :, permutation(spec, h)])
    return out


def expand_full_filter(spec: GroupSpec, F: np.ndarray) -> np.ndarray:
    """Build the full bank ``F~[n,h,c,g] = T_h(F[n, c, h^-1 g])``.

    ``F`` is ``[C_out, C_in, G_in, k, k]`` with ``G_in`` equal to the group
    order, or 1 for a lifting layer; the lifting result is ``[C_out, G, C_in, k, k]``.
    """
    F = np.asarray(F)
    if F.ndim != 5 or F.shape[-1] != F.shape[-2]:
        raise ValueError(f"filter bank must be [C_out, C_in, G_in, k, k], got shape {F.shape}")
    if F.shape[2] not in (1, spec.order):
        raise ValueError(f"G_in must be 1 or {spec.order} for {spec.kind}, got {F.shape[2]}")
    return _expand_reference(spec, F)


def expand_separable_pointwise(spec: GroupSpec, w: np.ndarray) -> np.ndarray:
    """``w~[n,h,c,g] = w[n, c, h^-1 g]`` for ``w`` of shape ``[C_out, C_in, G_in]``."""
    w = np.asarray(w)
    if w.ndim != 3 or w.shape[2] != spec.order:
        raise ValueError(f"pointwise weights must be [C_out, C_in, {spec.order}], got shape {w.shape}")
    return np.stack([w[:, :, permutation(spec, h)] for h in range(spec.order)], axis=1)


@lru_cache(maxsize=None)
def full_filter_index(kind: str, G_in: int, k: int) -> np.ndarray:
    """Flat gather indices mapping ``F[n,c].ravel()`` to ``F~[n,:,c]``.

    Returns an array of shape ``[G, G_in, k, k]`` (``[G, k, k]`` when ``G_in == 1``)
    whose entries index into the ``G_in*k*k`` stored values of one (n, c) filter set.
    Expanding an ``arange`` of those values makes the index table exact by construction.
    """
    spec = _build(kind)
    probe = np.arange(G_in * k * k).reshape(1, 1, G_in, k, k)
    idx = np.ascontiguousarray(expand_full_filter(spec, probe)[0][:, 0])
    idx.setflags(write=False)
    return idx


@lru_cache(maxsize=None)
def pointwise_index(kind: str) -> np.ndarray:
    """``[G, G]`` table with ``idx[h, g] = h^-1 g``."""
    spec = _build(kind)
    idx = np.stack([permutation(spec, h) for h in range(spec.order)])
    idx.setflags(write=False)
    return idx
