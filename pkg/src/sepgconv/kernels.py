"""Grouped 2D cross-correlation kernels.

Every convolution in the package (regular, grouped, depthwise, the spatial
stage of the separable GConvs) funnels into the three kernels below:

* ``conv_forward(xp, w, groups)``
* ``conv_backward_input(gy, w, groups, padded_shape)``
* ``conv_backward_weight(gy, xp, groups, k)``

``xp`` is always the already zero-padded input ``[B, C, Hp, Wp]`` and ``w`` is
``[O, C // groups, k, k]``.  Two implementations exist: explicit loops compiled
with numba, and a numpy path that accumulates one BLAS contraction per kernel
offset.  The backend is chosen with the ``SEPGCONV_BACKEND`` environment
variable: ``numba``, ``numpy``, or ``auto`` (the default), which sends dense
calls (``groups == 1``) to the BLAS path and grouped/depthwise calls to the
compiled loops, the faster of the two for each case on ``benchmarks/``.
``SEPGCONV_THREADS`` caps numba's thread pool (default 1).
"""

from __future__ import annotations

import contextlib
import os

import numpy as np

try:
    import numba
    from numba import njit, prange

    if "NUMBA_THREADING_LAYER" not in os.environ:
        numba.config.THREADING_LAYER = "workqueue"
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

BACKENDS = ("auto", "numba", "numpy")


def _initial_backend() -> str:
    name = os.environ.get("SEPGCONV_BACKEND", "auto").lower()
    if name not in BACKENDS:
        raise ValueError(f"SEPGCONV_BACKEND must be one of {BACKENDS}, got {name!r}")
    if name != "numpy" and not HAVE_NUMBA:
        name = "numpy"
    return name


_backend = _initial_backend()


def get_backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    global _backend
    if name not in BACKENDS:
        raise ValueError(f"backend must be one of {BACKENDS}, got {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not installed")
    _backend = name if HAVE_NUMBA or name == "numpy" else "numpy"


@contextlib.contextmanager
def use_backend(name: str):
    previous = _backend
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


def configure_threads(n: int | None = None) -> int:
    """Apply ``SEPGCONV_THREADS`` (or ``n``) to numba; returns the count in use."""
    if n is None:
        n = int(os.environ.get("SEPGCONV_THREADS", "1"))
    if n < 1:
        raise ValueError("thread count must be >= 1")
    if HAVE_NUMBA:
        n = min(n, numba.config.NUMBA_NUM_THREADS)
        numba.set_num_threads(n)
    return n


def _check(xp: np.ndarray, w: np.ndarray, groups: int) -> None:
    if xp.ndim != 4 or w.ndim != 4:
        raise ValueError(f"expected 4-d input and weight, got {xp.shape} and {w.shape}")
    if w.shape[2] != w.shape[3]:
        raise ValueError(f"kernels must be square, got {w.shape[2]}x{w.shape[3]}")
    C, O = xp.shape[1], w.shape[0]
    if groups < 1 or C % groups or O % groups:
        raise ValueError(f"groups={groups} must divide input channels {C} and output channels {O}")
    if w.shape[1] != C // groups:
        raise ValueError(
            f"weight expects {w.shape[1]} channels per group, input provides {C // groups}"
        )
    if xp.shape[2] < w.shape[2] or xp.shape[3] < w.shape[3]:
        raise ValueError(f"kernel {w.shape[2]} larger than padded input {xp.shape[2:]}")


# ---------------------------------------------------------------------------
# numpy path
# ---------------------------------------------------------------------------


def _np_forward(xp, w, groups):
    B, C, Hp, Wp = xp.shape
    O, Cg, k, _ = w.shape
    Og = O // groups
    Ho, Wo = Hp - k + 1, Wp - k + 1
    xg = xp.reshape(B, groups, Cg, Hp, Wp)
    wg = w.reshape(groups, Og, Cg, k, k)
    out = np.zeros((B, groups, Og, Ho, Wo), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            xs = xg[:, :, :, i : i + Ho, j : j + Wo]
            if groups == 1:
                out[:, 0] += np.einsum("oc,bchw->bohw", wg[0, :, :, i, j], xs[:, 0], optimize=True)
            elif Cg == 1:
                out += wg[None, :, :, 0, i, j, None, None] * xs
            else:
                out += np.matmul(
                    wg[None, :, :, :, i, j], xs.reshape(B, groups, Cg, Ho * Wo)
                ).reshape(B, groups, Og, Ho, Wo)
    return out.reshape(B, O, Ho, Wo)


def _np_backward_input(gy, w, groups, padded_shape):
    B, C, Hp, Wp = padded_shape
    O, Cg, k, _ = w.shape
    Og = O // groups
    Ho, Wo = gy.shape[2], gy.shape[3]
    gyg = gy.reshape(B, groups, Og, Ho, Wo)
    wg = w.reshape(groups, Og, Cg, k, k)
    gx = np.zeros((B, groups, Cg, Hp, Wp), dtype=gy.dtype)
    for i in range(k):
        for j in range(k):
            if groups == 1:
                contrib = np.einsum("oc,bohw->bchw", wg[0, :, :, i, j], gyg[:, 0], optimize=True)
                gx[:, 0, :, i : i + Ho, j : j + Wo] += contrib
            elif Og == 1:
                gx[:, :, :, i : i + Ho, j : j + Wo] += wg[None, :, 0, :, i, j, None, None] * gyg
            else:
                contrib = np.matmul(
                    np.swapaxes(wg[None, :, :, :, i, j], -1, -2),
                    gyg.reshape(B, groups, Og, Ho * Wo),
                )
                gx[:, :, :, i : i + Ho, j : j + Wo] += contrib.reshape(B, groups, Cg, Ho, Wo)
    return gx.reshape(B, C, Hp, Wp)


def _np_backward_weight(gy, xp, groups, k):
    B, C, Hp, Wp = xp.shape
    O = gy.shape[1]
    Cg, Og = C // groups, O // groups
    Ho, Wo = gy.shape[2], gy.shape[3]
    xg = xp.reshape(B, groups, Cg, Hp, Wp)
    gyg = gy.reshape(B, groups, Og, Ho * Wo)
    gw = np.zeros((groups, Og, Cg, k, k), dtype=gy.dtype)
    for i in range(k):
        for j in range(k):
            xs = xg[:, :, :, i : i + Ho, j : j + Wo].reshape(B, groups, Cg, Ho * Wo)
            if groups == 1:
                gw[0, :, :, i, j] = np.tensordot(gyg[:, 0], xs[:, 0], axes=([0, 2], [0, 2]))
            else:
                gw[:, :, :, i, j] = np.matmul(gyg, np.swapaxes(xs, -1, -2)).sum(axis=0)
    return gw.reshape(O, Cg, k, k)


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True, parallel=True)
    def _nb_forward(xp, w, groups, out):
        B, C, Hp, Wp = xp.shape
        O, Cg, k, _ = w.shape
        Og = O // groups
        Ho, Wo = out.shape[2], out.shape[3]
        for b in prange(B):
            for o in range(O):
                c0 = (o // Og) * Cg
                for c in range(Cg):
                    for i in range(k):
                        for j in range(k):
                            f = w[o, c, i, j]
                            for y in range(Ho):
                                for x in range(Wo):
                                    out[b, o, y, x] += f * xp[b, c0 + c, y + i, x + j]
        return out

    @njit(cache=True, parallel=True)
    def _nb_backward_input(gy, w, groups, gx):
        B, O, Ho, Wo = gy.shape
        _, Cg, k, _ = w.shape
        Og = O // groups
        for b in prange(B):
            for o in range(O):
                c0 = (o // Og) * Cg
                for c in range(Cg):
                    for i in range(k):
                        for j in range(k):
                            f = w[o, c, i, j]
                            for y in range(Ho):
                                for x in range(Wo):
                                    gx[b, c0 + c, y + i, x + j] += f * gy[b, o, y, x]
        return gx

    # fastmath lets the inner reduction vectorize; the summation order is
    # still fixed per compiled kernel, so results stay reproducible.
    @njit(cache=True, parallel=True, fastmath=True)
    def _nb_backward_weight(gy, xp, groups, gw):
        B, O, Ho, Wo = gy.shape
        _, Cg, k, _ = gw.shape
        Og = O // groups
        for o in prange(O):
            c0 = (o // Og) * Cg
            for b in range(B):
                for c in range(Cg):
                    for i in range(k):
                        for j in range(k):
                            acc = gw[o, c, i, j]
                            for y in range(Ho):
                                for x in range(Wo):
                                    acc += gy[b, o, y, x] * xp[b, c0 + c, y + i, x + j]
                            gw[o, c, i, j] = acc
        return gw


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def _use_numba(groups: int) -> bool:
    return _backend == "numba" or (_backend == "auto" and groups > 1)


def conv_forward(xp: np.ndarray, w: np.ndarray, groups: int = 1) -> np.ndarray:
    """Grouped valid cross-correlation of a padded input."""
    _check(xp, w, groups)
    xp = np.ascontiguousarray(xp)
    w = np.ascontiguousarray(w, dtype=xp.dtype)
    if _use_numba(groups):
        k = w.shape[2]
        out = np.zeros((xp.shape[0], w.shape[0], xp.shape[2] - k + 1, xp.shape[3] - k + 1), xp.dtype)
        return _nb_forward(xp, w, groups, out)
    return _np_forward(xp, w, groups)


def conv_backward_input(
    gy: np.ndarray, w: np.ndarray, groups: int, padded_shape: tuple[int, ...]
) -> np.ndarray:
    """Gradient of ``conv_forward`` with respect to its padded input."""
    gy = np.ascontiguousarray(gy)
    w = np.ascontiguousarray(w, dtype=gy.dtype)
    if _use_numba(groups):
        gx = np.zeros(padded_shape, dtype=gy.dtype)
        return _nb_backward_input(gy, w, groups, gx)
    return _np_backward_input(gy, w, groups, padded_shape)


def conv_backward_weight(gy: np.ndarray, xp: np.ndarray, groups: int, k: int) -> np.ndarray:
    """Gradient of ``conv_forward`` with respect to its weight."""
    gy = np.ascontiguousarray(gy)
    xp = np.ascontiguousarray(xp, dtype=gy.dtype)
    if _use_numba(groups):
        gw = np.zeros((gy.shape[1], xp.shape[1] // groups, k, k), dtype=gy.dtype)
        return _nb_backward_weight(gy, xp, groups, gw)
    return _np_backward_weight(gy, xp, groups, k)
