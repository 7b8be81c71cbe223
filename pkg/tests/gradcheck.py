"""Central finite-difference gradient checks in float64."""

from __future__ import annotations

import numpy as np

from sepgconv.tensor import backward

STEP = 1e-5


def numeric_grad(loss_fn, array: np.ndarray, n_probe: int | None = None, rng=None) -> tuple[np.ndarray, np.ndarray]:
    """Finite differences of ``loss_fn()`` w.r.t. entries of ``array`` (modified in place, restored)."""
    flat = array.reshape(-1)
    idx = np.arange(flat.size)
    if n_probe is not None and n_probe < flat.size:
        idx = (rng or np.random.default_rng(0)).choice(flat.size, n_probe, replace=False)
    out = np.empty(len(idx))
    for j, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + STEP
        up = loss_fn()
        flat[i] = old - STEP
        down = loss_fn()
        flat[i] = old
        out[j] = (up - down) / (2 * STEP)
    return idx, out


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = np.maximum(np.abs(analytic), np.abs(numeric)).max()
    return float(np.abs(analytic - numeric).max() / max(scale, 1e-12))


def check_params(forward, params, probe: np.ndarray, n_probe: int = 20, rng=None) -> dict[str, float]:
    """Relative error per named parameter for the loss ``sum(forward() * probe)``."""

    def loss_value():
        return float((forward().data * probe).sum())

    for p in params.values():
        p.zero_grad()
    out = forward()
    backward((out * probe).sum())
    errors = {}
    for name, p in params.items():
        analytic = p.grad.reshape(-1).copy()
        idx, numeric = numeric_grad(loss_value, p.data, n_probe, rng)
        errors[name] = relative_error(analytic[idx], numeric)
    return errors
