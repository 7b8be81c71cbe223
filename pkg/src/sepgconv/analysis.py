"""Inter-group filter redundancy: PC1 explained-variance ratios and rank-1 fits.

A filter bank ``F[C_out, C_in, G, k, k]`` is viewed as ``C_out*C_in`` stacks
of ``G`` flattened kernels.  For each stack the singular values of the
``G x k^2`` matrix give the share of energy captured by the best single
shared kernel.  Singular values come from a batched one-sided Jacobi sweep,
which is exact enough for these tiny matrices and needs no LAPACK call.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

DEGENERATE_EPS = 1e-20


def jacobi_svd(A: np.ndarray, tol: float = 1e-15, max_sweeps: int = 60):
    """Batched one-sided Jacobi SVD of ``A[..., m, n]``.

    Returns ``(U, s, V)`` with ``A = U @ diag(s) @ V.T``; ``s`` is sorted in
    descending order.  Columns of ``A @ V`` are orthogonalised pairwise by
    plane rotations until every pair is orthogonal to within ``tol``.
    """
    A = np.array(A, dtype=np.float64)
    *batch, m, n = A.shape
    X = A.reshape(-1, m, n).copy()
    V = np.broadcast_to(np.eye(n), X.shape[:1] + (n, n)).copy()
    for _ in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                xp, xq = X[:, :, p], X[:, :, q]
                alpha = np.einsum("bi,bi->b", xp, xp)
                beta = np.einsum("bi,bi->b", xq, xq)
                gamma = np.einsum("bi,bi->b", xp, xq)
                active = np.abs(gamma) > tol * np.sqrt(alpha * beta)
                if not active.any():
                    continue
                rotated = True
                with np.errstate(over="ignore"):  # huge zeta just means a negligible rotation
                    zeta = np.where(active, (beta - alpha) / np.where(active, 2.0 * gamma, 1.0), 0.0)
                    t = np.sign(zeta) / (np.abs(zeta) + np.hypot(1.0, zeta))
                t = np.where(zeta == 0, 1.0, t)
                t = np.where(active, t, 0.0)
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                for M in (X, V):
                    mp, mq = M[:, :, p].copy(), M[:, :, q].copy()
                    M[:, :, p] = c[:, None] * mp - s[:, None] * mq
                    M[:, :, q] = s[:, None] * mp + c[:, None] * mq
        if not rotated:
            break
    sv = np.sqrt(np.einsum("bij,bij->bj", X, X))
    order = np.argsort(-sv, axis=1, kind="stable")
    sv = np.take_along_axis(sv, order, axis=1)
    X = np.take_along_axis(X, order[:, None, :], axis=2)
    V = np.take_along_axis(V, order[:, None, :], axis=2)
    U = np.divide(X, sv[:, None, :], out=np.zeros_like(X), where=sv[:, None, :] > 0)
    return (U.reshape(*batch, m, n), sv.reshape(*batch, n), V.reshape(*batch, n, n))


def _stacks(F: np.ndarray, centered: bool) -> np.ndarray:
    F = np.asarray(F, dtype=np.float64)
    if F.ndim != 5 or F.shape[-1] != F.shape[-2]:
        raise ValueError(f"filter bank must be [C_out, C_in, G, k, k], got shape {F.shape}")
    if F.shape[2] < 2:
        raise ValueError(f"redundancy along the group axis needs G >= 2, got G = {F.shape[2]}")
    C_out, C_in, G, k, _ = F.shape
    M = F.reshape(C_out * C_in, G, k * k)
    if centered:
        M = M - M.mean(axis=1, keepdims=True)  # mean kernel over the G observations
    return M


def singular_values(F: np.ndarray, centered: bool = False) -> np.ndarray:
    """``[C_out*C_in, min(G, k^2)]`` singular values of each group stack."""
    M = _stacks(F, centered)
    # orthogonalise the G kernel rows (columns of M^T); only min(G, k^2) are nonzero
    _, s, _ = jacobi_svd(np.swapaxes(M, 1, 2))
    return s[:, : min(M.shape[1], M.shape[2])]


def pc1_ratio(F: np.ndarray, centered: bool = False) -> np.ndarray:
    """Fraction of each stack's energy explained by its first principal component.

    Uncentered by default; ``centered=True`` subtracts the stack's mean kernel first.
    All-zero stacks are fully redundant and report 1.
    """
    s = singular_values(F, centered)
    energy = (s * s).sum(axis=1)
    degenerate = energy < DEGENERATE_EPS
    ratio = np.where(degenerate, 1.0, (s[:, 0] ** 2) / np.where(degenerate, 1.0, energy))
    return ratio


class Rank1Projection(NamedTuple):
    K: np.ndarray  # [C_out, C_in, k, k], unit Frobenius norm (or zero)
    w: np.ndarray  # [C_out, C_in, G]
    residual: np.ndarray  # [C_out, C_in], ||F - K w|| / ||F|| per stack

    @property
    def total_residual(self) -> float:
        """Relative Frobenius error over the whole bank."""
        r2 = self.residual ** 2
        return float(np.sqrt(r2.mean())) if r2.size else 0.0


def rank1_project(F: np.ndarray) -> Rank1Projection:
    """Least-squares fit ``F[n,c,g] ~ K[n,c] * w[n,c,g]`` for every (n, c).

    The sign is fixed so that ``w`` has a non-negative sum.
    """
    F = np.asarray(F, dtype=np.float64)
    M = _stacks(F, centered=False)
    C_out, C_in, G, k, _ = F.shape
    U, s, V = jacobi_svd(np.swapaxes(M, 1, 2))  # M^T = U diag(s) V^T
    kernel = U[:, :, 0]  # [N, k^2]
    weights = V[:, :, 0] * s[:, :1]  # [N, G]
    flip = np.where(weights.sum(axis=1) < 0, -1.0, 1.0)
    kernel, weights = kernel * flip[:, None], weights * flip[:, None]
    approx = weights[:, :, None] * kernel[:, None, :]
    norm = np.sqrt((M * M).sum(axis=(1, 2)))
    err = np.sqrt(((M - approx) ** 2).sum(axis=(1, 2)))
    residual = np.divide(err, norm, out=np.zeros_like(err), where=norm ** 2 >= DEGENERATE_EPS)
    return Rank1Projection(
        kernel.reshape(C_out, C_in, k, k), weights.reshape(C_out, C_in, G), residual.reshape(C_out, C_in)
    )


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray


def layer_histogram(ratios: np.ndarray, n_bins: int = 20) -> Histogram:
    """Counts over ``n_bins`` equal bins of [0, 1]; a ratio of exactly 1 lands in the last bin."""
    counts, edges = np.histogram(np.asarray(ratios, dtype=np.float64), bins=n_bins, range=(0.0, 1.0))
    return Histogram(edges, counts)


@dataclass
class RedundancyReport:
    layer: str
    ratios: np.ndarray  # [C_out, C_in]
    histogram: Histogram
    n_degenerate: int = 0
    centered: bool = False
    G: int = field(default=0)

    @property
    def mean_ratio(self) -> float:
        return float(self.ratios.mean())


def redundancy_report(layer: str, F: np.ndarray, centered: bool = False, n_bins: int = 20) -> RedundancyReport:
    F = np.asarray(F, dtype=np.float64)
    ratios = pc1_ratio(F, centered).reshape(F.shape[0], F.shape[1])
    M = _stacks(F, centered)
    n_degenerate = int(((M * M).sum(axis=(1, 2)) < DEGENERATE_EPS).sum())
    return RedundancyReport(layer, ratios, layer_histogram(ratios.ravel(), n_bins), n_degenerate,
                            centered, F.shape[2])


def ratios_csv(reports: list[RedundancyReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["layer", "n", "c", "ratio"])
    for rep in reports:
        for (n, c), r in np.ndenumerate(rep.ratios):
            writer.writerow([rep.layer, n, c, f"{r:.10f}"])
    return buf.getvalue()


def histogram_csv(reports: list[RedundancyReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["layer", "bin_lo", "bin_hi", "count"])
    for rep in reports:
        h = rep.histogram
        for lo, hi, n in zip(h.edges[:-1], h.edges[1:], h.counts):
            writer.writerow([rep.layer, f"{lo:.4f}", f"{hi:.4f}", int(n)])
    return buf.getvalue()
