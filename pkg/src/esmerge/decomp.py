"""Task-matrix decomposition in the activation-shift principal subspace,
plus the truncated-SVD baseline, truncation-error formulas, energy curves,
and the per-task rank budget.

The shift-aware route factors an update dW through the top principal
directions of X @ dW.T, so the truncation error on the sample X equals the
sum of the discarded eigenvalues; plain SVD truncation has no such
guarantee because it ignores the input distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import pca_basis, thin_svd


@dataclass(frozen=True)
class EsdFactors:
    """Shift-aware factorization dW ~= basis @ coords, truncated to rank k.

    basis: d_out x k orthonormal principal directions of the activation
    shift; coords = basis.T @ dW; spectrum holds all d_out eigenvalues.
    """

    basis: np.ndarray
    coords: np.ndarray
    spectrum: np.ndarray
    k: int

    def reconstruct(self) -> np.ndarray:
        return self.basis @ self.coords


@dataclass(frozen=True)
class SvdTruncFactors:
    """Rank-k SVD truncation: left @ coords is the best Frobenius rank-k
    approximation; spectrum holds all singular values."""

    left: np.ndarray
    coords: np.ndarray
    spectrum: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return self.left @ self.coords


def activation_shift(X: np.ndarray, dW: np.ndarray) -> np.ndarray:
    """Output-space footprint X @ dW.T of the update on the sample rows."""
    X = np.asarray(X, dtype=np.float64)
    dW = np.asarray(dW, dtype=np.float64)
    if X.ndim != 2 or dW.ndim != 2:
        raise ValueError("activation_shift expects 2-D X and dW")
    if X.shape[1] != dW.shape[1]:
        raise ValueError(
            f"activation_shift: X has {X.shape[1]} columns, dW expects {dW.shape[1]}"
        )
    return X @ dW.T


def esd(dW: np.ndarray, X: np.ndarray, k: int, centered: bool = False) -> EsdFactors:
    """Factor dW through the top-k principal directions of its shift on X.

    A shift that is exactly zero (zero update or degenerate sample) yields
    the first k canonical directions and an all-zero spectrum, keeping the
    pipeline total.
    """
    dW = np.asarray(dW, dtype=np.float64)
    d_out = dW.shape[0]
    if not 1 <= k <= d_out:
        raise ValueError(f"esd: rank k={k} out of range [1, {d_out}]")
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] < 1:
        raise ValueError("esd: proxy sample X is empty")
    shift = activation_shift(X, dW)
    if not shift.any():
        basis = np.eye(d_out, k)
        return EsdFactors(basis=basis, coords=basis.T @ dW, spectrum=np.zeros(d_out), k=k)
    eig = pca_basis(shift, centered=centered)
    basis = eig.vectors[:, :k]
    return EsdFactors(basis=basis, coords=basis.T @ dW, spectrum=eig.values, k=k)


def svd_truncate(dW: np.ndarray, k: int) -> SvdTruncFactors:
    """Keep the top-k singular triplets of dW."""
    dW = np.asarray(dW, dtype=np.float64)
    r = min(dW.shape)
    if not 1 <= k <= r:
        raise ValueError(f"svd_truncate: rank k={k} out of range [1, {r}]")
    f = thin_svd(dW)
    coords = f.S[:k, None] * f.V[:, :k].T
    return SvdTruncFactors(left=f.U[:, :k], coords=coords, spectrum=f.S)


def expected_error_esd(spectrum: np.ndarray, k: int) -> float:
    """Sum of the discarded eigenvalues (k and beyond)."""
    spectrum = np.asarray(spectrum, dtype=np.float64)
    if k >= spectrum.size:
        return 0.0
    return float(np.sum(spectrum[max(k, 0):]))


def expected_error_svd(
    factors: SvdTruncFactors, V_full: np.ndarray, X: np.ndarray, k: int
) -> float:
    """Closed-form truncation error: sum of sigma_i^2 * mean (v_i . x)^2
    over the discarded components, with the mean taken over rows of X."""
    spectrum = np.asarray(factors.spectrum, dtype=np.float64)
    V_full = np.asarray(V_full, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] < 1:
        raise ValueError("expected_error_svd: X is empty")
    if V_full.shape[0] != X.shape[1]:
        raise ValueError(
            f"expected_error_svd: V has {V_full.shape[0]} rows, X has {X.shape[1]} columns"
        )
    if k >= spectrum.size:
        return 0.0
    proj = X @ V_full[:, k:]
    mean_sq = np.mean(proj**2, axis=0)
    return float(np.sum(spectrum[k:] ** 2 * mean_sq))


def empirical_error(dW: np.ndarray, dW_hat: np.ndarray, X: np.ndarray) -> float:
    """Mean squared output discrepancy over the rows of X."""
    dW = np.asarray(dW, dtype=np.float64)
    dW_hat = np.asarray(dW_hat, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if dW.shape != dW_hat.shape:
        raise ValueError(f"empirical_error: shapes differ {dW.shape} vs {dW_hat.shape}")
    if X.shape[1] != dW.shape[1]:
        raise ValueError(
            f"empirical_error: X has {X.shape[1]} columns, dW expects {dW.shape[1]}"
        )
    residual = X @ (dW - dW_hat).T
    return float(np.mean(np.sum(residual**2, axis=1)))


def energy_retention(spectrum: np.ndarray, mode: str) -> np.ndarray:
    """Cumulative retained-energy fractions; ends at exactly 1.0.

    svd mode squares the entries (singular values), esd mode uses them
    directly (eigenvalues are already variances).
    """
    spectrum = np.asarray(spectrum, dtype=np.float64)
    if mode == "svd":
        energy = spectrum**2
    elif mode == "esd":
        energy = spectrum.copy()
    else:
        raise ValueError(f"energy_retention: unknown mode {mode!r}")
    if spectrum.size == 0 or not energy.any():
        raise ValueError("energy_retention: spectrum is all zero")
    cum = np.cumsum(energy)
    return cum / cum[-1]


def rank_budget(d_out: int, T: int, ratio: float = 1.0) -> int:
    """Per-task retained rank floor(ratio * d_out / T), clamped to [1, d_out]."""
    if T < 1:
        raise ValueError(f"rank_budget: task count T={T} must be >= 1")
    if d_out < T:
        raise ValueError(f"rank_budget: d_out={d_out} < T={T} gives a zero budget")
    if ratio <= 0:
        raise ValueError(f"rank_budget: ratio {ratio} must be positive")
    k = math.floor(ratio * d_out / T)
    return max(1, min(k, d_out))
