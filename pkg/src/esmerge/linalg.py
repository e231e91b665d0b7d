"""Deterministic dense kernels: thin SVD, symmetric eigendecomposition,
polar-factor whitening, and PCA of activation-shift matrices.

All factorizations run in float64 and apply a fixed sign convention (the
largest-magnitude entry of each singular/eigen vector is made non-negative,
ties broken by lowest index) so identical inputs produce identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Eigenvalues smaller than this fraction of the largest are round-off noise.
_EIG_CLAMP_REL = 1e-12
_SYM_TOL = 1e-8


@dataclass(frozen=True)
class SvdFactors:
    """Thin SVD M = U @ diag(S) @ V.T with r = min(m, n)."""

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray


@dataclass(frozen=True)
class EigFactors:
    """Symmetric eigendecomposition, values non-increasing, column i of
    vectors paired with values[i]."""

    values: np.ndarray
    vectors: np.ndarray


def _require_finite(M: np.ndarray, op: str) -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise ValueError(f"{op} expects a 2-D matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{op}: input contains non-finite entries")
    return M


def _fix_signs(vectors: np.ndarray, *companions: np.ndarray) -> None:
    """Flip columns (in place) so each column's largest-|entry| is >= 0.

    Companion matrices (e.g. V paired with U) are flipped with the same
    signs to preserve the factorization.
    """
    if vectors.shape[1] == 0:
        return
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.where(vectors[idx, np.arange(vectors.shape[1])] < 0, -1.0, 1.0)
    vectors *= signs
    for other in companions:
        other *= signs


def thin_svd(M: np.ndarray) -> SvdFactors:
    """Thin SVD with deterministic signs; r = min(m, n)."""
    M = _require_finite(M, "thin_svd")
    U, S, Vh = np.linalg.svd(M, full_matrices=False)
    V = Vh.T.copy()
    U = U.copy()
    _fix_signs(U, V)
    return SvdFactors(U=U, S=S, V=V)


def sym_eig(S: np.ndarray) -> EigFactors:
    """Eigendecomposition of a symmetric PSD matrix, values non-increasing.

    Symmetry is enforced within a tolerance scaled to the largest entry;
    negative round-off eigenvalues (and anything below 1e-12 of the largest)
    are clamped to zero.
    """
    S = _require_finite(S, "sym_eig")
    if S.shape[0] != S.shape[1]:
        raise ValueError(f"sym_eig expects a square matrix, got {S.shape}")
    scale = max(1.0, float(np.abs(S).max()) if S.size else 0.0)
    asym = float(np.abs(S - S.T).max()) if S.size else 0.0
    if asym > _SYM_TOL * scale:
        raise ValueError(f"sym_eig: input asymmetric (max |S - S.T| = {asym:g})")
    sym = (S + S.T) / 2.0
    values, vectors = np.linalg.eigh(sym)
    order = np.argsort(-values, kind="stable")
    values = values[order]
    vectors = vectors[:, order].copy()
    top = max(float(values[0]) if values.size else 0.0, 0.0)
    values = np.where(values < _EIG_CLAMP_REL * top, 0.0, values)
    _fix_signs(vectors)
    return EigFactors(values=values, vectors=vectors)


def whiten(M: np.ndarray) -> np.ndarray:
    """Polar (orthogonal) factor U @ V.T from the thin SVD.

    Equals M @ (M.T M)^(-1/2) whenever M has full column rank; invariant to
    positive rescaling of M.
    """
    f = thin_svd(M)
    return f.U @ f.V.T


def pca_basis(shift: np.ndarray, centered: bool = False) -> EigFactors:
    """Principal directions of an n x d shift matrix.

    Uncentered (default) decomposes the second-moment matrix shift.T @
    shift / n; centered subtracts the column means first.
    """
    shift = _require_finite(shift, "pca_basis")
    n = shift.shape[0]
    if n < 1:
        raise ValueError("pca_basis: shift matrix has no rows")
    if centered:
        shift = shift - shift.mean(axis=0)
    moment = shift.T @ shift / n
    return sym_eig(moment)
