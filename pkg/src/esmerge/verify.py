"""Numerical oracles for the truncation-error identities, the whitening /
polar-factor equivalence, the shift-aware-vs-SVD optimality inequality,
and linear CKA on feature matrices.

Each oracle draws random instances from a seeded generator, evaluates both
sides of the identity it certifies, and reports the worst deviation.
Relative deviations are floored at machine-epsilon times the total output
energy of the instance, so full-rank cases (true error exactly zero) are
judged against round-off scale rather than zero.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .decomp import (
    activation_shift,
    empirical_error,
    esd,
    expected_error_esd,
    expected_error_svd,
    svd_truncate,
)
from .linalg import thin_svd, whiten

_EPS = float(np.finfo(np.float64).eps)


@dataclass(frozen=True)
class OracleReport:
    name: str
    trials: int
    seed: int
    tolerance: float
    metric: str  # "relative" or "absolute"
    max_abs_deviation: float
    max_rel_deviation: float
    passed: bool

    def to_json(self) -> str:
        record = asdict(self)
        record["pass"] = record.pop("passed")
        return json.dumps(record, sort_keys=True)

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        dev = (
            self.max_rel_deviation if self.metric == "relative" else self.max_abs_deviation
        )
        return (
            f"{status} {self.name}: {self.trials} trials, seed {self.seed}, "
            f"max {self.metric} deviation {dev:.3e} (tolerance {self.tolerance:.0e})"
        )


def _draw_instance(rng: np.random.Generator, dims: tuple[int, int]):
    lo, hi = dims
    d_out = int(rng.integers(lo, hi + 1))
    d_in = int(rng.integers(lo, hi + 1))
    dW = rng.standard_normal((d_out, d_in))
    X = rng.standard_normal((4 * d_in, d_in))
    return dW, X


def _rel_dev(a: float, b: float, scale: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), _EPS * scale)


def check_svd_theorem(
    trials: int = 200, seed: int = 0, dims: tuple[int, int] = (4, 64)
) -> OracleReport:
    """Empirical SVD-truncation error vs its closed form on random instances."""
    rng = np.random.default_rng(seed)
    tolerance = 1e-6
    max_abs = max_rel = 0.0
    for _ in range(trials):
        dW, X = _draw_instance(rng, dims)
        r = min(dW.shape)
        k = int(rng.integers(1, r + 1))
        factors = svd_truncate(dW, k)
        v_full = thin_svd(dW).V
        emp = empirical_error(dW, factors.reconstruct(), X)
        closed = expected_error_svd(factors, v_full, X, k)
        scale = empirical_error(dW, np.zeros_like(dW), X)
        max_abs = max(max_abs, abs(emp - closed))
        max_rel = max(max_rel, _rel_dev(emp, closed, scale))
    return OracleReport(
        name="svd-truncation-error",
        trials=trials,
        seed=seed,
        tolerance=tolerance,
        metric="relative",
        max_abs_deviation=max_abs,
        max_rel_deviation=max_rel,
        passed=max_rel <= tolerance,
    )


def check_esd_theorem(
    trials: int = 200, seed: int = 0, dims: tuple[int, int] = (4, 64)
) -> OracleReport:
    """Empirical shift-aware truncation error vs the discarded-eigenvalue sum.

    PCA is uncentered and computed on the same sample used for evaluation,
    which is exactly the regime where the identity is exact.
    """
    rng = np.random.default_rng(seed)
    tolerance = 1e-6
    max_abs = max_rel = 0.0
    for _ in range(trials):
        dW, X = _draw_instance(rng, dims)
        k = int(rng.integers(1, dW.shape[0] + 1))
        factors = esd(dW, X, k, centered=False)
        emp = empirical_error(dW, factors.reconstruct(), X)
        closed = expected_error_esd(factors.spectrum, k)
        scale = empirical_error(dW, np.zeros_like(dW), X)
        max_abs = max(max_abs, abs(emp - closed))
        max_rel = max(max_rel, _rel_dev(emp, closed, scale))
    return OracleReport(
        name="esd-truncation-error",
        trials=trials,
        seed=seed,
        tolerance=tolerance,
        metric="relative",
        max_abs_deviation=max_abs,
        max_rel_deviation=max_rel,
        passed=max_rel <= tolerance,
    )


def check_procrustes(
    trials: int = 100,
    seed: int = 0,
    dims: tuple[int, int] = (4, 64),
    cond_limit: float = 1e6,
) -> OracleReport:
    """whiten(M) vs M @ (M.T M)^(-1/2) on well-conditioned random matrices.

    Draws are regenerated until the condition number is at most
    ``cond_limit``; the reference inverse square root goes through an
    eigendecomposition of M.T M, which needs full column rank (m >= n).
    """
    rng = np.random.default_rng(seed)
    tolerance = 1e-8
    max_abs = max_rel = 0.0
    for _ in range(trials):
        while True:
            lo, hi = dims
            m = int(rng.integers(lo, hi + 1))
            n = int(rng.integers(lo, hi + 1))
            if m < n:
                m, n = n, m
            M = rng.standard_normal((m, n))
            if np.linalg.cond(M) <= cond_limit:
                break
        gram = M.T @ M
        vals, vecs = np.linalg.eigh((gram + gram.T) / 2.0)
        inv_sqrt = vecs @ np.diag(vals**-0.5) @ vecs.T
        reference = M @ inv_sqrt
        dev = float(np.abs(whiten(M) - reference).max())
        max_abs = max(max_abs, dev)
        max_rel = max(max_rel, dev)  # polar-factor entries are O(1)
    return OracleReport(
        name="whitening-procrustes-equivalence",
        trials=trials,
        seed=seed,
        tolerance=tolerance,
        metric="absolute",
        max_abs_deviation=max_abs,
        max_rel_deviation=max_rel,
        passed=max_abs <= tolerance,
    )


def compare_esd_svd(
    trials: int = 100, seed: int = 0, dims: tuple[int, int] = (4, 64)
) -> OracleReport:
    """Shift-aware truncation never loses to SVD truncation on the sample.

    For every retained rank k the empirical error of the output-PCA
    projection is at most the empirical error of the rank-k SVD truncation;
    the report records the worst violation of that inequality.
    """
    rng = np.random.default_rng(seed)
    tolerance = 1e-9
    worst_violation = 0.0
    for _ in range(trials):
        dW, X = _draw_instance(rng, dims)
        for k in range(1, min(dW.shape) + 1):
            esd_err = empirical_error(dW, esd(dW, X, k).reconstruct(), X)
            svd_err = empirical_error(dW, svd_truncate(dW, k).reconstruct(), X)
            worst_violation = max(worst_violation, esd_err - svd_err)
    worst_violation = max(worst_violation, 0.0)
    return OracleReport(
        name="esd-beats-svd",
        trials=trials,
        seed=seed,
        tolerance=tolerance,
        metric="absolute",
        max_abs_deviation=worst_violation,
        max_rel_deviation=worst_violation,
        passed=worst_violation <= tolerance,
    )


def linear_cka(F1: np.ndarray, F2: np.ndarray) -> float:
    """Linear CKA between two feature matrices with matching row counts.

    Invariant to orthogonal transforms and isotropic scaling of either
    argument; 1.0 for identical (up to those transforms) features.
    """
    F1 = np.asarray(F1, dtype=np.float64)
    F2 = np.asarray(F2, dtype=np.float64)
    if F1.ndim != 2 or F2.ndim != 2:
        raise ValueError("linear_cka expects 2-D feature matrices")
    if F1.shape[0] != F2.shape[0]:
        raise ValueError(
            f"linear_cka: row counts differ ({F1.shape[0]} vs {F2.shape[0]})"
        )
    if F1.shape[0] < 2:
        raise ValueError("linear_cka needs at least 2 rows")
    F1c = F1 - F1.mean(axis=0)
    F2c = F2 - F2.mean(axis=0)
    cross = float(np.linalg.norm(F2c.T @ F1c) ** 2)
    norm1 = float(np.linalg.norm(F1c.T @ F1c))
    norm2 = float(np.linalg.norm(F2c.T @ F2c))
    if norm1 == 0.0 or norm2 == 0.0:
        raise ValueError("linear_cka: degenerate (constant) features")
    return cross / (norm1 * norm2)


_SUITES = {
    "svd": check_svd_theorem,
    "esd": check_esd_theorem,
    "procrustes": check_procrustes,
    "compare": compare_esd_svd,
}

_DEFAULT_TRIALS = {"svd": 200, "esd": 200, "procrustes": 100, "compare": 100}


def run_suite(
    suite: str = "all",
    seed: int = 0,
    trials: int | None = None,
    dims: tuple[int, int] = (4, 64),
) -> list[OracleReport]:
    """Run one named oracle or all four, with a shared seed."""
    names = list(_SUITES) if suite == "all" else [suite]
    if any(n not in _SUITES for n in names):
        raise ValueError(f"unknown suite {suite!r}; choose from {['all', *_SUITES]}")
    return [
        _SUITES[n](trials=trials if trials is not None else _DEFAULT_TRIALS[n], seed=seed, dims=dims)
        for n in names
    ]
