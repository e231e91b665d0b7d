import json

import numpy as np
import pytest

from esmerge import (
    check_esd_theorem,
    check_procrustes,
    check_svd_theorem,
    compare_esd_svd,
    empirical_error,
    esd,
    expected_error_esd,
    expected_error_svd,
    linear_cka,
    run_suite,
    svd_truncate,
    thin_svd,
    whiten,
)


def test_oracles_deterministic():
    a = check_svd_theorem(trials=20, seed=5)
    b = check_svd_theorem(trials=20, seed=5)
    assert a == b
    assert a != check_svd_theorem(trials=20, seed=6)


def test_svd_theorem_small_run_passes():
    report = check_svd_theorem(trials=30, seed=42, dims=(4, 24))
    assert report.passed and report.max_rel_deviation < 1e-6


def test_svd_theorem_hand_instance():
    dW = np.diag([2.0, 1.0])
    X = np.eye(2)
    factors = svd_truncate(dW, 1)
    emp = empirical_error(dW, factors.reconstruct(), X)
    closed = expected_error_svd(factors, thin_svd(dW).V, X, 1)
    assert emp == pytest.approx(0.5) and closed == pytest.approx(0.5)


def test_svd_theorem_full_rank_both_zero():
    dW = np.diag([2.0, 1.0])
    X = np.eye(2)
    factors = svd_truncate(dW, 2)
    assert expected_error_svd(factors, thin_svd(dW).V, X, 2) == 0.0
    assert empirical_error(dW, factors.reconstruct(), X) < 1e-24


def test_esd_theorem_small_run_passes():
    report = check_esd_theorem(trials=30, seed=7, dims=(4, 24))
    assert report.passed


def test_esd_theorem_hand_instance():
    dW = np.eye(2)
    X = np.array([[1.0, 0.0], [0.0, 2.0]])
    factors = esd(dW, X, 1)
    assert empirical_error(dW, factors.reconstruct(), X) == pytest.approx(0.5)
    assert expected_error_esd(factors.spectrum, 1) == pytest.approx(0.5)


def test_esd_theorem_complete_basis_zero_error():
    dW = np.eye(3)
    X = np.diag([1.0, 2.0, 3.0])
    factors = esd(dW, X, 3)
    assert empirical_error(dW, factors.reconstruct(), X) < 1e-24
    assert expected_error_esd(factors.spectrum, 3) == 0.0


def test_procrustes_small_run_passes():
    report = check_procrustes(trials=25, seed=3, dims=(4, 24))
    assert report.passed and report.metric == "absolute"


def test_procrustes_hand_cases():
    np.testing.assert_allclose(whiten(3.0 * np.eye(2)), np.eye(2), atol=1e-12)
    M = np.array([[0.0, 2.0], [1.0, 0.0]])
    # M.T M = diag(1, 4), so M (M.T M)^(-1/2) = M diag(1, 1/2) by hand
    reference = M @ np.diag([1.0, 0.5])
    np.testing.assert_allclose(whiten(M), reference, atol=1e-12)
    np.testing.assert_array_equal(reference, [[0.0, 1.0], [1.0, 0.0]])


def test_compare_small_run_passes():
    report = compare_esd_svd(trials=15, seed=11, dims=(4, 16))
    assert report.passed and report.max_abs_deviation <= 1e-9


def test_compare_hand_instance():
    dW = np.eye(2)
    X = np.array([[1.0, 0.0], [0.0, 2.0]])
    esd_err = empirical_error(dW, esd(dW, X, 1).reconstruct(), X)
    svd_err = empirical_error(dW, svd_truncate(dW, 1).reconstruct(), X)
    assert esd_err == pytest.approx(0.5)
    assert svd_err == pytest.approx(2.0)


def test_compare_rank_one_both_exact(rng):
    dW = np.outer(rng.standard_normal(4), rng.standard_normal(3))
    X = rng.standard_normal((8, 3))
    assert empirical_error(dW, esd(dW, X, 1).reconstruct(), X) < 1e-20
    assert empirical_error(dW, svd_truncate(dW, 1).reconstruct(), X) < 1e-20


def test_report_json_shape():
    report = check_svd_theorem(trials=5, seed=1)
    record = json.loads(report.to_json())
    assert record["pass"] is True
    assert record["trials"] == 5
    assert set(record) >= {"name", "seed", "tolerance", "metric", "max_rel_deviation"}


def test_run_suite_all_and_single():
    reports = run_suite(suite="all", seed=0, trials=5, dims=(4, 12))
    assert len(reports) == 4
    single = run_suite(suite="procrustes", seed=0, trials=5, dims=(4, 12))
    assert len(single) == 1 and "procrustes" in single[0].name
    with pytest.raises(ValueError):
        run_suite(suite="bogus")


# --- linear CKA -----------------------------------------------------------------


def test_cka_self_similarity(rng):
    F = rng.standard_normal((10, 4))
    assert linear_cka(F, F) == pytest.approx(1.0, abs=1e-12)


def test_cka_scale_invariance(rng):
    F = rng.standard_normal((10, 4))
    assert linear_cka(F, 5.0 * F) == pytest.approx(1.0, abs=1e-12)


def test_cka_orthogonal_invariance(rng):
    F1 = rng.standard_normal((12, 5))
    F2 = rng.standard_normal((12, 6))
    q1, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    q2, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    base = linear_cka(F1, F2)
    assert linear_cka(F1 @ q1, F2 @ q2) == pytest.approx(base, abs=1e-8)


def test_cka_orthogonal_grams_give_zero():
    F1 = np.array([[1.0], [-1.0], [0.0], [0.0]])
    F2 = np.array([[0.0], [0.0], [1.0], [-1.0]])
    assert linear_cka(F1, F2) == pytest.approx(0.0, abs=1e-8)


def test_cka_bounds(rng):
    for seed in range(5):
        g = np.random.default_rng(seed)
        value = linear_cka(g.standard_normal((9, 3)), g.standard_normal((9, 7)))
        assert 0.0 <= value <= 1.0 + 1e-12


def test_cka_rejects_degenerate_and_mismatched():
    with pytest.raises(ValueError):
        linear_cka(np.ones((4, 2)), np.random.default_rng(0).standard_normal((4, 2)))
    with pytest.raises(ValueError):
        linear_cka(np.zeros((3, 2)), np.zeros((4, 2)))
    with pytest.raises(ValueError):
        linear_cka(np.zeros((1, 2)), np.zeros((1, 2)))
