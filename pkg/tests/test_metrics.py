import numpy as np
import pytest

from resdta.metrics import (
    DegenerateInputError,
    NoComparablePairsError,
    aggregate,
    concordance_index,
    mse,
    r_squared_pair,
    rm2,
)
from resdta.training import rmse_loss


def brute_force_ci(actual, predicted):
    """O(n^2) enumeration of the pairwise step function."""
    a = np.asarray(actual, dtype=float)
    p = np.asarray(predicted, dtype=float)
    da = a[:, None] - a[None, :]
    dp = p[:, None] - p[None, :]
    comparable = da > 0
    h = np.where(dp > 0, 1.0, np.where(dp == 0, 0.5, 0.0))
    return h[comparable].sum() / comparable.sum()


def test_ci_perfectly_ordered():
    assert concordance_index([1, 2], [0.1, 0.9]) == 1.0


def test_ci_tied_predictions_score_half():
    assert concordance_index([1, 2], [0.5, 0.5]) == 0.5


def test_ci_partial_order():
    assert concordance_index([1, 2, 3], [1, 3, 2]) == pytest.approx(2 / 3, abs=1e-15)


def test_ci_all_actual_tied_raises():
    with pytest.raises(NoComparablePairsError):
        concordance_index([4, 4, 4], [1, 2, 3])


def test_ci_length_mismatch():
    with pytest.raises(ValueError):
        concordance_index([1, 2, 3], [1, 2])


def test_ci_matches_brute_force_with_ties():
    rng = np.random.default_rng(0)
    for trial in range(200):
        n = int(rng.integers(2, 60))
        # Coarse grids force plenty of ties in both vectors.
        a = rng.integers(0, 6, size=n).astype(float)
        p = rng.integers(0, 6, size=n).astype(float)
        if np.all(a == a[0]):
            continue
        assert concordance_index(a, p) == pytest.approx(brute_force_ci(a, p), abs=1e-12)


def test_ci_antisymmetry_without_prediction_ties():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = int(rng.integers(2, 100))
        a = rng.normal(size=n)
        p = rng.normal(size=n)  # continuous, ties have measure zero
        ci = concordance_index(a, p)
        assert concordance_index(a, -p) == pytest.approx(1 - ci, abs=1e-12)


def test_ci_invariant_under_monotone_transform():
    rng = np.random.default_rng(2)
    a = rng.normal(size=80)
    p = rng.normal(size=80)
    ci = concordance_index(a, p)
    assert concordance_index(a, np.exp(p)) == pytest.approx(ci, abs=1e-15)
    assert concordance_index(a, 3 * p + 7) == pytest.approx(ci, abs=1e-15)


def test_mse_examples():
    assert mse([1, 2, 3], [1, 2, 3]) == 0.0
    assert mse([1, 1], [0, 0]) == 1.0
    assert mse([1, 3, 3], [1, 2, 4]) == pytest.approx(2 / 3, abs=1e-15)


def test_mse_validation():
    with pytest.raises(ValueError):
        mse([], [])
    with pytest.raises(ValueError):
        mse([1], [1, 2])


def test_mse_is_squared_rmse():
    rng = np.random.default_rng(3)
    for _ in range(20):
        a = rng.normal(size=50)
        p = rng.normal(size=50)
        assert mse(a, p) == pytest.approx(rmse_loss(p, a) ** 2, abs=1e-12)


def test_r_squared_perfect_fit():
    y = np.array([1.0, 2.0, 3.0])
    r2, r2_origin = r_squared_pair(y, y)
    assert r2 == pytest.approx(1.0, abs=1e-12)
    assert r2_origin == pytest.approx(1.0, abs=1e-12)


def test_r_squared_affine_prediction():
    y = np.array([1.0, 2.0, 3.0, 4.0])
    r2, _ = r_squared_pair(y, 2 * y)
    assert r2 == pytest.approx(1.0, abs=1e-12)


def test_r_squared_frozen_oracle_values():
    # Frozen from an independent normal-equation least-squares oracle.
    r2, r2_origin = r_squared_pair([1, 2, 3], [1.1, 1.9, 3.2])
    assert r2 == pytest.approx(0.981454005934718, abs=1e-10)
    assert r2_origin == pytest.approx(0.980411686586985, abs=1e-10)


def test_r_squared_degenerate_inputs():
    with pytest.raises(DegenerateInputError):
        r_squared_pair([2, 2, 2], [1, 2, 3])
    with pytest.raises(DegenerateInputError):
        r_squared_pair([1, 2, 3], [0, 0, 0])


def test_r2_affine_invariance_origin_scale_only():
    rng = np.random.default_rng(4)
    y = rng.normal(size=30)
    p = y + 0.3 * rng.normal(size=30)
    r2, r2_origin = r_squared_pair(y, p)
    # r2 survives any positive-slope affine map of the predictions.
    r2_shifted, r2_origin_shifted = r_squared_pair(y, 1.7 * p + 2.5)
    assert r2_shifted == pytest.approx(r2, abs=1e-10)
    assert abs(r2_origin_shifted - r2_origin) > 1e-6  # shifts move the origin fit
    # the origin fit survives positive scaling only.
    _, r2_origin_scaled = r_squared_pair(y, 4.0 * p)
    assert r2_origin_scaled == pytest.approx(r2_origin, abs=1e-10)


def test_rm2_perfect_prediction():
    y = np.array([1.0, 2.0, 3.0, 4.0])
    assert rm2(y, y) == pytest.approx(1.0, abs=1e-12)


def test_rm2_equals_r2_when_fits_agree():
    rng = np.random.default_rng(5)
    for _ in range(30):
        y = rng.normal(size=25)
        p = y + 0.2 * rng.normal(size=25)
        r2, r2_origin = r_squared_pair(y, p)
        expected = r2 * (1 - np.sqrt(abs(r2 - r2_origin)))
        assert rm2(y, p) == pytest.approx(expected, abs=1e-12)
        assert rm2(y, p) <= r2 + 1e-12


def test_rm2_frozen_oracle_value():
    # Frozen from the same independent oracle composing both fits.
    assert rm2([1, 2, 3, 5], [1.2, 1.8, 3.1, 4.6]) == pytest.approx(
        0.910817148457703, abs=1e-10
    )


def test_aggregate_single_fold():
    report = aggregate([(0.9, 0.2, 0.6)])
    assert report.n_folds == 1
    assert report.std == {"ci": 0.0, "mse": 0.0, "rm2": 0.0}
    assert report.mean["ci"] == 0.9


def test_aggregate_mean_and_population_std():
    report = aggregate([(0.8, 0.1, 0.5), (0.9, 0.3, 0.7)])
    assert report.mean["ci"] == pytest.approx(0.85, abs=1e-15)
    assert report.std["ci"] == pytest.approx(0.05, abs=1e-15)
    assert report.mean["mse"] == pytest.approx(0.2, abs=1e-15)
    assert report.std["rm2"] == pytest.approx(0.1, abs=1e-15)


def test_aggregate_statistics_are_order_invariant():
    folds = [(0.8, 0.1, 0.5), (0.9, 0.3, 0.7), (0.85, 0.2, 0.6)]
    forward = aggregate(folds)
    backward = aggregate(list(reversed(folds)))
    for key in ("ci", "mse", "rm2"):
        assert forward.mean[key] == pytest.approx(backward.mean[key], abs=1e-12)
        assert forward.std[key] == pytest.approx(backward.std[key], abs=1e-12)


def test_aggregate_empty_raises():
    with pytest.raises(ValueError):
        aggregate([])


def test_report_serialization_fields():
    report = aggregate([(0.8, 0.1, 0.5), (0.9, 0.3, 0.7)])
    payload = report.to_dict()
    assert set(payload) == {"folds", "mean", "std"}
    assert payload["folds"][0] == {"ci": 0.8, "mse": 0.1, "rm2": 0.5}
