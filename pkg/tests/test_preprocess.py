import numpy as np
import pytest

from sparsa.classifiers import LabeledDataset, moments
from sparsa.preprocess import pooled_variance, screen_by_t, standardize_expression


def expr(n1=8, n2=6, p=12, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.lognormal(size=(n1 + n2, p)) * rng.uniform(0.5, 5, p)
    return LabeledDataset(x, np.r_[np.ones(n1), np.full(n2, 2)])


def test_pooled_variance_matches_moments_diagonal():
    data = expr()
    np.testing.assert_allclose(pooled_variance(data), np.diag(moments(data).pooled_cov), rtol=1e-12)


@pytest.mark.parametrize("order", ["row_first", "scale_first"])
def test_standardize_unit_pooled_diagonal(order):
    out, rec = standardize_expression(expr(), order=order)
    if order == "row_first":
        np.testing.assert_allclose(pooled_variance(out), 1.0, atol=1e-10)
    else:
        np.testing.assert_allclose(out.features.mean(axis=1), 0.0, atol=1e-12)
    assert rec.kept.size == 12 and rec.dropped.size == 0


def test_standardize_fixed_point_is_unchanged():
    # alternate the two steps until both hold, then standardizing is a no-op
    data = expr(seed=3)
    x = data.features
    for _ in range(200):
        x = x - x.mean(axis=1, keepdims=True)
        x = x / np.sqrt(pooled_variance(LabeledDataset(x, data.labels)))
    fixed = LabeledDataset(x, data.labels)
    out, _ = standardize_expression(fixed)
    np.testing.assert_allclose(out.features, fixed.features, atol=1e-10)


def test_constant_feature_dropped_and_recorded():
    data = expr()
    x = data.features.copy()
    x[:, 4] = 3.0
    # constant after row-centering needs the feature to equal the row mean; use scale_first
    out, rec = standardize_expression(LabeledDataset(x, data.labels), order="scale_first")
    assert 4 in rec.dropped.tolist() and 4 not in rec.kept.tolist()
    assert out.p == 11


def test_scaling_record_applies_to_new_points():
    data = expr()
    out, rec = standardize_expression(data)
    np.testing.assert_allclose(rec.apply(data.features), out.features)
    np.testing.assert_allclose(rec.apply(data.features[0]), out.features[:1])


def test_scaling_record_round_trip():
    _, rec = standardize_expression(expr())
    from sparsa.preprocess import ScalingRecord

    back = ScalingRecord.from_dict(rec.to_dict())
    np.testing.assert_array_equal(back.scale, rec.scale)
    np.testing.assert_array_equal(back.kept, rec.kept)


def test_screen_keep_p_is_identity():
    data = expr()
    out, kept = screen_by_t(data, keep=data.p)
    np.testing.assert_array_equal(kept, np.arange(data.p))
    np.testing.assert_array_equal(out.features, data.features)


def test_screen_ranks_separated_feature_first():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((40, 10))
    x[:20, 6] += 5.0
    data = LabeledDataset(x, np.r_[np.ones(20), np.full(20, 2)])
    _, kept = screen_by_t(data, keep=1)
    assert kept.tolist() == [6]


def test_screen_threshold_and_keep():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((40, 10)) * 0.01
    x[:20, [1, 4, 7]] += [1.0, 2.0, 3.0]
    data = LabeledDataset(x, np.r_[np.ones(20), np.full(20, 2)])
    _, kept = screen_by_t(data, mean_diff_threshold=0.5)
    assert kept.tolist() == [1, 4, 7]
    _, kept = screen_by_t(data, keep=2, mean_diff_threshold=0.5)
    assert kept.tolist() == [4, 7]
    with pytest.raises(ValueError):
        screen_by_t(data)
    with pytest.raises(ValueError):
        screen_by_t(data, keep=11)
