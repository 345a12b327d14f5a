import numpy as np
import pytest

from regime_tta.core import InsufficientDataError
from regime_tta.similarity import (
    RegimeFeatures,
    SimilarityWeights,
    component_similarities,
    ensemble_similarity,
    extract_features,
    feature_similarity,
    ks_similarity,
    variance_ratio_similarity,
    wasserstein_similarity,
)


def features(vector, raw=None):
    raw = np.zeros(8) if raw is None else np.asarray(raw, dtype=float)
    return RegimeFeatures(*vector, raw_sample=raw)


def test_normal_moments():
    rng = np.random.default_rng(101)
    f = extract_features(rng.normal(size=10_000), season_length=5_000)

    assert abs(f.mean) < 0.1
    assert abs(f.std - 1.0) < 0.1
    assert abs(f.skewness) < 0.1
    assert abs(f.excess_kurtosis) < 0.1
    assert len(f.raw_sample) == 10_000


def test_constant_features():
    f = extract_features(np.full(50, 5.0), season_length=10)
    assert np.array_equal(f.as_vector(), np.array([5.0, 0.0, 0.0, 0.0, 0.0]))


def test_alternating_autocorrelation():
    series = np.tile([1.0, -1.0], 150)
    f = extract_features(series, season_length=100)
    assert f.lag1_autocorr == pytest.approx(-1.0, abs=0.01)


def test_features_use_trailing_window():
    series = np.concatenate([np.full(100, 50.0), np.arange(30, dtype=float)])
    f = extract_features(series, season_length=10)

    assert np.array_equal(f.raw_sample, np.arange(30, dtype=float))
    assert f.mean == pytest.approx(14.5)


def test_features_need_samples():
    with pytest.raises(InsufficientDataError):
        extract_features(np.arange(7, dtype=float), season_length=24)


def test_ks_similarity():
    a = np.array([0.3, 1.2, -0.4, 2.2])
    assert ks_similarity(a, a) == 1.0
    assert ks_similarity([0, 0, 0, 0], [1, 1, 1, 1]) == 0.0
    assert ks_similarity([1, 2, 3, 4], [2, 3, 4, 5]) == pytest.approx(0.75)

    with pytest.raises(ValueError):
        ks_similarity([], [1.0])


def test_wasserstein_similarity():
    a = np.array([0.3, 1.2, -0.4, 2.2])
    assert wasserstein_similarity(a, a) == 1.0
    assert wasserstein_similarity([0, 1], [1, 2]) == pytest.approx(0.5)
    assert wasserstein_similarity([3.0], [3.0]) == 1.0

    with pytest.raises(ValueError):
        wasserstein_similarity([1.0], [])


def test_feature_similarity():
    q = features((1.0, 0.0, 0.0, 0.0, 0.0))
    s = features((-1.0, 0.0, 0.0, 0.0, 0.0))
    zero = features((0.0, 0.0, 0.0, 0.0, 0.0))

    assert feature_similarity(q, q) == 1.0
    assert feature_similarity(q, s) == pytest.approx(1 / 3)
    assert feature_similarity(zero, zero) == 1.0

    with pytest.raises(ValueError):
        feature_similarity(features((np.nan, 0.0, 0.0, 0.0, 0.0)), zero)


def test_variance_ratio_similarity():
    assert variance_ratio_similarity(2.0, 2.0) == pytest.approx(1.0, abs=1e-8)
    assert variance_ratio_similarity(1.0, 4.0) == pytest.approx(0.25)
    assert variance_ratio_similarity(0.0, 1.0) == 0.0
    assert variance_ratio_similarity(0.0, 0.0) == 1.0

    with pytest.raises(ValueError):
        variance_ratio_similarity(-1.0, 1.0)


def test_ensemble_self_similarity():
    rng = np.random.default_rng(7)
    f = extract_features(rng.normal(size=300), season_length=100)
    assert ensemble_similarity(f, f) == pytest.approx(1.0)


def test_ensemble_weighting():
    w = SimilarityWeights()
    assert w.ks * 1.0 + w.wasserstein * 1.0 + w.feature * 0.5 + w.variance * 0.5 == pytest.approx(
        0.8
    )


def test_disjoint_constant_batches():
    a = extract_features(np.zeros(150), season_length=50)
    b = extract_features(np.full(150, 10.0), season_length=50)

    assert ks_similarity(a.raw_sample, b.raw_sample) == 0.0
    assert variance_ratio_similarity(a.std, b.std) == 1.0
    assert ensemble_similarity(a, b) < 0.6


def test_similarity_grows_with_sample_size():
    rng = np.random.default_rng(11)
    means = []
    for n in (50, 500, 5000):
        sims = [
            ensemble_similarity(
                extract_features(rng.normal(size=n), season_length=n),
                extract_features(rng.normal(size=n), season_length=n),
            )
            for _ in range(5)
        ]
        means.append(np.mean(sims))

    assert means[0] < means[1] < means[2]
    assert means[2] > 0.9


def test_similarity_weight_presets():
    assert SimilarityWeights.preset("ensemble") == SimilarityWeights()
    ks_only = SimilarityWeights.preset("ks")
    assert (ks_only.ks, ks_only.wasserstein, ks_only.feature, ks_only.variance) == (1, 0, 0, 0)

    with pytest.raises(ValueError, match="Unknown similarity preset"):
        SimilarityWeights.preset("cosine")

    with pytest.raises(ValueError, match="sum to 1"):
        SimilarityWeights(0.5, 0.5, 0.5, 0.5)


def random_batch(rng):
    n = int(rng.integers(8, 300))
    level, scale = rng.normal(0.0, 5.0), rng.uniform(0.1, 3.0)
    kind = rng.integers(0, 4)
    if kind == 0:
        values = np.full(n, round(level, 1))
    elif kind == 1:
        values = level + scale * rng.standard_t(3, size=n)
    else:
        values = level + scale * rng.normal(size=n)
    return extract_features(values, season_length=n)


def test_similarity_bounds_symmetry_and_identity():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        q, s = random_batch(rng), random_batch(rng)
        forward, backward = component_similarities(q, s), component_similarities(s, q)

        for a, b in zip(forward, backward):
            assert 0.0 <= a <= 1.0
            assert abs(a - b) < 1e-9
        sim = ensemble_similarity(q, s)
        assert 0.0 <= sim <= 1.0
        assert abs(sim - ensemble_similarity(s, q)) < 1e-9
        assert abs(ensemble_similarity(q, q) - 1.0) < 1e-9


def test_constant_batch_self_similarity():
    f = extract_features(np.full(150, 5.0), season_length=24)
    assert ensemble_similarity(f, f) == pytest.approx(1.0, abs=1e-12)
    assert component_similarities(f, f) == (1.0, 1.0, 1.0, 1.0)
