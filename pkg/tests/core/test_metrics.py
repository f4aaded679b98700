"""Tests for FID, Inception Score, streaming statistics and cross-seed reports."""

import logging

import numpy as np
import pytest
import scipy.linalg
import torch

from fewlabel_gan.core.embedder import RandomProjectionEmbedder
from fewlabel_gan.core.metrics import (
    GaussianStats,
    StatsAccumulator,
    evaluate_model,
    fid,
    inception_score,
    matrix_sqrt_psd,
    real_statistics,
)
from fewlabel_gan.models.metrics import MetricRecord, MetricsReport
from fewlabel_gan.utils.validators import ValidationError


def _random_spd(rng: np.random.Generator, d: int) -> np.ndarray:
    m = rng.normal(size=(d, d))
    return m.T @ m + 0.1 * np.eye(d)


def _random_stats(rng: np.random.Generator, d: int = 5) -> GaussianStats:
    return GaussianStats(rng.normal(size=d), _random_spd(rng, d), n=100)


def test_matrix_sqrt_squares_back(rng):
    """S S reproduces A = M^T M."""
    m = rng.normal(size=(5, 5))
    a = m.T @ m
    root = matrix_sqrt_psd(a)
    assert np.linalg.norm(root @ root - a) <= 1e-6
    np.testing.assert_allclose(root, root.T)


def test_matrix_sqrt_rejects_bad_input():
    with pytest.raises(ValidationError):
        matrix_sqrt_psd(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValidationError):
        matrix_sqrt_psd(np.diag([1.0, -1.0]))


@pytest.mark.parametrize("index", range(20))
def test_fid_diagonal_closed_form(index):
    """Diagonal Gaussians: sum (mu1 - mu2)^2 + sum (sqrt s1 - sqrt s2)^2."""
    rng = np.random.default_rng(index)
    mu1, mu2 = rng.normal(size=6), rng.normal(size=6)
    s1, s2 = rng.uniform(0.2, 3.0, size=6), rng.uniform(0.2, 3.0, size=6)
    expected = ((mu1 - mu2) ** 2).sum() + ((np.sqrt(s1) - np.sqrt(s2)) ** 2).sum()
    value = fid(GaussianStats(mu1, np.diag(s1), 10), GaussianStats(mu2, np.diag(s2), 10))
    assert value == pytest.approx(expected, abs=1e-6)


@pytest.mark.parametrize("index", range(20))
def test_fid_equal_covariance_is_mean_distance(index):
    rng = np.random.default_rng(100 + index)
    sigma = _random_spd(rng, 4)
    mu1, mu2 = rng.normal(size=4), rng.normal(size=4)
    value = fid(GaussianStats(mu1, sigma, 10), GaussianStats(mu2, sigma, 10))
    assert value == pytest.approx(float(((mu1 - mu2) ** 2).sum()), abs=1e-6)


def test_fid_identity_and_symmetry(rng):
    """fid(a, a) = 0 and fid(a, b) = fid(b, a)."""
    for _ in range(20):
        a, b = _random_stats(rng), _random_stats(rng)
        assert fid(a, a) == pytest.approx(0.0, abs=1e-6)
        assert fid(a, b) == pytest.approx(fid(b, a), abs=1e-6)
        assert fid(a, b) >= 0


def test_fid_rejects_dimension_mismatch(rng):
    with pytest.raises(ValidationError):
        fid(_random_stats(rng, 3), _random_stats(rng, 4))


def test_fid_matches_recomputation_from_features(rng):
    """Two halves of one sample: small positive FID equal to a direct sqrtm formula."""
    features = rng.normal(size=(2000, 4)) @ rng.normal(size=(4, 4))
    a, b = features[:1000], features[1000:]
    value = fid(GaussianStats.from_features(a), GaussianStats.from_features(b))

    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a, cov_b = np.cov(a, rowvar=False), np.cov(b, rowvar=False)
    cross = np.real(scipy.linalg.sqrtm(cov_a @ cov_b))
    expected = ((mu_a - mu_b) ** 2).sum() + np.trace(cov_a + cov_b - 2 * cross)
    assert value > 0
    assert value == pytest.approx(expected, abs=1e-6)


def test_stats_accumulator_is_split_invariant(rng):
    """Streaming statistics match np.cov regardless of batch boundaries."""
    features = rng.normal(size=(300, 3)) * [1.0, 5.0, 0.1] + 7.0
    one = StatsAccumulator(3)
    one.update(features)
    many = StatsAccumulator(3)
    for chunk in np.array_split(features, [1, 50, 51, 200]):
        many.update(chunk)
    combined = StatsAccumulator(3)
    combined.update(features[:120])
    rest = StatsAccumulator(3)
    rest.update(features[120:])
    combined.combine(rest)

    for acc in (one, many, combined):
        stats = acc.finalize()
        np.testing.assert_allclose(stats.mu, features.mean(axis=0), atol=1e-10)
        np.testing.assert_allclose(stats.sigma, np.cov(features, rowvar=False), atol=1e-9)


def test_stats_need_two_samples():
    acc = StatsAccumulator(2)
    acc.update(np.zeros((1, 2)))
    with pytest.raises(ValidationError):
        acc.finalize()


def test_inception_score_by_hand():
    """[[0.9, 0.1], [0.1, 0.9]] -> exp(0.9 ln 1.8 + 0.1 ln 0.2)."""
    expected = np.exp(0.9 * np.log(1.8) + 0.1 * np.log(0.2))
    assert inception_score(np.array([[0.9, 0.1], [0.1, 0.9]])) == pytest.approx(expected)
    assert expected == pytest.approx(1.445, abs=1e-3)


def test_inception_score_bounds():
    """Identical rows give 1; one confident row per class gives K."""
    assert inception_score(np.tile([0.2, 0.3, 0.5], (7, 1))) == pytest.approx(1.0)
    assert inception_score(np.eye(6)) == pytest.approx(6.0)


def test_inception_score_matches_direct_kl(rng):
    for _ in range(20):
        probs = rng.dirichlet(np.ones(5), size=30)
        marginal = probs.mean(axis=0)
        kl = (probs * (np.log(probs) - np.log(marginal))).sum(axis=1)
        assert inception_score(probs) == pytest.approx(np.exp(kl.mean()), abs=1e-9)


def test_inception_score_rejects_invalid_rows():
    with pytest.raises(ValidationError):
        inception_score(np.array([[0.5, 0.6]]))
    with pytest.raises(ValidationError):
        inception_score(np.zeros((0, 3)))


def _sampler(count: int, seed: int) -> torch.Tensor:
    generator = torch.Generator().manual_seed(seed)
    return torch.rand(count, 3, 8, 8, generator=generator) * 2 - 1


def test_evaluate_model_counts_sets_and_is_deterministic():
    """n_sets fake sets are scored; the same seed reproduces the same numbers."""
    embedder = RandomProjectionEmbedder(image_size=8, dim=6, num_classes=4)
    real = real_statistics(embedder, _sampler(400, 12345))
    first = evaluate_model(_sampler, real, embedder, n_fake=200, n_sets=3, seed=1)
    second = evaluate_model(_sampler, real, embedder, n_fake=200, n_sets=3, seed=1)
    assert first.n_sets == 3
    assert first.fid_sets == second.fid_sets
    assert first.is_sets == second.is_sets
    assert len(set(first.fid_sets)) == 3
    assert first.fid_mean == pytest.approx(np.mean(first.fid_sets))
    assert all(1.0 <= s <= 4.0 for s in first.is_sets)


def test_evaluate_model_warns_on_rank_deficient_sets(caplog):
    embedder = RandomProjectionEmbedder(image_size=8, dim=16, num_classes=4)
    real = real_statistics(embedder, _sampler(400, 7))
    with caplog.at_level(logging.WARNING):
        result = evaluate_model(_sampler, real, embedder, n_fake=10, n_sets=1, seed=0)
    assert any("rank-deficient" in r.getMessage() for r in caplog.records)
    assert np.isfinite(result.fid_sets[0])


def test_real_statistics_are_cached_per_key():
    embedder = RandomProjectionEmbedder(image_size=8, dim=4, num_classes=3)
    images = _sampler(50, 3)
    first = real_statistics(embedder, images, key="metrics-cache")
    assert real_statistics(embedder, images, key="metrics-cache") is first
    assert real_statistics(embedder, images) is not first


def _record(seed: int, step: int, fid_value: float, is_value: float, **extra) -> MetricRecord:
    return MetricRecord(
        step=step,
        seed=seed,
        method="S3GAN",
        run_name="S3GAN-k10",
        k_percent=10.0,
        fid_mean=fid_value,
        is_mean=is_value,
        embedder_id="test",
        n_fake=10,
        n_sets=1,
        **extra,
    )


def test_metrics_report_uses_final_record_per_seed():
    """Median, mean and population std come from the last step of each seed."""
    records = [
        _record(1, 0, 90.0, 1.0),
        _record(1, 10, 1.0, 3.0),
        _record(2, 10, 2.0, 2.0),
        _record(3, 0, 50.0, 1.0),
        _record(3, 10, 3.0, 1.0, collapsed=True),
    ]
    report = MetricsReport.from_records(records)
    assert report.fids == [1.0, 2.0, 3.0]
    assert report.median_fid == 2.0
    assert report.mean_fid == 2.0
    assert report.std_fid == pytest.approx(np.sqrt(2 / 3))
    assert report.median_is == 2.0
    assert report.collapsed_seeds == [3]
    assert len(report.history) == 5


def test_metrics_report_single_seed_has_zero_std():
    report = MetricsReport.from_records([_record(4, 5, 12.0, 2.5)])
    assert report.std_fid == 0.0
    assert report.median_is == 2.5
