import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairshare.errors import PipelineFailure, UnobservedCoalition
from fairshare.estimators import estimate_mean
from fairshare.uncertainty import BootstrapConfig, IntervalEstimate, bootstrap, resample_indices

from .conftest import random_table


def test_constant_pipeline(rng):
    t = random_table(rng, n=30)
    res = bootstrap(t, lambda tab: 7.0, BootstrapConfig(resamples=20, seed=1))
    iv = res[0]
    assert (iv.point, iv.ci_low, iv.ci_high) == (7.0, 7.0, 7.0)
    assert iv.significant


def test_zero_interval_not_significant():
    assert not IntervalEstimate(0.0, 0.0, 0.0).significant
    assert not IntervalEstimate(0.1, -0.2, 0.4).significant
    assert IntervalEstimate(-1.0, -2.0, -0.5).significant


def mean_pipeline(tab):
    return [estimate_mean(tab, 0).mu_hat, estimate_mean(tab, 1).mu_hat]


def test_bootstrap_is_deterministic(rng):
    t = random_table(rng, n=300, L=1, weights=True)
    cfg = BootstrapConfig(resamples=200, seed=42)
    a = bootstrap(t, mean_pipeline, cfg)
    b = bootstrap(t, mean_pipeline, cfg)
    np.testing.assert_array_equal(a.draws, b.draws)
    assert a.intervals == b.intervals


def test_thread_pool_matches_serial(rng):
    t = random_table(rng, n=300, L=1)
    cfg = BootstrapConfig(resamples=64, seed=3)
    serial = bootstrap(t, mean_pipeline, cfg)
    pooled = bootstrap(t, mean_pipeline, cfg, workers=4)
    np.testing.assert_array_equal(serial.draws, pooled.draws)


def test_resample_stream_depends_only_on_seed_and_index():
    forward = [resample_indices(50, 9, b) for b in range(10)]
    backward = [resample_indices(50, 9, b) for b in reversed(range(10))][::-1]
    for a, b in zip(forward, backward):
        np.testing.assert_array_equal(a, b)
    assert not np.array_equal(resample_indices(50, 9, 0), resample_indices(50, 10, 0))


def test_percentile_interval_matches_numpy_quantiles(rng):
    t = random_table(rng, n=200, L=1)
    cfg = BootstrapConfig(resamples=100, seed=5, ci_level=0.9)
    res = bootstrap(t, mean_pipeline, cfg)
    lo, hi = np.quantile(res.draws[:, 1], [0.05, 0.95])
    assert res[1].ci_low == pytest.approx(lo, rel=1e-12)
    assert res[1].ci_high == pytest.approx(hi, rel=1e-12)
    assert res[1].point == estimate_mean(t, 1).mu_hat


def _flaky(limit):
    calls = {"n": 0}

    def pipeline(tab):
        calls["n"] += 1
        # first call is the point estimate on the full table
        if 1 < calls["n"] <= 1 + limit:
            raise UnobservedCoalition("vanished", coalition=1)
        return [1.0]

    return pipeline


def test_failures_below_threshold_are_counted(rng):
    t = random_table(rng, n=20)
    res = bootstrap(t, _flaky(10), BootstrapConfig(resamples=50, seed=0))
    assert res.failures == 10 and res.draws.shape == (40, 1)


def test_too_many_failures(rng):
    t = random_table(rng, n=20)
    with pytest.raises(PipelineFailure):
        bootstrap(t, _flaky(11), BootstrapConfig(resamples=50, seed=0))


def test_config_validation():
    with pytest.raises(ValueError):
        BootstrapConfig(resamples=1)
    with pytest.raises(ValueError):
        BootstrapConfig(ci_level=1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.5, 0.99))
def test_intervals_are_ordered(seed, level):
    rng = np.random.default_rng(seed)
    t = random_table(rng, n=40, L=1, weights=True)
    res = bootstrap(t, mean_pipeline, BootstrapConfig(resamples=30, seed=seed, ci_level=level))
    assert all(iv.ci_low <= iv.ci_high for iv in res.intervals)
