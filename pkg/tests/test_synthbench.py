import math

import numpy as np
import pytest

from fairshare.coredata import parse_table
from fairshare.synthbench import (
    GeneratorConfig,
    GroundTruth,
    bitstring_to_mask,
    generate,
    ground_truth,
    mask_to_bitstring,
    run_benchmark,
    true_attribution,
    true_estimates,
    true_propensity,
)

from .oracles import direct_weighted_average

# 2 * uniform - 1 under the listing's seed, in bitstring order 001 .. 111
LISTING_TAU = [-0.25091976, 0.90142861, 0.46398788, 0.19731697, -0.68796272, -0.68801096, -0.88383278]


def test_bitstring_order():
    assert [bitstring_to_mask(k, 3) for k in range(1, 8)] == [4, 2, 6, 1, 5, 3, 7]
    assert mask_to_bitstring(0b001, 3) == "100"
    assert all(bitstring_to_mask(int(mask_to_bitstring(m, 4), 2), 4) == m for m in range(16))


def test_effects_follow_listing_stream():
    truth = ground_truth(GeneratorConfig(m_treatments=3, rct=True))
    got = [truth.tau[bitstring_to_mask(k, 3)] for k in range(1, 8)]
    np.testing.assert_allclose(got, LISTING_TAU, atol=5e-9)
    assert all(-1 <= t <= 1 for t in truth.tau.values())
    assert np.linalg.norm(truth.beta1) == pytest.approx(1.0, abs=1e-12)
    assert np.linalg.norm(truth.beta2) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(truth.beta2, -truth.beta1, atol=1e-15)


def test_rct_frequencies():
    n = 20000
    table, _ = generate(GeneratorConfig(n=n, dim=2, m_treatments=2, rct=True, seed=4))
    freq = np.bincount(table.treatments, minlength=4) / n
    assert np.all(np.abs(freq - 0.25) <= 3 * math.sqrt(0.25 * 0.75 / n))


def test_shape_and_determinism():
    cfg = GeneratorConfig(n=123, dim=4, m_treatments=3, seed=99)
    a, _ = generate(cfg)
    b, _ = generate(cfg)
    assert (a.n, a.d, a.L) == (123, 4, 3)
    assert np.all(a.weights == 1.0)
    for name in ("outcomes", "weights", "treatments", "covariates"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    c, _ = generate(GeneratorConfig(n=123, dim=4, m_treatments=3, seed=100))
    assert not np.array_equal(a.outcomes, c.outcomes)


def test_generated_table_round_trips_through_csv():
    from fairshare.coredata import serialize_table

    table, _ = generate(GeneratorConfig(n=50, dim=2, m_treatments=2, seed=1))
    back = parse_table(serialize_table(table))
    np.testing.assert_array_equal(back.outcomes, table.outcomes)
    np.testing.assert_array_equal(back.treatments, table.treatments)


def test_sign_modes():
    x = np.random.default_rng(0).normal(size=(100, 3))
    cfg = GeneratorConfig(dim=3, m_treatments=3, sign_mode="constant_negative")
    truth = ground_truth(cfg, mc_samples=1000)
    probs = true_propensity(x, cfg, truth.beta1)
    # all experiments share one curve: single-experiment coalitions are equally likely
    np.testing.assert_allclose(probs[:, 1], probs[:, 2], rtol=1e-14)
    np.testing.assert_allclose(probs[:, 1], probs[:, 4], rtol=1e-14)
    alt = GeneratorConfig(dim=3, m_treatments=3, sign_mode="alternating")
    p_alt = true_propensity(x, alt, truth.beta1)
    np.testing.assert_allclose(p_alt[:, 1], p_alt[:, 4], rtol=1e-14)
    assert not np.allclose(p_alt[:, 1], p_alt[:, 2])
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-14)


def test_rct_truth_weighted_average_hand_value():
    cfg = GeneratorConfig(m_treatments=2, rct=True)
    truth = ground_truth(cfg)
    a, b, c = truth.tau[0b10], truth.tau[0b01], truth.tau[0b11]
    delta = true_attribution(truth, cfg, "weighted_average")
    assert delta[0] == pytest.approx(0.25 * b + 0.25 * c / 2, abs=1e-15)
    assert delta[1] == pytest.approx(0.25 * a + 0.25 * c / 2, abs=1e-15)


def test_null_effects():
    cfg = GeneratorConfig(m_treatments=3, rct=False, dim=2)
    base = ground_truth(cfg, mc_samples=5000)
    zero = GroundTruth({T: 0.0 for T in base.tau}, base.beta1, base.beta2, base.true_weights)
    for method in ("weighted_shapley", "weighted_average"):
        assert true_attribution(zero, cfg, method) == {0: 0.0, 1: 0.0, 2: 0.0}


@pytest.mark.parametrize("method", ["weighted_shapley", "weighted_average"])
def test_truth_monte_carlo_converges(method):
    cfg = GeneratorConfig(m_treatments=3, rct=False, dim=5)
    truth = ground_truth(cfg, mc_samples=1000)
    a, se_a = true_attribution(truth, cfg, method, mc_samples=50_000, mc_seed=1, return_se=True)
    b, se_b = true_attribution(truth, cfg, method, mc_samples=100_000, mc_seed=2, return_se=True)
    for l in range(3):
        assert abs(a[l] - b[l]) < 3 * math.hypot(se_a[l], se_b[l])
        assert se_a[l] > 0


def test_truth_budget_balance():
    cfg = GeneratorConfig(m_treatments=3, rct=False, dim=5)
    truth = ground_truth(cfg)
    target = sum(truth.true_weights[T] * truth.tau[T] for T in truth.tau)
    for method in ("weighted_shapley", "weighted_average"):
        delta = true_attribution(truth, cfg, method)
        assert sum(delta.values()) == pytest.approx(target, abs=1e-12)
    direct = direct_weighted_average(truth.true_weights, {0: 0.0, **truth.tau}, 0.0, 3)
    delta = true_attribution(truth, cfg, "weighted_average")
    np.testing.assert_allclose([delta[l] for l in range(3)], direct, rtol=1e-12)


def test_benchmark_single_replication_shape():
    cfg = GeneratorConfig(n=2000, dim=3, m_treatments=3, seed=1)
    rep = run_benchmark(cfg, 1, ("mean", "ips"), mc_samples=20_000)
    keys = [(r["estimator"], r["method"], r["experiment"]) for r in rep.rows]
    assert len(keys) == len(set(keys)) == 2 * 2 * 3
    lines = rep.to_csv().splitlines()
    assert lines[0] == "replication,estimator,method,experiment,delta_hat,delta_true"
    assert len(lines) == 13


def test_benchmark_average_sharing_matches_direct_summation():
    from fairshare.estimators import estimate_all
    from fairshare.costsharing import weighted_average_share

    cfg = GeneratorConfig(n=3000, dim=3, m_treatments=3, seed=2)
    table, _ = generate(cfg)
    est = estimate_all(table, "mean")
    direct = direct_weighted_average(est.weights, est.values, est.baseline, 3)
    res = weighted_average_share(est)
    np.testing.assert_allclose(res.as_vector(3), direct, rtol=1e-12, atol=1e-15)


def test_rct_benchmark_has_no_bias_gap():
    # paired signed errors; the RMSE itself favours ips slightly (fitted propensities reduce variance)
    cfg = GeneratorConfig(n=10000, dim=5, m_treatments=3, rct=True, seed=0)
    rep = run_benchmark(cfg, 20, ("mean", "ips"), ("weighted_shapley",))
    d = rep.values("ips", "weighted_shapley") - rep.values("mean", "weighted_shapley")
    for l in range(3):
        assert abs(d[:, l].mean()) <= 2 * d[:, l].std(ddof=1) / math.sqrt(d.shape[0])
