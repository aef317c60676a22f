import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import softmax

from fairshare.coredata import ExperimentSet, ObservationTable
from fairshare.errors import DimensionMismatch, NoCovariates, SingleClassOnly
from fairshare.propensity import (
    FitConfig,
    PropensityModel,
    coalition_weights,
    fit_empirical,
    fit_factorized,
    fit_joint,
)
from fairshare.synthbench import GeneratorConfig, generate, true_propensity

from .conftest import random_table


@pytest.fixture(scope="module")
def rct_table():
    table, _ = generate(GeneratorConfig(n=5000, dim=3, m_treatments=2, rct=True, seed=11))
    return table


@pytest.fixture(scope="module")
def confounded():
    cfg = GeneratorConfig(n=10000, dim=5, m_treatments=3, rct=False, seed=5)
    table, truth = generate(cfg)
    return cfg, table, truth


def test_joint_on_rct_matches_class_frequencies(rct_table):
    model = fit_joint(rct_table)
    assert model.converged
    freq = np.bincount(rct_table.treatments, minlength=4) / rct_table.n
    sd = np.sqrt(freq * (1 - freq) / rct_table.n)
    at_mean = model.predict(rct_table.covariates.mean(axis=0))
    assert np.all(np.abs(at_mean - freq) <= 2 * sd)
    # slopes are pure noise: O(1/sqrt(n)) on the standardized scale
    assert np.max(np.abs(model.coef[1:, 1:])) < 4 * 2 / np.sqrt(rct_table.n)


def test_joint_separable_is_clipped():
    x = np.linspace(-2, 2, 40)
    T = (x > 0).astype(int)
    table = ObservationTable(np.zeros(40), None, T, x[:, None], 1)
    model = fit_joint(table, FitConfig(max_iterations=200))
    assert isinstance(model.converged, bool)
    probs = model.probabilities(table.covariates)
    eps = model.clip_epsilon
    assert probs.min() >= eps / (1 + 2 * eps) - 1e-15
    assert probs.max() <= 1 - eps / (1 + 2 * eps) + 1e-15
    assert model.clip_count > 0


def test_joint_single_class():
    table = ObservationTable(np.zeros(5), None, np.zeros(5, int), np.ones((5, 1)), 2)
    with pytest.raises(SingleClassOnly):
        fit_joint(table)


def test_joint_needs_covariates(rng):
    with pytest.raises(NoCovariates):
        fit_joint(random_table(rng, d=0))


def test_factorized_coin_flips_give_quarter_weights(rct_table):
    weights = coalition_weights(fit_factorized(rct_table), rct_table)
    assert set(weights) == {0, 1, 2, 3}
    for p in weights.values():
        assert abs(p - 0.25) < 0.02


def test_factorized_recovers_true_propensities(confounded):
    cfg, table, truth = confounded
    model = fit_factorized(table)
    est = model.probabilities(table.covariates, clip=False)
    true = true_propensity(table.covariates, cfg, truth.beta1)
    assert np.mean(np.abs(est - true)) < 0.02


def test_factorized_single_experiment_is_binary_logit(rng):
    n = 400
    x = rng.normal(size=(n, 2))
    T = (rng.random(n) < 1 / (1 + np.exp(-x[:, 0]))).astype(int)
    table = ObservationTable(rng.normal(size=n), None, T, x, 1)
    a = fit_factorized(table).probabilities(x)
    b = fit_joint(table).probabilities(x)
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_empirical_frequencies():
    t = ObservationTable(np.zeros(100), None, [0] * 50 + [1] * 50, None, 1)
    assert fit_empirical(t).predict([])[1] == 0.5
    t = ObservationTable(np.zeros(1), None, [0], None, 1)
    assert fit_empirical(t).predict([], clip=False)[0] == 1.0
    t = ObservationTable(np.zeros(4), [1, 1, 2, 2], [0, 0, 1, 1], None, 1)
    assert fit_empirical(t).predict([])[1] == pytest.approx(2 / 3, abs=1e-15)


def test_empirical_predict_ignores_x(rng):
    t = random_table(rng, d=2)
    m = fit_empirical(t)
    np.testing.assert_array_equal(m.predict([0.0, 0.0]), m.predict([5.0, -3.0]))


def _joint_model(intercepts, d=2):
    K = len(intercepts)
    coef = np.zeros((K, d + 1))
    coef[:, 0] = intercepts
    return PropensityModel("joint", int(np.log2(K)), d, np.arange(K), coef, np.zeros(d), np.ones(d))


def test_joint_zero_slopes_is_softmax_of_intercepts():
    ints = [0.0, 0.3, -0.5, 1.2]
    m = _joint_model(ints)
    np.testing.assert_allclose(m.predict([2.0, -1.0]), softmax(ints), atol=1e-15)


def test_predict_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        _joint_model([0.0, 0.1]).predict([1.0])


def test_coalition_weights_empirical_exact(rng):
    t = random_table(rng, n=150, L=3, weights=True)
    w = coalition_weights(fit_empirical(t), t)
    for T in range(8):
        expected = t.weights[t.treatments == T].sum() / t.weights.sum()
        assert w[T] == pytest.approx(expected, rel=1e-14)


def test_coalition_weights_point_mass(rng):
    t = random_table(rng, n=50, L=2, d=2)
    m = _joint_model([0.0, -800.0, -800.0, -800.0])
    w = coalition_weights(m, t)
    assert w[0] == 1.0 and w[1] == w[2] == w[3] == 0.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=4, max_size=4), st.lists(st.floats(-50, 50), min_size=2, max_size=2))
def test_predict_is_a_clipped_simplex(ints, x):
    m = _joint_model(ints)
    m.coef[:, 1:] = np.array(ints)[:, None] / 7
    p = m.predict(x)
    eps = m.clip_epsilon
    assert abs(p.sum() - 1) <= 1e-9
    assert p.min() >= eps / (1 + 4 * eps) - 1e-15


def test_permuting_covariates_gives_same_predictions(confounded):
    _, table, _ = confounded
    sub = table.take(np.arange(3000))
    perm = np.array([3, 0, 4, 1, 2])
    permuted = ObservationTable(sub.outcomes, sub.weights, sub.treatments, sub.covariates[:, perm], sub.experiments)
    a = fit_joint(sub).probabilities(sub.covariates[:200])
    b = fit_joint(permuted).probabilities(sub.covariates[:200, perm])
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_objective_trace_is_monotone(confounded):
    _, table, _ = confounded
    model = fit_joint(table.take(np.arange(2000)), FitConfig(standardize=False))
    trace = model.fits[0].objective_trace
    assert len(trace) > 1
    assert all(b >= a for a, b in zip(trace, trace[1:]))
    for fit in fit_factorized(table).fits:
        assert all(b >= a for a, b in zip(fit.objective_trace, fit.objective_trace[1:]))


def test_to_dict_reports_original_scale(rng):
    n = 500
    x = rng.normal(3.0, 2.0, size=(n, 1))
    T = (rng.random(n) < 1 / (1 + np.exp(-(x[:, 0] - 3)))).astype(int)
    table = ObservationTable(np.zeros(n), None, T, x, 1)
    m = fit_joint(table)
    b0, b1 = m.original_scale_coef()[1]
    raw = 1 / (1 + np.exp(-(b0 + b1 * x[:5, 0])))
    np.testing.assert_allclose(raw, m.probabilities(x[:5], clip=False)[:, 1], rtol=1e-10)
    d = m.to_dict()
    assert d["kind"] == "joint" and d["converged"] is True
