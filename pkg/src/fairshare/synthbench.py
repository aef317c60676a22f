"""Synthetic parallel-experiment data with known attribution.

Covariates are standard normal. Experiment ``l`` switches on with
probability ``sigmoid(s_l * x @ beta_1)`` (or 0.5 in the randomized case)
and the outcome is ``x @ beta_2 + tau_T + noise``. Because
``beta_2 = -beta_1`` the assignment is confounded with the outcome.

Effects ``tau`` are indexed like one-hot dummies over treatment bitstrings
with experiment 0 as the leftmost character, in lexicographic order, the
all-zero string dropped.
"""

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .coredata import BASELINE, ExperimentSet, ObservationTable
from .costsharing import share
from .errors import FairshareError
from .estimators import CoalitionEstimates, estimate_all, fit_outcome
from .propensity import FitConfig, fit_propensity

EFFECT_SEED = 42
SIGN_MODES = ("alternating", "constant_negative")


@dataclass(frozen=True)
class GeneratorConfig:
    n: int = 10000
    dim: int = 5
    m_treatments: int = 3
    rct: bool = False
    seed: int = 0
    sign_mode: str = "alternating"
    outcome_offset: float = 0.0

    def __post_init__(self):
        if self.n < 1 or self.dim < 1:
            raise ValueError("n and dim must be >= 1")
        if not 1 <= self.m_treatments <= 15:
            raise ValueError("m_treatments must lie in [1, 15]")
        if self.sign_mode not in SIGN_MODES:
            raise ValueError(f"sign_mode must be one of {SIGN_MODES}")


@dataclass
class GroundTruth:
    tau: dict
    beta1: np.ndarray
    beta2: np.ndarray
    true_weights: dict
    effect_order: list = field(default_factory=list)


def bitstring_to_mask(k: int, m: int) -> int:
    """Mask of the bitstring whose integer value is ``k`` (experiment 0 leftmost)."""
    mask = 0
    for l in range(m):
        if k >> (m - 1 - l) & 1:
            mask |= 1 << l
    return mask


def mask_to_bitstring(mask: int, m: int) -> str:
    return "".join("1" if mask >> l & 1 else "0" for l in range(m))


def signs(config: GeneratorConfig) -> np.ndarray:
    if config.sign_mode == "alternating":
        return np.array([(-1.0) ** l for l in range(config.m_treatments)])
    return -np.ones(config.m_treatments)


def ramps(dim: int):
    """Unit-norm ascending and descending linear ramps over [-dim, dim]."""
    b1 = np.linspace(-dim, dim, num=dim)
    b2 = np.linspace(dim, -dim, num=dim)
    return b1 / np.sqrt(np.sum(b1**2)), b2 / np.sqrt(np.sum(b2**2))


def draw_effects(m: int, seed: int = EFFECT_SEED):
    """Effects uniform on [-1, 1], one per non-control coalition, in bitstring order.

    Drawn from the legacy Mersenne Twister stream, whose output numpy keeps
    stable across releases.
    """
    rng = np.random.RandomState(seed)
    vec = 2.0 * rng.uniform(size=(1 << m) - 1) - 1.0
    order = [bitstring_to_mask(k, m) for k in range(1, 1 << m)]
    return {mask: float(vec[i]) for i, mask in enumerate(order)}, order


def true_propensity(X: np.ndarray, config: GeneratorConfig, beta1: np.ndarray) -> np.ndarray:
    """``(n, 2**m)`` true coalition probabilities at each row of ``X``."""
    m = config.m_treatments
    if config.rct:
        p_on = np.full((X.shape[0], m), 0.5)
    else:
        p_on = expit(np.outer(X @ beta1, signs(config)))
    masks = np.arange(1 << m)
    bits = (masks[:, None] >> np.arange(m)) & 1
    probs = np.ones((X.shape[0], 1 << m))
    for l in range(m):
        probs *= np.where(bits[:, l], p_on[:, [l]], 1.0 - p_on[:, [l]])
    return probs


def ground_truth(config: GeneratorConfig, mc_samples: int = 200_000, mc_seed: int = 7) -> GroundTruth:
    m = config.m_treatments
    tau, order = draw_effects(m)
    beta1, beta2 = ramps(config.dim)
    if config.rct:
        weights = {T: 0.5**m for T in range(1 << m)}
    else:
        X = np.random.default_rng(mc_seed).standard_normal((mc_samples, config.dim))
        probs = true_propensity(X, config, beta1).mean(axis=0)
        weights = {T: float(p) for T, p in enumerate(probs)}
    return GroundTruth(tau, beta1, beta2, weights, order)


def generate(config: GeneratorConfig, truth: Optional[GroundTruth] = None):
    """Draw one synthetic table; returns ``(table, truth)``."""
    if truth is None:
        truth = ground_truth(config)
    m = config.m_treatments
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    X = rng.standard_normal((config.n, config.dim))
    if config.rct:
        p_on = np.full((config.n, m), 0.5)
    else:
        p_on = expit(np.outer(X @ truth.beta1, signs(config)))
    bits = (rng.random((config.n, m)) < p_on).astype(np.int64)
    masks = (bits << np.arange(m)).sum(axis=1)
    tau = np.zeros(1 << m)
    for T, t in truth.tau.items():
        tau[T] = t
    y = config.outcome_offset + X @ truth.beta2 + tau[masks] + rng.standard_normal(config.n)
    table = ObservationTable(y, np.ones(config.n), masks, X, ExperimentSet(m))
    return table, truth


def true_estimates(truth: GroundTruth, config: GeneratorConfig, weights: Optional[dict] = None):
    """CoalitionEstimates of the true process: μ_T = τ_T, μ_0 = 0."""
    values = {BASELINE: 0.0}
    values.update(truth.tau)
    return CoalitionEstimates(config.m_treatments, "truth", 0.0, values, dict(weights or truth.true_weights))


def true_attribution(
    truth: GroundTruth,
    config: GeneratorConfig,
    method: str = "weighted_shapley",
    mc_samples: Optional[int] = None,
    mc_seed: int = 7,
    return_se: bool = False,
):
    """Ground-truth attribution {l: Δ_l}.

    In the confounded case P(T) is a Monte Carlo average over
    ``mc_samples`` covariate draws (``truth.true_weights`` when None).
    With ``return_se`` also returns the Monte Carlo standard error per
    experiment (zero in the randomized case).
    """
    m = config.m_treatments
    if config.rct or mc_samples is None:
        result = share(true_estimates(truth, config), method)
        se = {l: 0.0 for l in range(m)}
        if mc_samples is None and not config.rct and return_se:
            raise ValueError("return_se needs mc_samples in the confounded case")
    else:
        X = np.random.default_rng(mc_seed).standard_normal((mc_samples, config.dim))
        probs = true_propensity(X, config, truth.beta1)
        weights = {T: float(p) for T, p in enumerate(probs.mean(axis=0))}
        result = share(true_estimates(truth, config, weights), method)
        # Δ_l is linear in P(T): Δ_l = Σ_T c_lT P(T); c_lT from unit weights
        coef = np.zeros((m, 1 << m))
        for T in range(1, 1 << m):
            unit = {S: float(S == T) for S in range(1 << m)}
            coef[:, T] = share(true_estimates(truth, config, unit), method).as_vector(m)
        per_sample = probs @ coef.T
        se = {l: float(per_sample[:, l].std(ddof=1) / math.sqrt(mc_samples)) for l in range(m)}
    if return_se:
        return result.per_experiment, se
    return result.per_experiment


def replication_seed(seed: int, r: int) -> int:
    return int(np.random.SeedSequence([seed, r]).generate_state(1)[0])


def estimate_attribution(table, estimator, methods, propensity_kind="factorized",
                         fit_config: FitConfig = FitConfig(), dr_variant="aipw"):
    """{method: AttributionResult} for one table and estimator.

    The mean estimator uses empirical coalition weights; all others use
    the fitted propensity model's averaged probabilities.
    """
    pmodel = omodel = None
    if estimator != "mean":
        pmodel = fit_propensity(table, propensity_kind, fit_config)
    if estimator in ("ra", "dr"):
        omodel = fit_outcome(table, fit_config)
    est = estimate_all(table, estimator, pmodel, omodel, dr_variant)
    return {method: share(est, method) for method in methods}


@dataclass
class BenchmarkReport:
    config: GeneratorConfig
    estimators: list
    methods: list
    rows: list
    truth: dict
    errors: list

    def values(self, estimator: str, method: str) -> np.ndarray:
        """``(replications, m)`` matrix of Δ̂; NaN where a replication failed."""
        reps = 1 + max((r["replication"] for r in self.rows), default=-1)
        reps = max(reps, 1 + max((e["replication"] for e in self.errors), default=-1))
        out = np.full((reps, self.config.m_treatments), np.nan)
        for r in self.rows:
            if r["estimator"] == estimator and r["method"] == method:
                out[r["replication"], r["experiment"]] = r["delta_hat"]
        return out

    def replication_rmse(self, estimator: str, method: str) -> np.ndarray:
        truth = np.array([self.truth[method][l] for l in range(self.config.m_treatments)])
        return np.sqrt(np.mean((self.values(estimator, method) - truth) ** 2, axis=1))

    def summary(self) -> list:
        out = []
        for method in self.methods:
            truth = np.array([self.truth[method][l] for l in range(self.config.m_treatments)])
            base = self.replication_rmse("mean", method) if "mean" in self.estimators else None
            for est in self.estimators:
                vals = self.values(est, method)
                err = vals - truth
                rmse_rep = self.replication_rmse(est, method)
                win = None
                if base is not None and est != "mean":
                    win = float(np.mean(rmse_rep < base))
                out.append({
                    "estimator": est,
                    "method": method,
                    "bias": np.nanmean(err, axis=0).tolist(),
                    "rmse": np.sqrt(np.nanmean(err**2, axis=0)).tolist(),
                    "win_rate": win,
                })
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["replication", "estimator", "method", "experiment", "delta_hat", "delta_true"])
        for r in self.rows:
            writer.writerow([r["replication"], r["estimator"], r["method"], r["experiment"],
                             repr(r["delta_hat"]), repr(r["delta_true"])])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "config": asdict(self.config),
            "summary": self.summary(),
            "truth": {m: [self.truth[m][l] for l in range(self.config.m_treatments)] for m in self.methods},
            "errors": self.errors,
        }
        return json.dumps(doc, indent=2) + "\n"


def run_benchmark(
    config: GeneratorConfig,
    replications: int = 20,
    estimators: Sequence[str] = ("mean", "ips"),
    methods: Sequence[str] = ("weighted_shapley", "weighted_average"),
    propensity_kind: str = "factorized",
    fit_config: FitConfig = FitConfig(),
    mc_samples: int = 200_000,
) -> BenchmarkReport:
    """Repeat generate-estimate-attribute ``replications`` times.

    Replication ``r`` uses the seed derived from ``(config.seed, r)``.
    Failures are recorded per replication and estimator, not raised.
    """
    if replications < 1:
        raise ValueError("replications must be >= 1")
    truth = ground_truth(config, mc_samples)
    true_delta = {method: true_attribution(truth, config, method) for method in methods}
    rows, errors = [], []
    for r in range(replications):
        cfg = replace(config, seed=replication_seed(config.seed, r))
        table, _ = generate(cfg, truth)
        for est in estimators:
            try:
                results = estimate_attribution(table, est, methods, propensity_kind, fit_config)
            except FairshareError as exc:
                errors.append({"replication": r, "estimator": est, **exc.to_dict()})
                continue
            for method in methods:
                for l in range(config.m_treatments):
                    rows.append({
                        "replication": r,
                        "estimator": est,
                        "method": method,
                        "experiment": l,
                        "delta_hat": float(results[method].per_experiment[l]),
                        "delta_true": float(true_delta[method][l]),
                    })
    return BenchmarkReport(config, list(estimators), list(methods), rows, true_delta, errors)
