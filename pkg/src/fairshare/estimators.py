"""Per-coalition outcome estimators, ATE and lift.

All formulas carry the row weights ``w_i`` as frequency weights; with unit
weights they reduce to the usual unweighted estimators.
"""

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .coredata import BASELINE, ObservationTable, format_coalition, marginal_collapse, members
from .errors import (
    BaselineNearZero,
    DimensionMismatch,
    MethodMismatch,
    MissingSubsetValue,
    RankDeficient,
    UnobservedCoalition,
)
from .propensity import FitConfig, PropensityModel, coalition_weights, fit_empirical, fit_propensity

METHODS = ("mean", "ips", "snips", "ra", "dr")
DR_VARIANTS = ("paper", "aipw")
LIFT_FLOOR = 1e-12


@dataclass(frozen=True)
class EffectEstimate:
    coalition: int
    method: str
    mu_hat: float
    n_T: float


@dataclass
class OutcomeModel:
    """Linear outcome model with one dummy per non-control coalition.

    ``alpha`` maps each coalition that had a dummy column to its
    coefficient. Coalitions without a column (never observed) are
    predicted additively from their single-experiment effects when
    ``additive_fallback`` is set, otherwise they are unavailable.
    """

    alpha: dict
    beta0: float
    beta: np.ndarray
    residual_variance: float = 0.0
    additive_fallback: bool = False

    @property
    def d(self) -> int:
        return self.beta.shape[0]

    def effect(self, T: int) -> float:
        if T == BASELINE:
            return 0.0
        if T in self.alpha:
            return self.alpha[T]
        if self.additive_fallback:
            return float(sum(self.alpha.get(1 << l, 0.0) for l in members(T)))
        raise UnobservedCoalition(
            f"outcome model has no coefficient for coalition {format_coalition(T)}", coalition=T
        )

    def predict(self, X, T: int) -> np.ndarray:
        """m̂(T, x) for each row of ``X``."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.shape[1] != self.d:
            raise DimensionMismatch(f"expected {self.d} covariates, got {X.shape[1]}")
        return self.beta0 + self.effect(T) + X @ self.beta

    def with_fallback(self, enabled: bool = True) -> "OutcomeModel":
        return OutcomeModel(self.alpha, self.beta0, self.beta, self.residual_variance, enabled)

    def to_dict(self) -> dict:
        return {
            "alpha": {str(k): v for k, v in sorted(self.alpha.items())},
            "beta0": self.beta0,
            "beta": self.beta.tolist(),
            "residual_variance": self.residual_variance,
        }


def _check_T(table, T):
    if T < 0 or T > table.experiments.grand:
        raise DimensionMismatch(f"coalition {T} invalid for L={table.L}")


def estimate_mean(table: ObservationTable, T: int) -> EffectEstimate:
    _check_T(table, T)
    D = table.treatments == T
    n_T = float(table.weights[D].sum())
    if not D.any():
        raise UnobservedCoalition(f"no rows received coalition {format_coalition(T)}", coalition=T)
    mu = float(np.sum(table.weights[D] * table.outcomes[D])) / n_T
    return EffectEstimate(T, "mean", mu, n_T)


def _propensity_for(model: PropensityModel, table: ObservationTable, T: int) -> np.ndarray:
    if model.d != table.d or model.L != table.L:
        raise DimensionMismatch("propensity model and table dimensions differ")
    return model.propensity(table.covariates, T)


def estimate_ips(table: ObservationTable, model: PropensityModel, T: int) -> EffectEstimate:
    _check_T(table, T)
    e = _propensity_for(model, table, T)
    D = table.treatments == T
    n_T = float(table.weights[D].sum())
    if not D.any():
        warnings.warn(f"IPS: coalition {format_coalition(T)} unobserved, estimate is 0", stacklevel=2)
        return EffectEstimate(T, "ips", 0.0, 0.0)
    num = float(np.sum(table.weights[D] * table.outcomes[D] / e[D]))
    return EffectEstimate(T, "ips", num / table.total_weight, n_T)


def estimate_snips(table: ObservationTable, model: PropensityModel, T: int) -> EffectEstimate:
    _check_T(table, T)
    D = table.treatments == T
    if not D.any():
        raise UnobservedCoalition(f"no rows received coalition {format_coalition(T)}", coalition=T)
    e = _propensity_for(model, table, T)[D]
    w = table.weights[D]
    inv = w / e
    mu = float(np.sum(inv * table.outcomes[D])) / float(np.sum(inv))
    return EffectEstimate(T, "snips", mu, float(w.sum()))


def fit_outcome(table: ObservationTable, config: FitConfig = FitConfig()) -> OutcomeModel:
    """Weighted ridge regression of Y on coalition dummies and covariates.

    One dummy per observed non-control coalition; the intercept is not
    penalized. Solved by least squares on the penalty-augmented system.
    """
    coalitions = [T for T in table.observed() if T != BASELINE]
    n = table.n
    k = len(coalitions)
    Z = np.empty((n, 1 + k + table.d))
    Z[:, 0] = 1.0
    for j, T in enumerate(coalitions):
        Z[:, 1 + j] = table.treatments == T
    Z[:, 1 + k :] = table.covariates
    coef = _ridge(Z, table.outcomes, table.weights, config.l2_penalty)
    resid = table.outcomes - Z @ coef
    rv = float(np.sum(table.weights * resid**2) / table.total_weight)
    alpha = {T: float(coef[1 + j]) for j, T in enumerate(coalitions)}
    return OutcomeModel(alpha, float(coef[0]), coef[1 + k :].copy(), rv)


def _ridge(Z, y, w, l2_penalty):
    """Weighted least squares with an L2 penalty on all but the first column."""
    sw = np.sqrt(w)
    A = Z * sw[:, None]
    b = y * sw
    p = Z.shape[1]
    if l2_penalty > 0:
        A = np.vstack([A, np.sqrt(l2_penalty) * np.eye(p)[1:]])
        b = np.concatenate([b, np.zeros(p - 1)])
    elif np.linalg.matrix_rank(A) < p:
        raise RankDeficient("outcome design matrix is singular and l2_penalty is 0")
    return np.linalg.lstsq(A, b, rcond=None)[0]


def estimate_ra(model: OutcomeModel, table: ObservationTable, T: int) -> EffectEstimate:
    """Counterfactual mean of m̂(T, x_i) over all rows."""
    _check_T(table, T)
    m = model.predict(table.covariates, T)
    mu = float(np.sum(table.weights * m)) / table.total_weight
    n_T = float(table.weights[table.treatments == T].sum())
    return EffectEstimate(T, "ra", mu, n_T)


def estimate_dr(
    table: ObservationTable,
    pmodel: PropensityModel,
    omodel: OutcomeModel,
    T: int,
    variant: str = "aipw",
) -> EffectEstimate:
    """Doubly robust estimate.

    ``paper`` divides the augmented sum by the treated weight Σ w_i D_i(T);
    ``aipw`` divides by the total weight, the usual AIPW normalization.
    """
    if variant not in DR_VARIANTS:
        raise ValueError(f"unknown DR variant {variant!r}")
    _check_T(table, T)
    D = table.treatments == T
    n_T = float(table.weights[D].sum())
    m = omodel.predict(table.covariates, T)
    e = _propensity_for(pmodel, table, T)
    aug = m + np.where(D, (table.outcomes - m) / e, 0.0)
    num = float(np.sum(table.weights * aug))
    if variant == "paper":
        if not D.any():
            raise UnobservedCoalition(f"no rows received coalition {format_coalition(T)}", coalition=T)
        return EffectEstimate(T, "dr", num / n_T, n_T)
    return EffectEstimate(T, "dr", num / table.total_weight, n_T)


def ate(mu_T: EffectEstimate, mu_S: EffectEstimate) -> float:
    if mu_T.method != mu_S.method:
        raise MethodMismatch(f"cannot compare {mu_T.method} with {mu_S.method} estimates")
    return mu_T.mu_hat - mu_S.mu_hat


def lift(ate_value: float, mu_0: float, floor: float = LIFT_FLOOR) -> float:
    """Effect relative to the baseline mean, in percent."""
    if abs(mu_0) < floor:
        raise BaselineNearZero(f"baseline mean {mu_0!r} is too close to zero for a lift", baseline=mu_0)
    return ate_value / mu_0 * 100.0


@dataclass
class CoalitionEstimates:
    """μ̂_T and P̂(T) for the coalitions of one table.

    ``values`` holds the control group too; ``game`` returns
    v(S) = μ̂_S − μ̂_0 with v(∅) = 0 exactly.
    """

    L: int
    method: str
    baseline: float
    values: dict
    weights: dict
    counts: dict = field(default_factory=dict)
    imputed: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values[BASELINE] = self.baseline

    def game(self, S: int) -> float:
        if S == BASELINE:
            return 0.0
        if S in self.values:
            return self.values[S] - self.baseline
        if S in self.imputed:
            return self.imputed[S] - self.baseline
        raise MissingSubsetValue(
            f"no estimate for coalition {format_coalition(S)}", coalition=S
        )

    def has(self, S: int) -> bool:
        return S == BASELINE or S in self.values or S in self.imputed

    def total_effect(self) -> float:
        """Σ_T P̂(T) v(T) over coalitions with positive weight."""
        return math.fsum(p * self.game(T) for T, p in sorted(self.weights.items()) if p > 0 and T != BASELINE)


def _estimate_one(table, estimator, T, pmodel, omodel, dr_variant):
    if estimator == "mean":
        return estimate_mean(table, T)
    if estimator == "ips":
        return estimate_ips(table, pmodel, T)
    if estimator == "snips":
        return estimate_snips(table, pmodel, T)
    if estimator == "ra":
        return estimate_ra(omodel, table, T)
    if estimator == "dr":
        return estimate_dr(table, pmodel, omodel, T, dr_variant)
    raise ValueError(f"unknown estimator {estimator!r}; expected one of {METHODS}")


def estimate_all(
    table: ObservationTable,
    estimator: str,
    pmodel: Optional[PropensityModel] = None,
    omodel: Optional[OutcomeModel] = None,
    dr_variant: str = "aipw",
    impute_missing: bool = False,
) -> CoalitionEstimates:
    """Estimate μ̂_T for every observed coalition plus the baseline.

    Coalition weights come from ``pmodel`` (model-averaged propensities)
    or from weighted frequencies when no model is given. With
    ``impute_missing`` unobserved coalitions get the outcome model's
    prediction average in ``imputed``.
    """
    if estimator in ("ips", "snips", "dr") and pmodel is None:
        raise ValueError(f"estimator {estimator!r} needs a propensity model")
    if estimator in ("ra", "dr") and omodel is None:
        raise ValueError(f"estimator {estimator!r} needs an outcome model")
    weight_model = pmodel if pmodel is not None else fit_empirical(table)
    weights = coalition_weights(weight_model, table)
    counts = table.counts()
    if BASELINE not in counts:
        raise UnobservedCoalition("no rows in the control group", coalition=BASELINE)
    values = {}
    for T in sorted(counts):
        values[T] = _estimate_one(table, estimator, T, pmodel, omodel, dr_variant).mu_hat
    imputed = {}
    if impute_missing:
        om = omodel if omodel is not None else fit_outcome(table)
        om = om.with_fallback()
        for T in range(1 << table.L):
            if T not in values:
                imputed[T] = estimate_ra(om, table, T).mu_hat
    return CoalitionEstimates(table.L, estimator, values[BASELINE], values, weights, counts, imputed)


def fit_models(table: ObservationTable, estimator: str, propensity_kind: Optional[str],
               config: FitConfig = FitConfig(), clip_epsilon: float = 1e-3):
    """Fit whatever models ``estimator`` needs; returns ``(pmodel, omodel)``."""
    pmodel = omodel = None
    if propensity_kind is not None:
        pmodel = fit_propensity(table, propensity_kind, config, clip_epsilon)
    if estimator in ("ra", "dr"):
        omodel = fit_outcome(table, config)
    return pmodel, omodel


def marginal_effect(
    table: ObservationTable,
    l: int,
    estimator: str,
    propensity_kind: Optional[str] = None,
    config: FitConfig = FitConfig(),
    dr_variant: str = "aipw",
) -> tuple[float, float]:
    """(ATE, lift %) of experiment ``l`` ignoring all other experiments.

    Models are refitted on the collapsed binary table.
    """
    collapsed = marginal_collapse(table, l)
    if not np.any(collapsed.treatments == 1):
        raise UnobservedCoalition(f"experiment {l} is never active", coalition=1, experiment=l)
    kind = propensity_kind
    if kind is not None and collapsed.d == 0:
        kind = "empirical"
    if kind is None and estimator in ("ips", "snips", "dr"):
        kind = "empirical" if collapsed.d == 0 else "factorized"
    pmodel, omodel = fit_models(collapsed, estimator, kind, config)
    on = _estimate_one(collapsed, estimator, 1, pmodel, omodel, dr_variant)
    off = _estimate_one(collapsed, estimator, BASELINE, pmodel, omodel, dr_variant)
    effect = ate(on, off)
    return effect, lift(effect, off.mu_hat)
