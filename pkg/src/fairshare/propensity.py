"""Propensity models e(T, x) = P(T | X = x) over coalitions.

Three kinds are supported:

* ``joint``: one multinomial logit over the observed coalitions, with the
  control group as reference class.
* ``factorized``: one binary logit per experiment; coalition probabilities
  are products of the per-experiment probabilities.
* ``empirical``: covariate-free weighted class frequencies.
"""

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import log_expit, log_softmax, softmax

from .coredata import ObservationTable
from .errors import ConvergenceWarning, DimensionMismatch, NoCovariates, SingleClassOnly

DEFAULT_CLIP = 1e-3


@dataclass(frozen=True)
class FitConfig:
    l2_penalty: float = 1e-6
    max_iterations: int = 1000
    gradient_tolerance: float = 1e-8
    standardize: bool = True

    def __post_init__(self):
        if self.l2_penalty < 0:
            raise ValueError("l2_penalty must be >= 0")
        if self.max_iterations < 1 or self.gradient_tolerance <= 0:
            raise ValueError("max_iterations and gradient_tolerance must be positive")


@dataclass
class LogitFit:
    """Result of one multinomial logit fit on standardized covariates.

    ``coef`` has shape ``(K, d + 1)``: row 0 is the reference class (all
    zeros), column 0 the intercept.
    """

    coef: np.ndarray
    converged: bool
    iterations: int
    objective_trace: list
    gradient_norm: float


def _objective(coef, Z, Y, w, W, penalty):
    logp = log_softmax(Z @ coef.T, axis=1)
    ll = float(np.sum(w * np.sum(Y * logp, axis=1))) / W
    return ll - 0.5 * penalty * float(np.sum(coef[1:, 1:] ** 2)), logp


def _newton_step(Z, P, wn, pen, grad):
    """Solve H step = grad for the negative Hessian H of the objective."""
    Km1, p = grad.shape
    Pk = P[:, 1:]
    wz = Z * wn[:, None]
    H = np.empty((Km1, p, Km1, p))
    for a in range(Km1):
        for b in range(a, Km1):
            s = Pk[:, a] * ((a == b) - Pk[:, b])
            block = (wz * s[:, None]).T @ Z
            H[a, :, b, :] = block
            H[b, :, a, :] = block.T
    H = H.reshape(Km1 * p, Km1 * p)
    H[np.diag_indices_from(H)] += pen.reshape(-1) + 1e-12
    g = grad.reshape(-1)
    try:
        step = np.linalg.solve(H, g)
    except np.linalg.LinAlgError:
        return grad
    if not np.all(np.isfinite(step)) or step @ g <= 0:
        return grad
    return step.reshape(Km1, p)


def fit_multinomial_logit(Z, labels, n_classes, w, config: FitConfig) -> LogitFit:
    """Maximize the L2-penalized mean log-likelihood of a multinomial logit.

    ``Z`` already contains the intercept column. Newton steps are taken
    from a zero start and accepted only if the objective does not
    decrease (Armijo backtracking), so the trace is monotone. Large
    problems fall back to plain gradient steps under the same line search.
    """
    n, p = Z.shape
    K = n_classes
    W = float(w.sum())
    Y = np.zeros((n, K))
    Y[np.arange(n), labels] = 1.0
    coef = np.zeros((K, p))
    pen = np.full((K - 1, p), config.l2_penalty)
    pen[:, 0] = 0.0
    use_newton = (K - 1) * p <= 2000

    obj, logp = _objective(coef, Z, Y, w, W, config.l2_penalty)
    trace = [obj]
    converged = False
    iterations = 0
    while True:
        P = np.exp(logp)
        resid = (Y - P)[:, 1:] * w[:, None]
        grad = (resid.T @ Z) / W - pen * coef[1:]
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= config.gradient_tolerance:
            converged = True
            break
        if iterations >= config.max_iterations:
            break
        step = _newton_step(Z, P, w / W, pen, grad) if use_newton else grad
        slope = float(np.sum(step * grad))
        t = 1.0
        accepted = False
        while t >= 1e-14:
            cand = coef.copy()
            cand[1:] += t * step
            new_obj, new_logp = _objective(cand, Z, Y, w, W, config.l2_penalty)
            if new_obj >= obj + 1e-4 * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # stalled at floating-point resolution
            break
        coef, obj, logp = cand, new_obj, new_logp
        trace.append(obj)
        iterations += 1
    if not converged:
        warnings.warn(
            f"logit fit stopped after {iterations} iterations with gradient norm {gnorm:.3g}",
            ConvergenceWarning,
            stacklevel=3,
        )
    return LogitFit(coef, converged, iterations, trace, gnorm)


@dataclass
class PropensityModel:
    """Fitted propensity model.

    ``classes`` lists the coalition masks with a modelled probability;
    everything else gets probability 0 before clipping. For the
    ``factorized`` kind ``coef`` has shape ``(L, d + 1)`` (one logit per
    experiment, intercept first); for ``joint`` it is ``(K, d + 1)`` with
    the control row fixed to zero; for ``empirical`` it is the frequency
    vector over all coalitions.
    """

    kind: str
    L: int
    d: int
    classes: np.ndarray
    coef: np.ndarray
    x_mean: np.ndarray
    x_scale: np.ndarray
    clip_epsilon: float = DEFAULT_CLIP
    converged: bool = True
    iterations: int = 0
    clip_count: int = 0
    fits: list = field(default_factory=list, repr=False)

    @property
    def n_coalitions(self) -> int:
        return 1 << self.L

    def _standardize(self, X):
        if X.shape[1] != self.d:
            raise DimensionMismatch(f"expected {self.d} covariates, got {X.shape[1]}")
        return (X - self.x_mean) / self.x_scale

    def probabilities(self, X, clip: bool = True) -> np.ndarray:
        """``(n, 2**L)`` matrix of coalition probabilities for each row of ``X``.

        With ``clip`` entries below ``clip_epsilon`` are raised to it and
        rows are renormalized; the number of clipped entries is added to
        ``clip_count``.
        """
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if self.kind == "empirical":
            if X.shape[1] != self.d:
                raise DimensionMismatch(f"expected {self.d} covariates, got {X.shape[1]}")
            probs = np.tile(self.coef, (X.shape[0], 1))
        else:
            Z = self._standardize(X)
            Z = np.hstack([np.ones((Z.shape[0], 1)), Z])
            if self.kind == "joint":
                probs = np.zeros((Z.shape[0], self.n_coalitions))
                probs[:, self.classes] = softmax(Z @ self.coef.T, axis=1)
            else:
                eta = Z @ self.coef.T
                masks = np.arange(self.n_coalitions)
                bits = (masks[:, None] >> np.arange(self.L)) & 1
                # log-space product over experiments
                logp = log_expit(eta) @ bits.T + log_expit(-eta) @ (1 - bits).T
                probs = np.exp(logp)
                probs /= probs.sum(axis=1, keepdims=True)
        if clip:
            low = probs < self.clip_epsilon
            n_low = int(low.sum())
            if n_low:
                self.clip_count += n_low
                probs = np.where(low, self.clip_epsilon, probs)
                probs /= probs.sum(axis=1, keepdims=True)
        return probs

    def predict(self, x, clip: bool = True) -> np.ndarray:
        """Probability vector over all coalitions at one covariate vector."""
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != self.d:
            raise DimensionMismatch(f"expected {self.d} covariates, got {x.shape[0]}")
        return self.probabilities(x.reshape(1, -1), clip=clip)[0]

    def propensity(self, X, T: int) -> np.ndarray:
        """Clipped ê(T, x_i) for every row of ``X``."""
        return self.probabilities(X)[:, T]

    def original_scale_coef(self) -> np.ndarray:
        """Coefficients mapped back to unstandardized covariates."""
        if self.kind == "empirical":
            return self.coef.copy()
        slopes = self.coef[:, 1:] / self.x_scale
        intercept = self.coef[:, 0] - slopes @ self.x_mean
        return np.hstack([intercept[:, None], slopes])

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "classes": [int(c) for c in self.classes],
            "coefficients": self.original_scale_coef().tolist(),
            "clip_epsilon": self.clip_epsilon,
            "clip_count": self.clip_count,
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
        }


def _scaling(table: ObservationTable, config: FitConfig):
    X = table.covariates
    if not config.standardize:
        return np.zeros(table.d), np.ones(table.d)
    w = table.weights / table.total_weight
    mean = w @ X
    scale = np.sqrt(w @ (X - mean) ** 2)
    scale[scale <= 1e-12] = 1.0
    return mean, scale


def _design(table, mean, scale):
    Z = (table.covariates - mean) / scale
    return np.hstack([np.ones((table.n, 1)), Z])


def fit_joint(table: ObservationTable, config: FitConfig = FitConfig(), clip_epsilon=DEFAULT_CLIP):
    """Multinomial logit over the observed coalitions, control as reference.

    Coalitions never observed get probability zero (then ``clip_epsilon``
    after clipping); their likelihood is unbounded otherwise.
    """
    if table.d == 0:
        raise NoCovariates("joint propensity model needs covariates; use the empirical kind")
    classes = np.array(table.observed(), dtype=np.int64)
    if classes.size < 2:
        raise SingleClassOnly(
            f"only coalition {int(classes[0])} observed", coalition=int(classes[0])
        )
    labels = np.searchsorted(classes, table.treatments)
    mean, scale = _scaling(table, config)
    fit = fit_multinomial_logit(_design(table, mean, scale), labels, classes.size, table.weights, config)
    return PropensityModel(
        "joint", table.L, table.d, classes, fit.coef, mean, scale, clip_epsilon,
        fit.converged, fit.iterations, fits=[fit],
    )


def fit_factorized(table: ObservationTable, config: FitConfig = FitConfig(), clip_epsilon=DEFAULT_CLIP):
    """Independent binary logit P(l in T | x) for every experiment ``l``."""
    if table.d == 0:
        raise NoCovariates("factorized propensity model needs covariates; use the empirical kind")
    mean, scale = _scaling(table, config)
    Z = _design(table, mean, scale)
    bits = table.treatment_bits()
    coef = np.zeros((table.L, table.d + 1))
    fits = []
    for l in range(table.L):
        labels = bits[:, l]
        if labels.min() == labels.max():
            raise SingleClassOnly(
                f"experiment {l} is {'always' if labels[0] else 'never'} active", experiment=l
            )
        fit = fit_multinomial_logit(Z, labels, 2, table.weights, config)
        coef[l] = fit.coef[1]
        fits.append(fit)
    return PropensityModel(
        "factorized", table.L, table.d, np.arange(1 << table.L), coef, mean, scale, clip_epsilon,
        all(f.converged for f in fits), max(f.iterations for f in fits), fits=fits,
    )


def fit_empirical(table: ObservationTable, clip_epsilon=DEFAULT_CLIP):
    freq = np.bincount(table.treatments, weights=table.weights, minlength=1 << table.L)
    freq = freq / table.total_weight
    return PropensityModel(
        "empirical", table.L, table.d, np.arange(1 << table.L), freq,
        np.zeros(table.d), np.ones(table.d), clip_epsilon,
    )


def fit_propensity(table: ObservationTable, kind: str, config: FitConfig = FitConfig(),
                   clip_epsilon=DEFAULT_CLIP) -> PropensityModel:
    if kind == "joint":
        return fit_joint(table, config, clip_epsilon)
    if kind == "factorized":
        return fit_factorized(table, config, clip_epsilon)
    if kind == "empirical":
        return fit_empirical(table, clip_epsilon)
    raise ValueError(f"unknown propensity kind {kind!r}")


def coalition_weights(model: PropensityModel, table: ObservationTable) -> dict[int, float]:
    """P̂(T): weighted average of the unclipped model probabilities over rows.

    Clipping only guards the IPS divisor, so it is not applied here; that
    keeps empirical weights equal to the class frequencies.
    """
    if table.d != model.d or table.L != model.L:
        raise DimensionMismatch("propensity model and table dimensions differ")
    if model.kind == "empirical":
        probs = model.coef
    else:
        w = table.weights / table.total_weight
        probs = w @ model.probabilities(table.covariates, clip=False)
    probs = probs / probs.sum()
    return {T: float(p) for T, p in enumerate(probs)}


def default_kind(table: ObservationTable, requested: Optional[str] = None) -> str:
    if requested:
        return requested
    if table.d == 0:
        return "empirical"
    return "factorized"
