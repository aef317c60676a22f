"""Shapley-based cost sharing of the total lift among experiments.

Sums over coalitions use :func:`math.fsum`, which is correctly rounded and
therefore independent of summation order. Exact Shapley values are
computed as ``fsum(c_S * marginal_S) / k!`` with integer ordering counts
``c_S = |S|! (k - |S| - 1)!``; exhaustive permutation sampling tallies the
same counts, so both routes agree bit for bit.
"""

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from .coredata import BASELINE, DEFAULT_MAX_EXACT_L, format_coalition, members, popcount, subsets
from .errors import MissingSubsetValue, OracleUndefined, TooManyExperiments, UnobservedCoalition
from .estimators import CoalitionEstimates, OutcomeModel
from .propensity import PropensityModel

SHARING_METHODS = ("weighted_shapley", "weighted_average")


@dataclass(frozen=True)
class Game:
    """Cost game over ``players`` (experiment indices).

    ``values`` maps global coalition masks (subsets of the grand
    coalition) to v(S); v(∅) is always 0.
    """

    players: tuple
    values: dict

    @property
    def grand(self) -> int:
        mask = 0
        for l in self.players:
            mask |= 1 << l
        return mask

    def value(self, S: int) -> float:
        if S == BASELINE:
            return 0.0
        try:
            return self.values[S]
        except KeyError:
            raise MissingSubsetValue(f"game has no value for {format_coalition(S)}", coalition=S) from None


@dataclass
class AttributionResult:
    method: str
    per_experiment: dict
    total: float
    target: Optional[float] = None
    budget_gap: Optional[float] = None
    details: dict = field(default_factory=dict)

    def as_vector(self, L: int) -> np.ndarray:
        return np.array([self.per_experiment.get(l, 0.0) for l in range(L)])


def _local_values(value: Callable[[int], float], players: list) -> list:
    """v over local masks 0..2^k-1, where local bit j is ``players[j]``."""
    k = len(players)
    out = []
    for local in range(1 << k):
        glob = 0
        for j in range(k):
            if local >> j & 1:
                glob |= 1 << players[j]
        out.append(0.0 if glob == BASELINE else value(glob))
    return out


def _reduce(counts: dict, vals: list, k: int, denom: int) -> list:
    """φ_j = fsum(count * marginal) / denom from tallied (j, S) counts."""
    phi = []
    for j in range(k):
        bit = 1 << j
        terms = [c * (vals[S | bit] - vals[S]) for S, c in sorted(counts[j].items())]
        phi.append(math.fsum(terms) / denom)
    return phi


def shapley_exact(game: Game, max_players: int = DEFAULT_MAX_EXACT_L) -> dict:
    """Exact Shapley values {player: φ} by summing over all subsets."""
    players = list(game.players)
    k = len(players)
    if k > max_players:
        raise TooManyExperiments(
            f"{k} players exceed the exact maximum {max_players}", experiments=k, maximum=max_players
        )
    if k == 0:
        return {}
    vals = _local_values(game.value, players)
    coeff = [math.factorial(s) * math.factorial(k - s - 1) for s in range(k)]
    counts = []
    for j in range(k):
        bit = 1 << j
        counts.append({S: coeff[popcount(S)] for S in range(1 << k) if not S & bit})
    phi = _reduce(counts, vals, k, math.factorial(k))
    return dict(zip(players, phi))


def permutation_seed(seed: int, index: int) -> np.random.Generator:
    """Independent generator for permutation ``index`` of stream ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def shapley_sampled(
    value: Callable[[int], float],
    players: Iterable[int],
    permutations: int = 1000,
    seed: int = 0,
    exhaustive: bool = False,
) -> dict:
    """Permutation-sampling Shapley estimate {player: φ̂}.

    ``value`` maps a global coalition mask to its cost; it is only called
    on prefixes of sampled orderings. With ``exhaustive`` every ordering
    of ``players`` is visited once and ``permutations`` is ignored.
    Permutation ``r`` is drawn from its own generator seeded by
    ``(seed, r)``, so results do not depend on evaluation order.
    """
    players = list(players)
    k = len(players)
    if k == 0:
        return {}
    if not exhaustive and permutations < 1:
        raise ValueError("permutations must be >= 1")

    cache = {0: 0.0}

    def v(local):
        if local not in cache:
            glob = 0
            for j in range(k):
                if local >> j & 1:
                    glob |= 1 << players[j]
            try:
                cache[local] = float(value(glob))
            except (KeyError, MissingSubsetValue, UnobservedCoalition):
                raise OracleUndefined(
                    f"value oracle undefined on {format_coalition(glob)}", coalition=glob
                ) from None
        return cache[local]

    if exhaustive:
        orders = itertools.permutations(range(k))
        denom = math.factorial(k)
    else:
        orders = (permutation_seed(seed, r).permutation(k) for r in range(permutations))
        denom = permutations

    counts = [dict() for _ in range(k)]
    for order in orders:
        prefix = 0
        for j in order:
            j = int(j)
            counts[j][prefix] = counts[j].get(prefix, 0) + 1
            v(prefix)
            v(prefix | 1 << j)
            prefix |= 1 << j
    vals = [cache.get(local, 0.0) for local in range(1 << k)]
    phi = _reduce(counts, vals, k, denom)
    return dict(zip(players, phi))


def restricted_game(est: CoalitionEstimates, T: int) -> Game:
    """Game over the experiments in ``T`` with v(S) = μ̂_S − μ̂_0 for S ⊆ T."""
    players = tuple(members(T))
    values = {}
    for S in subsets(T):
        if S != BASELINE:
            values[S] = est.game(S)
    return Game(players, values)


def _finish(method, per, target, L):
    per = {l: per.get(l, 0.0) for l in range(L)}
    total = math.fsum(per[l] for l in range(L))
    gap = abs(total - target)
    return AttributionResult(method, per, total, target, gap)


def weighted_shapley(
    est: CoalitionEstimates,
    max_exact: int = DEFAULT_MAX_EXACT_L,
    permutations: int = 1000,
    seed: int = 0,
) -> AttributionResult:
    """Δ̃_l = Σ_T P̂(T) φ^T_l, with φ^T the Shapley value of the game restricted to T.

    Restricted games larger than ``max_exact`` players are approximated by
    permutation sampling (still budget balanced per ordering).
    """
    contrib = {l: [] for l in range(est.L)}
    for T, p in sorted(est.weights.items()):
        if p <= 0 or T == BASELINE:
            continue
        game = restricted_game(est, T)
        if len(game.players) > max_exact:
            phi = shapley_sampled(game.value, game.players, permutations, seed=seed ^ T)
        else:
            phi = shapley_exact(game, max_exact)
        for l, value in phi.items():
            contrib[l].append(p * value)
    per = {l: math.fsum(terms) for l, terms in contrib.items()}
    return _finish("weighted_shapley", per, est.total_effect(), est.L)


def weighted_average_share(est: CoalitionEstimates) -> AttributionResult:
    """Δ_l = Σ_{T ∋ l} P̂(T) v(T) / |T|: equal split of each coalition's effect."""
    contrib = {l: [] for l in range(est.L)}
    for T, p in sorted(est.weights.items()):
        if p <= 0 or T == BASELINE:
            continue
        if not est.has(T):
            raise UnobservedCoalition(
                f"coalition {format_coalition(T)} has weight {p:.3g} but no estimate", coalition=T
            )
        share = p * est.game(T) / popcount(T)
        for l in members(T):
            contrib[l].append(share)
    per = {l: math.fsum(terms) for l, terms in contrib.items()}
    return _finish("weighted_average", per, est.total_effect(), est.L)


def share(est: CoalitionEstimates, method: str, **kwargs) -> AttributionResult:
    if method == "weighted_shapley":
        return weighted_shapley(est, **kwargs)
    if method == "weighted_average":
        return weighted_average_share(est)
    raise ValueError(f"unknown sharing method {method!r}; expected one of {SHARING_METHODS}")


def conditional_estimates(x, omodel: OutcomeModel, pmodel: PropensityModel) -> CoalitionEstimates:
    """CoalitionEstimates at covariate value ``x``: μ_T(x) = m̂(T, x), P(T) = e(T, x)."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    probs = pmodel.predict(x[0], clip=False)
    values = {}
    for T in range(1 << pmodel.L):
        try:
            values[T] = float(omodel.predict(x, T)[0])
        except UnobservedCoalition:
            continue
    weights = {T: float(p) for T, p in enumerate(probs)}
    return CoalitionEstimates(pmodel.L, "ra", values[BASELINE], values, weights)


def conditional_attribution(
    x, omodel: OutcomeModel, pmodel: PropensityModel, method: str = "weighted_shapley"
) -> AttributionResult:
    """Attribution for the subgroup at covariate value ``x``."""
    if method not in SHARING_METHODS:
        raise ValueError(f"unknown sharing method {method!r}")
    return share(conditional_estimates(x, omodel, pmodel), method)
