"""Percentile bootstrap over table rows."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .coredata import ObservationTable
from .errors import FairshareError, PipelineFailure

MAX_FAILURE_RATE = 0.2


@dataclass(frozen=True)
class BootstrapConfig:
    resamples: int = 200
    seed: int = 0
    ci_level: float = 0.95
    refit_models: bool = True

    def __post_init__(self):
        if self.resamples < 2:
            raise ValueError("need at least 2 bootstrap resamples")
        if not 0 < self.ci_level < 1:
            raise ValueError("ci_level must lie in (0, 1)")


@dataclass(frozen=True)
class IntervalEstimate:
    point: float
    ci_low: float
    ci_high: float

    @property
    def significant(self) -> bool:
        """The interval excludes zero (a degenerate interval at 0 does not)."""
        return self.ci_low > 0 or self.ci_high < 0

    def to_dict(self) -> dict:
        return {
            "point": self.point,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "significant": self.significant,
        }


@dataclass
class BootstrapResult:
    intervals: list
    failures: int
    draws: np.ndarray

    def __getitem__(self, i):
        return self.intervals[i]

    def __len__(self):
        return len(self.intervals)


def resample_indices(n: int, seed: int, b: int) -> np.ndarray:
    """Row indices of resample ``b``; depends only on ``(seed, b)``."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, b]))
    return rng.integers(0, n, size=n)


def percentile_interval(point: float, draws: np.ndarray, ci_level: float) -> IntervalEstimate:
    alpha = (1.0 - ci_level) / 2.0
    lo, hi = np.quantile(draws, [alpha, 1.0 - alpha], method="linear")
    return IntervalEstimate(float(point), float(lo), float(hi))


def bootstrap(
    table: ObservationTable,
    pipeline: Callable[[ObservationTable], np.ndarray],
    config: BootstrapConfig = BootstrapConfig(),
    workers: Optional[int] = None,
) -> BootstrapResult:
    """Percentile confidence intervals for every coordinate of ``pipeline``.

    The point estimate is ``pipeline(table)``. Resamples whose pipeline
    raises a :class:`FairshareError` (e.g. a coalition vanished) are
    dropped and counted; more than 20% failures raises PipelineFailure.
    ``workers`` evaluates resamples on a thread pool; results are reduced
    in resample order so the output does not depend on it.
    """
    point = np.atleast_1d(np.asarray(pipeline(table), dtype=float))

    def run(b):
        idx = resample_indices(table.n, config.seed, b)
        try:
            out = np.atleast_1d(np.asarray(pipeline(table.take(idx)), dtype=float))
        except FairshareError:
            return None
        if out.shape != point.shape:
            raise ValueError(f"pipeline returned shape {out.shape}, expected {point.shape}")
        return out

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, range(config.resamples)))
    else:
        results = [run(b) for b in range(config.resamples)]

    ok = [r for r in results if r is not None]
    failures = config.resamples - len(ok)
    if failures > MAX_FAILURE_RATE * config.resamples or len(ok) < 2:
        raise PipelineFailure(
            f"{failures} of {config.resamples} bootstrap resamples failed", failures=failures
        )
    draws = np.vstack(ok)
    intervals = [percentile_interval(point[j], draws[:, j], config.ci_level) for j in range(point.size)]
    return BootstrapResult(intervals, failures, draws)
