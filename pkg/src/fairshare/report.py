"""The attribution pipeline and its JSON / text / CSV reports."""

import csv
import io
import json
import math
import warnings
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .coredata import BASELINE, ObservationTable, format_coalition, members
from .costsharing import share
from .errors import UnobservedCoalition, UsageError
from .estimators import DR_VARIANTS, METHODS, estimate_all, fit_outcome, lift, marginal_effect
from .propensity import FitConfig, fit_propensity
from .uncertainty import BootstrapConfig, bootstrap

CLI_METHODS = {"shapley": "weighted_shapley", "average": "weighted_average", "marginal": "marginal"}
ROW_TITLES = {"weighted_shapley": "Shapley cost", "weighted_average": "Average cost", "marginal": "Marginal impact"}


@dataclass(frozen=True)
class RunConfig:
    estimator: str = "ips"
    propensity_kind: Optional[str] = None
    method: str = "shapley"
    bootstrap: int = 200
    seed: int = 0
    ci_level: float = 0.95
    impute_missing: bool = False
    dr_variant: str = "aipw"
    max_exact_l: int = 15

    def __post_init__(self):
        if self.estimator not in METHODS:
            raise UsageError(f"estimator must be one of {METHODS}")
        if self.propensity_kind not in (None, "joint", "factorized", "empirical"):
            raise UsageError("propensity must be joint, factorized or empirical")
        if self.method not in CLI_METHODS:
            raise UsageError(f"method must be one of {tuple(CLI_METHODS)}")
        if self.dr_variant not in DR_VARIANTS:
            raise UsageError(f"dr-variant must be one of {DR_VARIANTS}")
        if self.bootstrap == 1 or self.bootstrap < 0:
            raise UsageError("bootstrap must be 0 (disabled) or >= 2")


def resolve_kind(table: ObservationTable, requested: Optional[str]) -> str:
    """Propensity kind actually used for ``table``."""
    if table.d == 0:
        if requested not in (None, "empirical"):
            warnings.warn(f"no covariates: using the empirical propensity instead of {requested}")
        return "empirical"
    if requested:
        return requested
    return "factorized"


class AttributionPipeline:
    """Maps a table to the flat vector of every reported quantity.

    Layout: ``[mu_0, mu_T..., lift_T..., delta_l..., lift_l..., total, overall_lift]``
    over the coalitions observed in the original table. For the marginal
    method ``delta_l`` is the per-experiment ATE and ``total`` is NaN.
    """

    def __init__(self, table: ObservationTable, config: RunConfig, fit_config: FitConfig = FitConfig()):
        self.config = config
        self.fit_config = fit_config
        self.kind = resolve_kind(table, config.propensity_kind)
        self.method = CLI_METHODS[config.method]
        self.L = table.L
        self.coalitions = [T for T in table.observed() if T != BASELINE]
        if BASELINE not in table.observed():
            raise UnobservedCoalition("no rows in the control group", coalition=BASELINE)
        self.frozen = None

    def fit(self, table):
        pmodel = fit_propensity(table, self.kind, self.fit_config)
        omodel = None
        if self.config.estimator in ("ra", "dr") or self.config.impute_missing:
            omodel = fit_outcome(table, self.fit_config)
        return pmodel, omodel

    def estimates(self, table, models=None):
        pmodel, omodel = models if models is not None else self.fit(table)
        est = estimate_all(table, self.config.estimator, pmodel, omodel,
                           self.config.dr_variant, self.config.impute_missing)
        for T in self.coalitions:
            if T not in est.values:
                raise UnobservedCoalition(f"coalition {format_coalition(T)} unobserved", coalition=T)
        return est

    def attribution(self, table, est):
        if self.method == "marginal":
            deltas = np.array([
                marginal_effect(table, l, self.config.estimator, self.kind, self.fit_config,
                                self.config.dr_variant)[0]
                for l in range(self.L)
            ])
            return deltas, float("nan"), None
        result = share(est, self.method, **({"max_exact": self.config.max_exact_l}
                                            if self.method == "weighted_shapley" else {}))
        return result.as_vector(self.L), result.total, result

    def __call__(self, table):
        est = self.estimates(table, self.frozen)
        mu0 = est.baseline
        mus = np.array([est.values[T] for T in self.coalitions])
        lifts = np.array([lift(m - mu0, mu0) for m in mus])
        deltas, total, _ = self.attribution(table, est)
        delta_lifts = np.array([lift(d, mu0) for d in deltas])
        overall = lift(total, mu0) if math.isfinite(total) else float("nan")
        return np.concatenate([[mu0], mus, lifts, deltas, delta_lifts, [total, overall]])


def _interval(ivs, j):
    iv = ivs[j]
    return {"point": iv.point, "ci_low": iv.ci_low, "ci_high": iv.ci_high, "significant": iv.significant}


def _point_only(v):
    return {"point": float(v), "ci_low": None, "ci_high": None, "significant": False}


def attribute(table: ObservationTable, config: RunConfig, fit_config: FitConfig = FitConfig(),
              data_path: Optional[str] = None, refit_models: bool = True) -> dict:
    """Run estimation, attribution and bootstrap; returns the report document.

    With ``refit_models`` off, bootstrap resamples reuse the models fitted
    on the full table.
    """
    pipe = AttributionPipeline(table, config, fit_config)
    models = pipe.fit(table)
    est = pipe.estimates(table, models)
    _, _, result = pipe.attribution(table, est)
    pmodel, omodel = models
    clip_count = pmodel.clip_count
    if config.bootstrap:
        bcfg = BootstrapConfig(config.bootstrap, config.seed, config.ci_level, refit_models)
        if not refit_models:
            pipe.frozen = models
        boot = bootstrap(table, pipe, bcfg)
        cell = lambda j: _interval(boot.intervals, j)  # noqa: E731
        failures = boot.failures
    else:
        point = pipe(table)
        cell = lambda j: _point_only(point[j])  # noqa: E731
        failures = 0

    k = len(pipe.coalitions)
    L = table.L
    counts = table.counts()
    coalitions = []
    for i, T in enumerate(pipe.coalitions):
        mu = cell(1 + i)
        lf = cell(1 + k + i)
        coalitions.append({
            "mask": T,
            "members": members(T),
            "label": "+".join(table.experiments.labels[l] for l in members(T)),
            "count": counts.get(T, 0),
            "weight": est.weights.get(T, 0.0),
            "mu_hat": mu["point"],
            "mu_ci": [mu["ci_low"], mu["ci_high"]],
            "lift_pct": lf["point"],
            "ci_low": lf["ci_low"],
            "ci_high": lf["ci_high"],
            "significant": lf["significant"],
        })

    experiments = []
    off = 1 + 2 * k
    for l in range(L):
        dl = cell(off + l)
        lf = cell(off + L + l)
        experiments.append({
            "id": l,
            "label": table.experiments.labels[l],
            "delta": dl["point"],
            "delta_ci": [dl["ci_low"], dl["ci_high"]],
            "lift_pct": lf["point"],
            "ci_low": lf["ci_low"],
            "ci_high": lf["ci_high"],
            "significant": lf["significant"],
        })

    attribution = {"method": pipe.method, "experiments": experiments}
    if pipe.method != "marginal":
        total = cell(off + 2 * L)
        overall = cell(off + 2 * L + 1)
        attribution["total_delta"] = total["point"]
        attribution["overall_lift"] = overall
        attribution["budget_gap"] = result.budget_gap

    baseline = cell(0)
    converged = bool(pmodel.converged)
    metadata = {
        "command": "attribute",
        "data": data_path,
        "config": asdict(config),
        "propensity_kind": pipe.kind,
        "n": table.n,
        "L": L,
        "d": table.d,
        "labels": list(table.experiments.labels),
        "clip_count": clip_count,
        "converged": converged,
        "bootstrap_failures": failures,
        "imputed": sorted(est.imputed),
        "propensity": pmodel.to_dict(),
    }
    if omodel is not None:
        metadata["outcome_model"] = omodel.to_dict()
    return {"metadata": metadata, "baseline": baseline, "coalitions": coalitions, "attribution": attribution}


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=2, allow_nan=True) + "\n"


def format_cell(point, low, high, significant) -> str:
    """``-10.19 (-12.31, -7.90)*``: point, CI in parentheses, ``*`` if significant."""
    if low is None or high is None:
        return f"{point:.2f}"
    return f"{point:.2f} ({low:.2f}, {high:.2f})" + ("*" if significant else "")


def render_text(doc: dict) -> str:
    """Aligned text rendering: experiments as columns, lift % per cell."""
    att = doc["attribution"]
    meta = doc["metadata"]
    level = round(meta["config"]["ci_level"] * 100)
    heads = [f"Exp. {e['id']}" if e["label"] == f"exp_{e['id']}" else e["label"] for e in att["experiments"]]
    cells = [format_cell(e["lift_pct"], e["ci_low"], e["ci_high"], e["significant"]) for e in att["experiments"]]
    title = ROW_TITLES[att["method"]] + " (%)"
    widths = [max(len(h), len(c)) for h, c in zip(heads, cells)]
    first = max(len(title), len("Coalition"))
    lines = [
        f"Attribution: {att['method']}, estimator {meta['config']['estimator']}; "
        f"lift in % with {level}% CI, * = CI excludes 0",
        "",
        " " * first + "  " + "  ".join(h.rjust(w) for h, w in zip(heads, widths)),
        title.ljust(first) + "  " + "  ".join(c.rjust(w) for c, w in zip(cells, widths)),
        "",
    ]
    b = doc["baseline"]
    lines.append(f"Baseline mean: {b['point']:.6g}")
    if "overall_lift" in att:
        o = att["overall_lift"]
        lines.append("Overall lift (%): " + format_cell(o["point"], o["ci_low"], o["ci_high"], o["significant"]))
        lines.append(f"Budget gap: {att['budget_gap']:.3e}")
    lines.append("")
    rows = [("Coalition", "Count", "Weight", "Lift (%)")]
    for c in doc["coalitions"]:
        rows.append((
            format_coalition(c["mask"]),
            str(c["count"]),
            f"{c['weight']:.4f}",
            format_cell(c["lift_pct"], c["ci_low"], c["ci_high"], c["significant"]),
        ))
    cw = [max(len(r[i]) for r in rows) for i in range(4)]
    for r in rows:
        lines.append("  ".join(v.ljust(cw[0]) if i == 0 else v.rjust(cw[i]) for i, v in enumerate(r)))
    return "\n".join(lines) + "\n"


def render_csv(doc: dict) -> str:
    """Plot data: one row per coalition lift and per experiment attribution."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["block", "id", "label", "lift_pct", "ci_low", "ci_high", "significant"])
    for c in doc["coalitions"]:
        writer.writerow(["coalition", c["mask"], format_coalition(c["mask"]), repr(c["lift_pct"]),
                         repr(c["ci_low"]), repr(c["ci_high"]), int(c["significant"])])
    for e in doc["attribution"]["experiments"]:
        writer.writerow([doc["attribution"]["method"], e["id"], e["label"], repr(e["lift_pct"]),
                         repr(e["ci_low"]), repr(e["ci_high"]), int(e["significant"])])
    return buf.getvalue()
