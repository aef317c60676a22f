"""Command-line entry point: ``fairshare {simulate,attribute,benchmark,report}``."""

import argparse
import json
import sys
import warnings
from pathlib import Path

from . import report as rpt
from .coredata import read_table, write_table
from .errors import FairshareError, UsageError
from .estimators import METHODS
from .synthbench import SIGN_MODES, GeneratorConfig, generate, run_benchmark


def _common(p, data=True):
    if data:
        p.add_argument("--data", required=True, help="input file")
    p.add_argument("--out", required=True, help="output file")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairshare", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic experiment log as CSV")
    _common(p, data=False)
    p.add_argument("--experiments", type=int, default=3)
    p.add_argument("--covariates", type=int, default=5)
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--rct", action="store_true", help="randomized assignment (no confounding)")
    p.add_argument("--sign-mode", choices=SIGN_MODES, default="alternating")
    p.add_argument("--offset", type=float, default=0.0, help="constant added to every outcome")

    p = sub.add_parser("attribute", help="estimate effects and attribute the lift to experiments")
    _common(p)
    p.add_argument("--experiments", type=int, default=None, help="L; inferred from the header if omitted")
    p.add_argument("--covariates", type=int, default=None, help="d; inferred from the header if omitted")
    p.add_argument("--estimator", choices=METHODS, default="ips")
    p.add_argument("--propensity", choices=("joint", "factorized", "empirical"), default=None)
    p.add_argument("--method", choices=tuple(rpt.CLI_METHODS), default="shapley")
    p.add_argument("--bootstrap", type=int, default=200, help="resamples; 0 disables intervals")
    p.add_argument("--ci-level", type=float, default=0.95)
    p.add_argument("--impute-missing", action="store_true")
    p.add_argument("--dr-variant", choices=("paper", "aipw"), default="aipw")
    p.add_argument("--max-exact-l", type=int, default=15)
    p.add_argument("--text", default=None, help="also write the text table here")

    p = sub.add_parser("benchmark", help="repeat the synthetic attribution benchmark")
    _common(p, data=False)
    p.add_argument("--experiments", type=int, default=3)
    p.add_argument("--covariates", type=int, default=5)
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--rct", action="store_true")
    p.add_argument("--sign-mode", choices=SIGN_MODES, default="alternating")
    p.add_argument("--replications", type=int, default=20)
    p.add_argument("--estimator", choices=METHODS, action="append", default=None,
                   help="repeatable; default mean and ips")
    p.add_argument("--propensity", choices=("joint", "factorized"), default="factorized")

    p = sub.add_parser("report", help="render an attribution JSON report as text or CSV")
    p.add_argument("--data", required=True, help="report JSON written by attribute")
    p.add_argument("--out", required=True, help="output; .csv gives plot data, anything else text")
    return parser


def _write(path, text):
    Path(path).write_text(text, encoding="utf-8")


def cmd_simulate(args):
    cfg = GeneratorConfig(args.n, args.covariates, args.experiments, args.rct, args.seed, args.sign_mode,
                          args.offset)
    table, _ = generate(cfg)
    write_table(table, args.out)


def cmd_attribute(args):
    table = read_table(args.data, args.experiments, args.covariates)
    config = rpt.RunConfig(
        estimator=args.estimator,
        propensity_kind=args.propensity,
        method=args.method,
        bootstrap=args.bootstrap,
        seed=args.seed,
        ci_level=args.ci_level,
        impute_missing=args.impute_missing,
        dr_variant=args.dr_variant,
        max_exact_l=args.max_exact_l,
    )
    doc = rpt.attribute(table, config, data_path=args.data)
    _write(args.out, rpt.dumps(doc))
    if args.text:
        _write(args.text, rpt.render_text(doc))


def cmd_benchmark(args):
    cfg = GeneratorConfig(args.n, args.covariates, args.experiments, args.rct, args.seed, args.sign_mode)
    estimators = tuple(args.estimator or ("mean", "ips"))
    rep = run_benchmark(cfg, args.replications, estimators, propensity_kind=args.propensity)
    out = Path(args.out)
    _write(out, rep.to_csv())
    _write(out.with_suffix(".json"), rep.to_json())


def cmd_report(args):
    try:
        doc = json.loads(Path(args.data).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read report {args.data}: {exc}") from None
    if args.out.endswith(".csv"):
        _write(args.out, rpt.render_csv(doc))
    else:
        _write(args.out, rpt.render_text(doc))


COMMANDS = {
    "simulate": cmd_simulate,
    "attribute": cmd_attribute,
    "benchmark": cmd_benchmark,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            COMMANDS[args.command](args)
        except FairshareError as exc:
            print(json.dumps(exc.to_dict(), default=str), file=sys.stderr)
            return 1
        except (OSError, ValueError) as exc:
            print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
            return 1
    seen = set()
    for w in caught:
        msg = f"warning: {w.message}"
        if msg not in seen:
            seen.add(msg)
            print(msg, file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
