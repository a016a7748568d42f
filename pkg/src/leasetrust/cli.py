"""Command-line entry point: fit, price, simulate, validate, curve.

Exit codes: 0 success, 2 bad input data, 3 a validation tolerance failed.
Every output file gets a ``<output>.manifest.json`` next to it.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .cashflow import DepreciationCurve, PricingError, Portfolio, price_trust, with_cte
from .ingest import (
    DataError,
    derive_observations,
    estimate_depreciation,
    filter_term,
    parse_portfolio,
    smooth_depreciation,
)
from .montecarlo import SimulationConfig, simulate_apv_distribution, simulate_trust
from .studies import STUDIES
from .survival import (
    HazardModel,
    WindowError,
    asymptotic_covariance,
    build_support_window,
    estimate_hazard,
    extend_tail_geometric,
    interpolate_zero_hazards,
)

EXIT_OK = 0
EXIT_DATA = 2
EXIT_TOLERANCE = 3

log = logging.getLogger("leasetrust")


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_manifest(output, command: str, inputs, **params) -> Path:
    """Record what produced ``output``: command, inputs with hashes, parameters, version."""
    doc = {
        "command": command,
        "inputs": [{"path": str(p), "sha256": _sha256(p)} for p in inputs],
        "output": {"path": str(output), "sha256": _sha256(output)},
        "version": __version__,
        **params,
    }
    target = Path(f"{output}.manifest.json")
    _write_json(target, doc)
    return target


def _load_portfolio(path, window, term=None):
    records = filter_term(parse_portfolio(path), term)
    if not records:
        raise DataError([(None, f"{path}: no records" + (f" with term {term}" if term else ""))])
    return derive_observations(records, window)


def cmd_fit(args) -> int:
    window = build_support_window(args.delta, args.m, args.omega, args.epsilon)
    data = _load_portfolio(args.portfolio, window, args.term)
    if len(data.observations) == 0:
        raise DataError([(None, "no usable observations after classification")])
    model = estimate_hazard(data.observations, window)
    if model.unobserved:
        log.warning("empty risk set at ages %s; hazard set to 0 there%s",
                    list(model.unobserved),
                    "" if args.interpolate_zeros else " (use --interpolate-zeros)")
    if args.interpolate_zeros and (model.lam == 0).any():
        model = interpolate_zero_hazards(model)
    if args.tail == "geometric":
        model = extend_tail_geometric(model)
    model.dump(args.out)
    write_manifest(args.out, "fit", [args.portfolio], window=window.as_dict(), term=args.term,
                   interpolate_zeros=args.interpolate_zeros, tail=args.tail,
                   n=model.n, events=data.n_events, censored=data.n_censored,
                   excluded=[rid for rid, _ in data.excluded])
    print(f"fitted {len(model.lam)} hazards on ages {model.support[0]}..{model.support[-1]} "
          f"from n={model.n} ({data.n_events} terminated, {data.n_censored} active) -> {args.out}")
    return EXIT_OK


def _priceable(model: HazardModel, data):
    """Active contracts the model can price, plus the ids it cannot."""
    keep = [c for c in data.contracts if c.age < model.max_age]
    dropped = tuple(c.id for c in data.contracts if c.age >= model.max_age)
    for rid in dropped:
        log.warning("contract %s is past the model support (max age %d); excluded",
                    rid, model.max_age)
    if not keep:
        raise DataError([(None, "no active contracts within the model support")])
    return Portfolio(tuple(keep), model.window), dropped


def cmd_price(args) -> int:
    model = HazardModel.load(args.hazard)
    data = _load_portfolio(args.portfolio, model.window, args.term)
    portfolio, dropped = _priceable(model, data)
    curve = DepreciationCurve.from_csv(args.curve)
    report = with_cte(price_trust(portfolio, model, curve, args.rate), args.alpha,
                      args.tail_direction)
    if dropped:
        report = replace(report, excluded=dropped)
    report.dump(args.out)
    write_manifest(args.out, "price", [args.hazard, args.portfolio, args.curve],
                   window=model.window.as_dict(), rate=args.rate, alpha=args.alpha,
                   tail=args.tail_direction, term=args.term)
    print(f"apv={report.apv_trust:.2f} sd={report.sd_trust:.2f} cte={report.cte:.2f} "
          f"({len(portfolio)} contracts) -> {args.out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    model = HazardModel.load(args.hazard)
    data = _load_portfolio(args.portfolio, model.window, args.term)
    portfolio, dropped = _priceable(model, data)
    curve = DepreciationCurve.from_csv(args.curve)
    covariance = None
    if args.random_hazard:
        if model.n <= 0:
            raise DataError([(None, "--random-hazard needs a fitted model (n > 0)")])
        if (model.lam[: model.window.xi - model.window.delta] == 0).any():
            log.warning("interpolating zero hazards before sampling hazard vectors")
            model = interpolate_zero_hazards(model)
        covariance = asymptotic_covariance(model)
        if covariance.undefined:
            raise DataError([(None, f"hazard variance undefined at ages {list(covariance.undefined)}")])
    horizon = args.horizon or model.max_age - min(c.age for c in portfolio.contracts)
    config = SimulationConfig(replicates=args.replicates, seed=args.seed, horizon=horizon,
                              random_hazard=args.random_hazard)
    bands = simulate_trust(portfolio, model, curve, config, covariance)
    emp = simulate_apv_distribution(portfolio, model, curve, args.rate, config, covariance,
                                    alpha=args.alpha, tail=args.tail_direction)
    bands.to_csv(args.bands)
    doc = emp.to_json()
    doc.update(rate=args.rate, horizon=horizon, random_hazard=args.random_hazard,
               contracts=len(portfolio), excluded=list(dropped))
    _write_json(args.empirics, doc)
    params = dict(window=model.window.as_dict(), rate=args.rate, alpha=args.alpha,
                  tail=args.tail_direction, seed=args.seed, replicates=args.replicates,
                  horizon=horizon, random_hazard=args.random_hazard, term=args.term)
    inputs = [args.hazard, args.portfolio, args.curve]
    write_manifest(args.bands, "simulate", inputs, **params)
    write_manifest(args.empirics, "simulate", inputs, **params)
    print(f"mean pv={emp.mean:.2f} sd={emp.sd:.2f} over {emp.replicates} replicates "
          f"-> {args.bands}, {args.empirics}")
    return EXIT_OK


def cmd_validate(args) -> int:
    study = STUDIES[args.study]
    kwargs = {} if args.seed is None else {"seed": args.seed}
    if args.replicates is not None:
        kwargs["replicates"] = args.replicates
    if args.n is not None:
        if args.study != "asymptotics":
            raise DataError([(None, f"--n applies to the asymptotics study, not {args.study}")])
        kwargs["n"] = args.n
    report = study(**kwargs)
    for c in report.checks:
        print(c.line())
    if args.out:
        _write_json(args.out, report.as_dict())
        write_manifest(args.out, "validate", [], study=args.study, **kwargs)
        if report.rows:
            rows_path = Path(args.out).with_suffix(".csv")
            with open(rows_path, "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=list(report.rows[0]))
                w.writeheader()
                for row in report.rows:
                    w.writerow({k: v if k == "age" else repr(float(v)) for k, v in row.items()})
            write_manifest(rows_path, "validate", [], study=args.study, **kwargs)
    print(f"{args.study}: {'PASS' if report.passed else 'FAIL'}")
    return EXIT_OK if report.passed else EXIT_TOLERANCE


def cmd_curve(args) -> int:
    points = estimate_depreciation(filter_term(parse_portfolio(args.portfolio), args.term))
    curve = smooth_depreciation(points, range(0, args.omega + 1), span=args.span)
    curve.to_csv(args.out)
    write_manifest(args.out, "curve", [args.portfolio], omega=args.omega, span=args.span,
                   term=args.term, points=len(points), flags=list(curve.flags))
    print(f"depreciation curve on ages 0..{args.omega} from {len(points)} points -> {args.out}")
    return EXIT_OK


def _window_args(p):
    p.add_argument("--delta", type=int, required=True, help="minimum age at trust entry")
    p.add_argument("--m", type=int, required=True, help="last origination month")
    p.add_argument("--omega", type=int, required=True, help="maximum contract lifetime")
    p.add_argument("--epsilon", type=int, required=True, help="observation month")


def _pricing_args(p, rate_required: bool):
    p.add_argument("--rate", type=float, required=rate_required, default=0.0,
                   help="monthly discount rate")
    p.add_argument("--alpha", type=float, default=0.05, help="CTE tail probability")
    p.add_argument("--tail-direction", choices=("upper", "lower"), default="upper")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="leasetrust", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="estimate hazards from a lease portfolio CSV")
    p.add_argument("portfolio")
    _window_args(p)
    p.add_argument("--interpolate-zeros", action="store_true")
    p.add_argument("--tail", choices=("geometric", "none"), default="none")
    p.add_argument("--term", type=int, help="only use leases with this scheduled term")
    p.add_argument("-o", "--out", default="hazard.json")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("price", help="closed-form APV, sd and CTE of the active leases")
    p.add_argument("hazard")
    p.add_argument("portfolio")
    p.add_argument("curve")
    _pricing_args(p, rate_required=True)
    p.add_argument("--term", type=int)
    p.add_argument("-o", "--out", default="report.json")
    p.set_defaults(func=cmd_price)

    p = sub.add_parser("simulate", help="Monte Carlo cash-flow bands and PV empirics")
    p.add_argument("hazard")
    p.add_argument("portfolio")
    p.add_argument("curve")
    p.add_argument("--replicates", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--horizon", type=int, help="months to project (default: to maturity)")
    p.add_argument("--random-hazard", action="store_true")
    _pricing_args(p, rate_required=False)
    p.add_argument("--term", type=int)
    p.add_argument("--bands", default="bands.csv")
    p.add_argument("--empirics", default="empirics.json")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("validate", help="run a validation study against exact oracles")
    p.add_argument("--study", choices=sorted(STUDIES), required=True)
    p.add_argument("--n", type=int, help="sample size per replicate (asymptotics)")
    p.add_argument("--replicates", type=int)
    p.add_argument("--seed", type=int, help="default: the study's reference seed")
    p.add_argument("--out", help="JSON report path; per-age rows go to the .csv sibling")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("curve", help="smoothed depreciation curve from residual payments")
    p.add_argument("portfolio")
    p.add_argument("--omega", type=int, required=True)
    p.add_argument("--span", type=float, default=0.75)
    p.add_argument("--term", type=int)
    p.add_argument("-o", "--out", default="curve.csv")
    p.set_defaults(func=cmd_curve)
    return parser


def _log_to_stderr() -> None:
    """Route package warnings to the current stderr, replacing any earlier CLI handler."""
    for h in [h for h in log.handlers if getattr(h, "cli", False)]:
        log.removeHandler(h)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("warning: %(message)s"))
    handler.cli = True
    log.addHandler(handler)
    log.setLevel(logging.WARNING)
    log.propagate = False


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _log_to_stderr()
    try:
        return args.func(args)
    except DataError as exc:
        for row, msg in exc.problems:
            print(f"error: {'row ' + str(row) + ': ' if row is not None else ''}{msg}",
                  file=sys.stderr)
        return EXIT_DATA
    except (PricingError, WindowError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
