"""Command-line interface: ``darkfigure <command> --data NAME [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure,
4 convergence warning under ``--strict``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .bayes import (
    ConvergenceWarning,
    McmcSettings,
    PriorConfig,
    main_effects_posterior,
    threshold_refit,
    total_histogram,
)
from .datasets import DESCRIPTIONS, NAMES, builtin
from .design import ModelSpec, build_design, check_all_models, check_existence
from .exceptions import DataError, FitError
from .plots import histogram_svg, scatter_svg
from .poisfit import fit_mle, profile_ci
from .select import (
    OUTLIER_FENCE,
    exhaustive_search,
    export_scatter,
    scatter_csv,
    stepwise_aic,
)
from .tables import ListSystem, consolidate, dumps_csv, load_csv, omit_list, zero_fill

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_CONVERGENCE = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class _Transform(argparse.Action):
    """Collect ``--consolidate`` and ``--omit`` in command-line order."""

    def __call__(self, parser, namespace, values, option_string=None):
        items = list(getattr(namespace, self.dest) or [])
        kind = "consolidate" if option_string == "--consolidate" else "omit"
        items.append((kind, values))
        setattr(namespace, self.dest, items)


@dataclass
class RunConfig:
    dataset: str
    transforms: list = field(default_factory=list)
    fmt: str = "table"
    out: str | None = None
    seed: int = 1
    aggregate: bool = False


def parse_consolidate(text: str) -> tuple[list[str], str]:
    """``"A+B=C"`` -> ``(["A", "B"], "C")``."""
    if "=" not in text:
        raise UsageError(f"--consolidate expects A+B=NEW, got {text!r}")
    lhs, new = text.split("=", 1)
    group = [g.strip() for g in lhs.split("+") if g.strip()]
    if len(group) < 2 or not new.strip():
        raise UsageError(f"--consolidate expects A+B=NEW, got {text!r}")
    return group, new.strip()


def load_system(cfg: RunConfig) -> ListSystem:
    if cfg.dataset in NAMES:
        system = builtin(cfg.dataset)
    elif Path(cfg.dataset).exists():
        system = load_csv(cfg.dataset, aggregate=cfg.aggregate)
    else:
        raise DataError(f"{cfg.dataset!r} is neither a built-in data set ({', '.join(NAMES)}) nor a file")
    for kind, arg in cfg.transforms:
        if kind == "consolidate":
            group, new = parse_consolidate(arg)
            system = consolidate(system, group, new)
        else:
            system = omit_list(system, arg)
    return system


def _k(v: float) -> str:
    return f"{v / 1000:.1f}K" if math.isfinite(v) else "inf"


def _interval_text(iv) -> str:
    return f"{iv.level:.0%} ({_k(iv.lower)}, {_k(iv.upper)})"


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _json_text(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _clean(obj):
    """Replace non-finite floats so the JSON stays standard."""
    if isinstance(obj, float):
        if math.isnan(obj):
            return None
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _write_file(path: str, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")


def _spec_from_args(system, args) -> ModelSpec:
    if getattr(args, "interactions", None):
        return ModelSpec.from_labels(system.list_names, args.interactions)
    return ModelSpec.main_effects(system.k)


def _intervals(table, spec, fit, levels):
    if not math.isfinite(fit.dark_figure):
        return {}
    return profile_ci(table, spec, levels=levels, fit=fit)


def _fit_report(system, spec, fit, cis) -> dict:
    return {
        "lists": list(system.list_names),
        "interactions": spec.labels(system.list_names),
        "observed_total": fit.total_observed,
        "dark_figure": fit.dark_figure,
        "total_estimate": fit.total_estimate,
        "aic": fit.aic,
        "bic": fit.bic,
        "diverged": list(fit.diverged),
        "intervals": {f"{lv:g}": {"lower": iv.lower, "upper": iv.upper, "unbounded": iv.unbounded}
                      for lv, iv in cis.items()},
    }


def _fit_table_text(name, system, spec, fit, cis) -> str:
    lines = [
        f"data: {name} ({system.k} lists, {int(fit.total_observed)} observed)",
        f"model: {spec.spec_id(system.list_names)}",
        f"total estimate: {_k(fit.total_estimate)} ({fit.total_estimate:.1f})",
    ]
    for lv in sorted(cis):
        lines.append(f"  {_interval_text(cis[lv])}")
    if fit.diverged:
        lines.append(f"diverged interactions: {', '.join(fit.diverged)}")
    return "\n".join(lines) + "\n"


def _fit_csv(report) -> str:
    ivs = report["intervals"]
    header = ["total_estimate"] + [f"{p}_{lv}" for lv in sorted(ivs) for p in ("lower", "upper")]
    row = [report["total_estimate"]] + [ivs[lv][p] for lv in sorted(ivs) for p in ("lower", "upper")]
    return _csv_text(header, [row])


def cmd_fit(cfg: RunConfig, args) -> str:
    system = load_system(cfg)
    table = zero_fill(system)
    spec = _spec_from_args(system, args)
    fit = fit_mle(build_design(table, spec), n_for_bic=args.n_bic)
    cis = _intervals(table, spec, fit, args.levels)
    report = _fit_report(system, spec, fit, cis)
    if cfg.fmt == "json":
        return _json_text(_clean(report))
    if cfg.fmt == "csv":
        return _fit_csv(report)
    return _fit_table_text(cfg.dataset, system, spec, fit, cis)


def cmd_stepwise(cfg: RunConfig, args) -> str:
    system = load_system(cfg)
    table = zero_fill(system)
    res = stepwise_aic(table, p_threshold=args.p, test=args.test)
    cis = _intervals(table, res.spec, res.fit, args.levels)
    report = _fit_report(system, res.spec, res.fit, cis)
    report["p_threshold"] = args.p
    report["test"] = args.test
    report["trace"] = [vars(s) for s in res.trace]
    if cfg.fmt == "json":
        return _json_text(_clean(report))
    if cfg.fmt == "csv":
        return _fit_csv(report)
    text = _fit_table_text(cfg.dataset, system, res.spec, res.fit, cis)
    steps = [f"  {'+' if s.accepted else 'x'} {s.pair}  p={s.pvalue:.3g}  AIC={s.aic:.2f}  total={_k(s.total_estimate)}"
             for s in res.trace]
    return text + ("trace:\n" + "\n".join(steps) + "\n" if steps else "")


def cmd_search(cfg: RunConfig, args) -> str:
    system = load_system(cfg)
    table = zero_fill(system)
    res = exhaustive_search(table, k_limit=args.k_limit, n_for_bic=args.n_bic, threads=args.threads)
    rows = export_scatter(res, omit_outliers=args.omit_outliers, fence_multiplier=args.fence)
    if args.plot_data:
        text = scatter_csv(rows) if args.plot_data.endswith(".csv") else _json_text(_clean(rows))
        _write_file(args.plot_data, text)
    if args.svg:
        _write_file(args.svg, scatter_svg(rows, title=f"{cfg.dataset}: total against -BIC"))
    top_bic = res.top(args.top, "bic")
    top_aic = res.top(args.top, "aic")
    fenced = res.best_bic_within_fence(args.fence)
    if cfg.fmt == "json":
        return _json_text(_clean({
            "lists": list(system.list_names),
            "n_models": len(res),
            "best_bic": top_bic[0].to_dict() if top_bic else None,
            "best_aic": top_aic[0].to_dict() if top_aic else None,
            "best_bic_within_fence": fenced.to_dict(),
            "fence": res.outlier_fence(args.fence),
            "top_bic": [e.to_dict() for e in top_bic],
            "top_aic": [e.to_dict() for e in top_aic],
        }))
    if cfg.fmt == "csv":
        return scatter_csv(rows)
    lines = [f"data: {cfg.dataset}, {len(res)} models"]
    for title, top in (("BIC", top_bic), ("AIC", top_aic)):
        lines.append(f"top {len(top)} by {title}:")
        for e in top:
            lines.append(f"  {getattr(e, title.lower()):10.2f}  {_k(e.total_estimate):>8}  {e.spec_id}")
    lines.append(f"best BIC among totals below the {args.fence:g}xIQR fence: "
                 f"{_k(fenced.total_estimate)} ({fenced.total_estimate:.0f})  {fenced.spec_id}")
    return "\n".join(lines) + "\n"


def _prior_from_args(args) -> PriorConfig:
    if args.uniform:
        return PriorConfig.uniform()
    if args.lam is not None:
        return PriorConfig(args.lam)
    return PriorConfig.from_variance(args.variance)


def cmd_bayes(cfg: RunConfig, args) -> str:
    system = load_system(cfg)
    prior = _prior_from_args(args)
    settings = McmcSettings(
        burn_in=args.burn_in, kept_samples=args.samples, thinning=args.thin,
        chains=args.chains, seed=cfg.seed, threads=args.threads,
    )
    if args.main_effects:
        summary = main_effects_posterior(system, prior, settings)
    else:
        summary = threshold_refit(system, prior, args.tau, settings)
    if args.chains_csv:
        _write_file(args.chains_csv, summary.chains.to_csv())
    if args.hist or args.hist_svg:
        bins = total_histogram(summary, bins=args.bins)
        if args.hist:
            text = _csv_text(["lower", "upper", "count"], [[b["lower"], b["upper"], b["count"]] for b in bins]) \
                if args.hist.endswith(".csv") else _json_text(bins)
            _write_file(args.hist, text)
        if args.hist_svg:
            _write_file(args.hist_svg, histogram_svg(bins, title=f"{cfg.dataset}: posterior of the total"))
    if cfg.fmt == "json":
        d = summary.to_dict()
        d["lists"] = list(system.list_names)
        d["seed"] = cfg.seed
        return _json_text(_clean(d))
    q = summary.quantile_row()
    if cfg.fmt == "csv":
        return _csv_text(["prior", "tau", "q2.5", "q10", "q50", "q90", "q97.5"],
                         [[summary.prior, "" if summary.tau is None else summary.tau, *q]])
    tau = "main effects" if summary.tau is None else f"{summary.tau:g}"
    lines = [
        f"data: {cfg.dataset}; prior: {summary.prior}; threshold: {tau}",
        "quantiles of the total (K):  2.5%   10%   50%   90%  97.5%",
        "                           " + " ".join(f"{v / 1000:5.1f}" for v in q),
        f"selected interactions: {', '.join(summary.selected_interactions) or 'none'}",
    ]
    if summary.neg_infinity_pairs:
        lines.append(f"interactions fixed at -inf: {', '.join(summary.neg_infinity_pairs)}")
    lines.append("acceptance: " + " ".join(f"{a:.2f}" for a in summary.acceptance)
                 + f"; R-hat(total) {summary.rhat['total']:.3f}; ESS(total) {summary.ess['total']:.0f}")
    return "\n".join(lines) + "\n"


def cmd_check(cfg: RunConfig, args) -> str:
    system = load_system(cfg)
    table = zero_fill(system)
    if args.all_models:
        rep = check_all_models(table)
        if rep.full_rank and rep.existence_ok:
            msg = "all models identifiable; extended MLE exists"
        elif not rep.full_rank:
            msg = "not all models identifiable: the all-pairs design is rank deficient"
        else:
            msg = f"not all models pass: {rep.status} for the all-pairs model"
    else:
        spec = _spec_from_args(system, args)
        rep = check_existence(table, spec)
        msg = rep.status
    if cfg.fmt == "json":
        d = rep.to_dict()
        d["message"] = msg
        return _json_text(d)
    if cfg.fmt == "csv":
        return _csv_text(["full_rank", "rank", "n_params", "existence_ok", "status"],
                         [[rep.full_rank, rep.rank, rep.n_params, rep.existence_ok, rep.status]])
    return msg + "\n"


def cmd_data(cfg: RunConfig, args) -> str:
    if args.list or cfg.dataset is None:
        if cfg.fmt == "json":
            return _json_text({n: DESCRIPTIONS[n] for n in NAMES})
        return "".join(f"{n:8s} {DESCRIPTIONS[n]}\n" for n in NAMES)
    system = load_system(cfg)
    if cfg.fmt == "json":
        return json.dumps(system.to_dict(), sort_keys=True, indent=2) + "\n"
    if cfg.fmt == "csv":
        return dumps_csv(system)
    lines = [f"lists: {' '.join(system.list_names)}", f"observed: {system.total_observed()}"]
    for mask in sorted(system.counts):
        lines.append(f"  {' '.join(system.cell_names(mask)):30s} {system.counts[mask]}")
    return "\n".join(lines) + "\n"


COMMANDS = {
    "fit": cmd_fit,
    "stepwise": cmd_stepwise,
    "search": cmd_search,
    "bayes": cmd_bayes,
    "check": cmd_check,
    "data": cmd_data,
}


def _levels(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad level list {text!r}")
    if not all(0 < v < 1 for v in vals):
        raise argparse.ArgumentTypeError("levels must lie in (0, 1)")
    return vals


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("data and output")
    g.add_argument("--data", help=f"built-in data set ({', '.join(NAMES)}) or CSV path")
    g.add_argument("--aggregate", action="store_true", help="sum duplicate rows in a CSV file")
    g.add_argument("--consolidate", dest="transforms", action=_Transform, metavar="A+B=C",
                   help="merge lists A and B into C (repeatable, applied in order)")
    g.add_argument("--omit", dest="transforms", action=_Transform, metavar="X",
                   help="drop list X (repeatable, applied in order)")
    g.add_argument("--format", choices=("table", "json", "csv"), default="table")
    g.add_argument("--out", help="write the report here instead of standard output")
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--strict", action="store_true", help="exit with code 4 on convergence warnings")
    g.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="darkfigure", description="Multiple systems estimation of hidden populations.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("fit", parents=[common], help="maximum likelihood fit with profile intervals")
    f.add_argument("--interactions", help="comma-separated pairs such as LA:NG,PF:GP")
    f.add_argument("--levels", type=_levels, default=(0.8, 0.95))
    f.add_argument("--n-bic", type=float, default=None, help="sample size used in BIC (default: observed total)")

    s = sub.add_parser("stepwise", parents=[common], help="forward AIC selection of interactions")
    s.add_argument("--p", type=float, default=0.05, help="p-value threshold for adding an interaction")
    s.add_argument("--test", choices=("wald", "lrt"), default="wald")
    s.add_argument("--levels", type=_levels, default=(0.8, 0.95))

    e = sub.add_parser("search", parents=[common], help="fit every interaction subset")
    e.add_argument("--top", type=int, default=5)
    e.add_argument("--k-limit", type=int, default=5)
    e.add_argument("--n-bic", type=float, default=None)
    e.add_argument("--threads", type=int, default=None)
    e.add_argument("--plot-data", metavar="PATH", help="scatter data (.csv or .json)")
    e.add_argument("--svg", metavar="PATH", help="scatter plot as SVG")
    e.add_argument("--omit-outliers", action="store_true", help="drop totals above the IQR fence from plot data")
    e.add_argument("--fence", type=float, default=OUTLIER_FENCE, help="IQR multiplier of the outlier fence")

    b = sub.add_parser("bayes", parents=[common], help="Bayesian fit with interaction thresholding")
    pr = b.add_mutually_exclusive_group()
    pr.add_argument("--variance", type=float, default=1.0, help="prior variance of interactions")
    pr.add_argument("--lambda", dest="lam", type=float, default=None, help="prior precision (0 = uniform)")
    pr.add_argument("--uniform", action="store_true", help="improper uniform prior")
    b.add_argument("--tau", type=float, default=2.0, help="threshold on |mean/sd| (0 keeps all)")
    b.add_argument("--main-effects", action="store_true", help="main-effects posterior only")
    b.add_argument("--burn-in", type=int, default=McmcSettings.burn_in)
    b.add_argument("--samples", type=int, default=McmcSettings.kept_samples)
    b.add_argument("--thin", type=int, default=McmcSettings.thinning)
    b.add_argument("--chains", type=int, default=McmcSettings.chains)
    b.add_argument("--threads", type=int, default=None)
    b.add_argument("--chains-csv", metavar="PATH", help="export raw draws of the final stage")
    b.add_argument("--hist", metavar="PATH", help="histogram data of the total (.csv or .json)")
    b.add_argument("--hist-svg", metavar="PATH")
    b.add_argument("--bins", type=int, default=50)

    c = sub.add_parser("check", parents=[common], help="identifiability and existence checks")
    c.add_argument("--interactions")
    c.add_argument("--all-models", action="store_true", help="check every interaction subset at once")

    d = sub.add_parser("data", parents=[common], help="list, show or export data sets")
    d.add_argument("--list", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    if args.command != "data" and not args.data:
        parser.error(f"{args.command} requires --data")
    cfg = RunConfig(args.data, list(args.transforms or []), args.format, args.out, args.seed, args.aggregate)
    convergence = False
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            text = COMMANDS[args.command](cfg, args)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
            if issubclass(w.category, ConvergenceWarning):
                convergence = True
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FitError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if cfg.out:
        _write_file(cfg.out, text)
    else:
        sys.stdout.write(text)
    if convergence and args.strict:
        return EXIT_CONVERGENCE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
