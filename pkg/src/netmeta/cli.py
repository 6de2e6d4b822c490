"""Command-line interface.

Exit codes: 0 success, 2 invalid input or arguments, 3 model not identifiable,
4 file I/O failure. Errors are also written to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import DatasetError, NetworkDataset, comparison_counts, describe, load_dataset
from .estimator import IdentifiabilityError, estimate_covariances
from .inference import check_identifiability, fit_gls, functional_inference, parse_contrast
from .report import build_report, to_csv, to_json, to_text
from .structure import SingularCovarianceError, build_structure

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IDENTIFIABILITY = 3
EXIT_IO = 4


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str, **extra):
        self.code = code
        self.payload = {"error": kind, "message": message, **extra}
        super().__init__(message)


def _load(source: str) -> NetworkDataset:
    if source.startswith("fixture:"):
        from .fixtures import load_fixture

        try:
            return load_fixture(source.split(":", 1)[1])
        except KeyError as exc:
            raise CliError(EXIT_VALIDATION, "validation", str(exc)) from None
    try:
        return load_dataset(source)
    except OSError as exc:
        raise CliError(EXIT_IO, "io", f"cannot read {source}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_VALIDATION, "validation", f"{source} is not valid JSON: {exc}") from None


def _write(text: str, output: str | None) -> None:
    if output is None:
        sys.stdout.write(text)
        return
    try:
        Path(output).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise CliError(EXIT_IO, "io", f"cannot write {output}: {exc.strerror or exc}") from None


def dump_matrices(ds: NetworkDataset, outdir: str | Path) -> list[Path]:
    """Write M1, M2, Z, X, W and R as CSV files into ``outdir``."""
    sm = build_structure(ds)
    out = Path(outdir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for name in ("M1", "M2", "Z", "X", "W", "R"):
            path = out / f"{name}.csv"
            np.savetxt(path, getattr(sm, name), delimiter=",", fmt="%.17g")
            written.append(path)
    except OSError as exc:
        raise CliError(EXIT_IO, "io", f"cannot write matrices to {outdir}: {exc.strerror or exc}") from None
    return written


def _validate_variant_options(args) -> None:
    if args.model == "common" and args.sigma_beta is not None:
        raise CliError(EXIT_VALIDATION, "validation", "--sigma-beta does not apply to the common-effect model")
    if args.model == "full" and args.sigma_beta == "eq7":
        raise CliError(EXIT_VALIDATION, "validation",
                       "the full model estimates Sigma_beta from the design-level equation; use --sigma-beta eq8 or omit it")
    if args.model != "full" and args.subst != "truncated":
        raise CliError(EXIT_VALIDATION, "validation", "--subst only applies to the full model")
    if not 0.0 < args.ci < 1.0:
        raise CliError(EXIT_VALIDATION, "validation", "--ci must lie strictly between 0 and 1")


def cmd_fit(args) -> int:
    _validate_variant_options(args)
    ds = _load(args.input)
    try:
        contrasts = [parse_contrast(c, ds.treatments, ds.outcomes) for c in args.contrast]
    except (ValueError, KeyError, IndexError) as exc:
        raise CliError(EXIT_VALIDATION, "validation", str(exc)) from None
    ident = check_identifiability(ds)
    sm = build_structure(ds)
    if args.dump_dir:
        dump_matrices(ds, args.dump_dir)
    equation = args.sigma_beta
    if equation is None and args.model != "common":
        equation = "eq8" if args.model == "full" else "eq7"
    cov = estimate_covariances(sm, args.model, equation, args.subst)
    fr = fit_gls(sm, cov, args.ci)
    report = build_report(ds, fr, ident, functional_inference(fr, contrasts), equation)
    render = {"json": to_json, "csv": to_csv, "text": to_text}[args.format]
    _write(render(report), args.output)
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .simulation import load_scenario, run_simulation, summarize, summary_csv

    if args.scenario.startswith("fixture:"):
        from . import fixtures

        name = args.scenario.split(":", 1)[1]
        makers = {"rrms": fixtures.rrms_scenario, "law2016": fixtures.law2016_scenario}
        if name not in makers:
            raise CliError(EXIT_VALIDATION, "validation", f"no scenario for fixture {name!r}")
        sc = makers[name]()
    else:
        try:
            sc = load_scenario(args.scenario)
        except OSError as exc:
            raise CliError(EXIT_IO, "io", f"cannot read {args.scenario}: {exc.strerror or exc}") from None
        except json.JSONDecodeError as exc:
            raise CliError(EXIT_VALIDATION, "validation", f"{args.scenario} is not valid JSON: {exc}") from None
        except ValueError as exc:
            if isinstance(exc, DatasetError):
                raise
            raise CliError(EXIT_VALIDATION, "validation", str(exc)) from None
    if args.seed is not None:
        from dataclasses import replace

        sc = replace(sc, seed=args.seed)
    _validate_variant_options(args)
    reps = args.reps if args.reps is not None else sc.reps
    if reps < 1:
        raise CliError(EXIT_VALIDATION, "validation", "--reps must be positive")
    results = run_simulation(
        sc, reps, workers=args.workers, model=args.model, sigma_beta=args.sigma_beta,
        substitution=args.subst, ci_level=args.ci,
    )
    failed = sum(not r.ok for r in results)
    if failed:
        print(f"warning: {failed} of {reps} replications could not be fitted", file=sys.stderr)
    _write(summary_csv(summarize(sc, results)), args.output)
    return EXIT_OK


def cmd_inspect(args) -> int:
    ds = _load(args.input)
    lines = [describe(ds), "", "direct comparisons (all outcomes):"]
    counts = comparison_counts(ds)
    lines += [f"  {k}: {v}" for k, v in counts.items()]
    lines.append(f"  total: {sum(counts.values())}")
    for o in ds.outcomes:
        oc = comparison_counts(ds, o)
        if oc != counts:
            missing = [k for k in counts if k not in oc]
            lines.append(f"outcome {o}: {sum(oc.values())} comparisons" + (f", no direct {', '.join(missing)}" if missing else ""))
    if args.dump_dir:
        written = dump_matrices(ds, args.dump_dir)
        lines.append("")
        lines.append("wrote " + ", ".join(str(p) for p in written))
    _write("\n".join(lines) + "\n", None)
    return EXIT_OK


def _add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", choices=["full", "consistent", "common"], default="full")
    p.add_argument("--sigma-beta", choices=["eq7", "eq8"], default=None,
                   help="estimating equation for Sigma_beta: eq7 (global, consistent model only) "
                        "or eq8 (design-level); default eq7 for consistent, eq8 for full")
    p.add_argument("--subst", choices=["truncated", "raw"], default="truncated",
                   help="Sigma_beta estimate substituted when solving for Sigma_omega (full model)")
    p.add_argument("--ci", type=float, default=0.95, help="confidence level (default 0.95)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="netmeta",
        description="Multivariate network meta-analysis with random inconsistency effects (method of moments).",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a model to a dataset")
    fit.add_argument("--input", required=True, help="dataset JSON file, or fixture:rrms / fixture:law2016")
    _add_model_args(fit)
    fit.add_argument("--contrast", action="append", default=[],
                     help="functional parameter such as 'C-E@2' (E vs C, outcome 2); repeatable")
    fit.add_argument("--format", choices=["json", "csv", "text"], default="json")
    fit.add_argument("--output", help="write the report here instead of stdout")
    fit.add_argument("--dump-dir", help="also write the structural matrices as CSV into this directory")
    fit.set_defaults(func=cmd_fit)

    sim = sub.add_parser("simulate", help="Monte Carlo study of the estimator")
    sim.add_argument("--scenario", required=True, help="scenario JSON file, or fixture:rrms / fixture:law2016")
    sim.add_argument("--reps", type=int, default=None)
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--workers", type=int, default=1)
    sim.add_argument("--output", help="summary CSV path (default stdout)")
    _add_model_args(sim)
    sim.set_defaults(func=cmd_simulate)

    ins = sub.add_parser("inspect", help="summarise a network and dump its structural matrices")
    ins.add_argument("--input", required=True)
    ins.add_argument("--dump-dir", help="directory for M1, M2, Z, X, W, R CSV files")
    ins.set_defaults(func=cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        err = exc
    except DatasetError as exc:
        err = CliError(EXIT_VALIDATION, "validation", "dataset failed validation", errors=exc.errors)
    except SingularCovarianceError as exc:
        err = CliError(EXIT_VALIDATION, "validation", str(exc))
    except IdentifiabilityError as exc:
        err = CliError(EXIT_IDENTIFIABILITY, "identifiability", str(exc), target=exc.target, hint=exc.hint)
    except OSError as exc:
        err = CliError(EXIT_IO, "io", str(exc))
    print(json.dumps(err.payload), file=sys.stderr)
    return err.code


if __name__ == "__main__":
    sys.exit(main())
