"""Command-line front end: every command writes plot-ready CSV or JSON.

Exit codes: 0 success, 1 validation failed, 2 usage or input error,
3 no bandwidth satisfies the selection rule.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .clustertree import build_tree, grid_tree
from .data import CSVParseError, GeneratorSpec, generate, read_csv, write_csv
from .instability import (
    InstabilityCurve,
    Measure,
    confidence_bands,
    gamma_curve,
    select_bandwidth,
    split_three,
    xi_alpha_heatmap,
    xi_curve,
)
from .kde import EmpiricalKDE, NumericalError, reference_bandwidth
from .kernels import FAMILIES, DimensionError, KernelSpec, ParameterError

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_NOT_FOUND = 0, 1, 2, 3

log = logging.getLogger("clusterstab")


class UsageError(Exception):
    pass


def parse_grid(text: str) -> np.ndarray:
    """``start:stop:count`` (inclusive ends, evenly spaced) or a single number."""
    parts = text.split(":")
    try:
        if len(parts) == 1:
            return np.array([float(parts[0])])
        if len(parts) != 3:
            raise ValueError
        start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise UsageError(f"bad grid {text!r}; expected start:stop:count") from None
    if count < 1:
        raise UsageError(f"grid {text!r} is empty")
    return np.linspace(start, stop, count)


def _load(path) -> np.ndarray:
    if not Path(path).is_file():
        raise UsageError(f"no such data file: {path}")
    return read_csv(path)


def _kernel(args, dim: int) -> KernelSpec:
    family = args.kernel
    if family == "epanechnikov" and dim > 1 and not args.kernel_explicit:
        family = "product-epanechnikov"
    return KernelSpec(family, dim)


def _write_json(obj, out) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _provenance(args, **extra) -> dict:
    meta = {"command": args.command, "data": str(getattr(args, "data", "")), "seed": getattr(args, "seed", None),
            "kernel": getattr(args, "kernel", None), "version": __version__}
    meta.update(extra)
    return meta


# --- commands ---------------------------------------------------------------

def cmd_gen(args) -> int:
    try:
        text = Path(args.spec).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read spec: {exc}") from exc
    spec = GeneratorSpec.from_json(text)
    write_csv(generate(spec), args.out)
    return EXIT_OK


def cmd_xi(args) -> int:
    if (args.lam is None) == (args.alpha is None):
        raise UsageError("give exactly one of --lambda and --alpha")
    pts = _load(args.data)
    kernel = _kernel(args, pts.shape[1])
    h_grid = parse_grid(args.h_grid)
    if args.splits < 1:
        raise UsageError("--splits must be at least 1")
    level = {"lam": args.lam} if args.lam is not None else {"alpha": args.alpha}
    if args.splits == 1:
        split = split_three(pts, args.seed)
        curve = xi_curve(pts, split, kernel, h_grid, n_bins=args.bins, threads=args.threads, **level)
    else:
        measure = Measure("xi_lambda", args.lam) if args.lam is not None else Measure("xi_alpha", args.alpha)
        curve = confidence_bands(pts, measure, kernel, h_grid, args.splits, args.level, args.seed,
                                 args.bins, args.threads)
    curve.meta.update(_provenance(args, h_grid=args.h_grid, bins=args.bins, splits=args.splits, **level))
    curve.to_csv(args.out)
    return EXIT_OK


def cmd_xi_heatmap(args) -> int:
    pts = _load(args.data)
    kernel = _kernel(args, pts.shape[1])
    h_grid, a_grid = parse_grid(args.h_grid), parse_grid(args.alpha_grid)
    split = split_three(pts, args.seed)
    heat = xi_alpha_heatmap(pts, split, kernel, h_grid, a_grid, n_bins=args.bins, threads=args.threads)
    heat.meta.update(_provenance(args, h_grid=args.h_grid, alpha_grid=args.alpha_grid, bins=args.bins))
    heat.to_csv(args.out)
    h, a, v = heat.argmax()
    log.info("maximum instability %.4f at h=%g, alpha=%g", v, h, a)
    return EXIT_OK


def cmd_gamma(args) -> int:
    pts = _load(args.data)
    kernel = _kernel(args, pts.shape[1])
    h_grid = parse_grid(args.h_grid)
    split = split_three(pts, args.seed)
    curve = gamma_curve(pts, split, kernel, h_grid, method=args.method, n_draws=args.N, seed=args.seed,
                        n_bins=args.bins, threads=args.threads)
    curve.meta.update(_provenance(args, h_grid=args.h_grid, method=args.method, N=args.N, bins=args.bins))
    curve.to_csv(args.out)
    return EXIT_OK


def cmd_tree(args) -> int:
    pts = _load(args.data)
    kernel = _kernel(args, pts.shape[1])
    h = args.h if args.h is not None else reference_bandwidth(pts, kernel)
    model = EmpiricalKDE(pts, kernel, h)
    grid = None if args.lambda_grid is None else parse_grid(args.lambda_grid)
    if args.on_data:
        if args.linking_radius is None:
            raise UsageError("--on-data needs --linking-radius")
        if grid is None:
            top = float(model.evaluate(pts).max())
            grid = np.linspace(0.0, top, args.levels + 2)[1:-1]
        tree = build_tree(model, pts, grid, args.linking_radius, min_content=args.min_content)
    else:
        tree = grid_tree(model, n_levels=args.levels, lambda_grid=grid, min_content=args.min_content)
    out = tree.to_dict()
    out["meta"] = _provenance(args, h=h, on_data=args.on_data, min_content=args.min_content)
    out["split_levels"] = tree.split_levels()
    out["split_contents"] = tree.split_contents()
    _write_json(out, args.out)
    return EXIT_OK


def cmd_select(args) -> int:
    if not Path(args.curve).is_file():
        raise UsageError(f"no such curve file: {args.curve}")
    curve = InstabilityCurve.from_csv(args.curve)
    rule = args.rule or ("gamma_rule" if curve.meta.get("measure") == "gamma" else "xi_rule")
    choice = select_bandwidth(curve, args.beta, rule)
    report = choice.to_dict()
    if args.json:
        _write_json(report, args.json)
    if not choice.found:
        sys.stderr.write(
            f"no bandwidth qualifies at beta={args.beta}; smallest value {choice.min_value:.6g} "
            f"at h={choice.argmin_h:.6g}\n")
        sys.stdout.write(json.dumps(report, sort_keys=True) + "\n")
        return EXIT_NOT_FOUND
    sys.stdout.write(f"{choice.h!r}\n")
    if not args.json:
        sys.stdout.write(json.dumps(report, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_validate(args) -> int:
    from .validation import SUITES, run_suites

    if args.suite != "all" and args.suite not in SUITES:
        raise UsageError(f"unknown suite {args.suite!r}; choose from {sorted(SUITES)} or 'all'")
    report = run_suites(args.suite, extended=args.extended)
    _write_json(report, args.out)
    return EXIT_OK if report["passed"] else EXIT_FAILED


# --- parser -----------------------------------------------------------------

class _KernelAction(argparse.Action):
    def __call__(self, parser, namespace, values, option_string=None):
        setattr(namespace, self.dest, values)
        namespace.kernel_explicit = True


def _common(p, seed=True, grid=True):
    p.add_argument("data", help="point CSV, one point per row")
    p.add_argument("--kernel", choices=FAMILIES, default="epanechnikov", action=_KernelAction,
                   help="smoothing kernel (default epanechnikov; product-epanechnikov in d>=2 unless given)")
    p.set_defaults(kernel_explicit=False)
    if seed:
        p.add_argument("--seed", type=int, default=0, help="seed for the random split (default 0)")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
    p.add_argument("--bins", type=int, default=None, help="use a binned KDE with this many bins per axis")
    if grid:
        p.add_argument("--h-grid", default="0.01:10:1000", help="bandwidths as start:stop:count")
    p.add_argument("-o", "--out", required=True, help="output path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clusterstab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic sample from a JSON spec")
    p.add_argument("spec", help="generator spec JSON")
    p.add_argument("-o", "--out", required=True, help="output point CSV")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("xi", help="level-set instability over bandwidths")
    _common(p)
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="fixed density level")
    p.add_argument("--alpha", type=float, default=None, help="fixed probability content")
    p.add_argument("--splits", type=int, default=1, help="random splits; 2 or more adds pointwise bands")
    p.add_argument("--level", type=float, default=0.95, help="band coverage (default 0.95)")
    p.set_defaults(func=cmd_xi)

    p = sub.add_parser("xi-heatmap", help="fixed-content instability over (h, alpha)")
    _common(p)
    p.add_argument("--alpha-grid", default="0.01:0.99:99", help="contents as start:stop:count")
    p.set_defaults(func=cmd_xi_heatmap)

    p = sub.add_parser("gamma", help="total variation instability over bandwidths")
    _common(p)
    p.add_argument("--method", choices=("numeric", "importance"), default="numeric")
    p.add_argument("--N", type=int, default=10_000, help="importance-sampling draws per bandwidth")
    p.set_defaults(func=cmd_gamma)

    p = sub.add_parser("tree", help="cluster tree of the kernel estimate as JSON")
    _common(p, seed=False, grid=False)
    p.add_argument("--h", type=float, default=None, help="bandwidth (default: normal reference rule)")
    p.add_argument("--lambda-grid", default=None, help="levels as start:stop:count")
    p.add_argument("--levels", type=int, default=1024, help="number of levels when no grid is given")
    p.add_argument("--on-data", action="store_true", help="link sample points instead of a dense grid")
    p.add_argument("--linking-radius", type=float, default=None, help="linking distance with --on-data")
    p.add_argument("--min-content", type=float, default=0.01,
                   help="ignore clusters holding less than this probability (default 0.01; 0 keeps all)")
    p.set_defaults(func=cmd_tree)

    p = sub.add_parser("select", help="choose the smallest stable bandwidth from a curve CSV")
    p.add_argument("curve", help="curve CSV written by 'xi' or 'gamma'")
    p.add_argument("--beta", type=float, required=True, help="instability tolerance in (0, 1)")
    p.add_argument("--rule", choices=("xi_rule", "gamma_rule"), default=None,
                   help="default: gamma_rule for gamma curves, xi_rule otherwise")
    p.add_argument("--json", default=None, help="also write the full report here")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("validate", help="Monte Carlo checks on a known mixture")
    p.add_argument("--suite", default="all", help="identity, variance, smallh, risk or all")
    p.add_argument("--extended", action="store_true", help="include the slow risk-scaling suite")
    p.add_argument("-o", "--out", default="-", help="report path (default stdout)")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore")
    try:
        return args.func(args)
    except (UsageError, ParameterError, DimensionError, CSVParseError) as exc:
        sys.stderr.write(f"clusterstab {args.command}: {exc}\n")
        return EXIT_USAGE
    except NumericalError as exc:
        sys.stderr.write(f"clusterstab {args.command}: numerical failure: {exc}\n")
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
