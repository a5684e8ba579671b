"""Command-line front end for rank-based confidence regions of kernel models.

Subcommands: ``simulate``, ``member``, ``band``, ``ellipsoid``, ``coverage``.
Every option may also come from ``--config FILE``: one ``key = value`` per
line (``#`` starts a comment), keys are long option names with ``-`` or
``_``, list values are whitespace separated and ``true``/``false`` toggle
switches. Flags given on the command line win over the file.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .coverage import EstimatorSpec, Scenario, assemble, coverage_experiment, point_estimate
from .data import NoiseSpec, generate_synthetic, load_csv, save_csv
from .errors import ConfigError, ConvergenceWarning, DataError, NumericalError
from .explorer import (
    BoxSampler,
    companion_krr,
    default_grid,
    explore_rays,
    levels_to_qs,
    mc_region,
    model_band,
)
from .kernels import KernelSpec, as_points, check_strict_pd, gram_matrix
from .perturbation import TransformGroup
from .ranking import ConfidenceRegion, RegionConfig
from .sps import outer_ellipsoids

SCHEMA_VERSION = 1
_COMMANDS = ("simulate", "member", "band", "ellipsoid", "coverage")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


class UsageError(Exception):
    pass


# --- config file ---------------------------------------------------------------------

def read_config(path) -> dict:
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read config file {path}: {exc.strerror}") from None
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{path}: line {lineno}: expected key = value")
        out[key.strip().replace("_", "-")] = value.strip()
    return out


def _config_tokens(parser: argparse.ArgumentParser, cfg: dict) -> list:
    actions = {opt: a for a in parser._actions for opt in a.option_strings}
    tokens = []
    for key, value in cfg.items():
        flag = "--" + key
        action = actions.get(flag)
        if action is None or key == "config":
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(action, argparse._StoreTrueAction):
            if value.lower() in ("1", "true", "yes", "on"):
                tokens.append(flag)
            elif value.lower() not in ("0", "false", "no", "off"):
                raise ConfigError(f"config key {key!r} expects true or false")
        else:
            tokens.append(flag)
            tokens.extend(value.split())
    return tokens


# --- shared parsing helpers -------------------------------------------------------------

def _kernel(text):
    return KernelSpec.parse(text) if text else None


def _region_config(args, q=None) -> RegionConfig:
    q = args.q if q is None else q
    if q is None:
        raise ConfigError("--q is required")
    if q >= args.m:
        raise ConfigError(f"need q < m, got q={q}, m={args.m}")
    return RegionConfig(args.m, q, args.seed)


def _load_alpha(spec: str) -> np.ndarray:
    path = Path(spec)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read coefficient file {spec}: {exc.strerror}") from None
    try:
        if text.lstrip().startswith(("[", "{")):
            obj = json.loads(text)
            values = obj["alpha"] if isinstance(obj, dict) else obj
        else:
            values = text.replace(",", " ").split()
        return np.array([float(v) for v in values])
    except (ValueError, KeyError, TypeError):
        raise DataError(f"{spec}: expected a list of numbers") from None


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, Fraction):
        return f"{obj.numerator}/{obj.denominator}"
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _parameters(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}


def _write_json(payload: dict, path) -> None:
    text = json.dumps(_jsonable(payload), indent=2, sort_keys=True, allow_nan=False) + "\n"
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _sidecar(out, command: str, args, extra: dict) -> None:
    payload = {"schema_version": SCHEMA_VERSION, "command": command,
               "parameters": _parameters(args)}
    payload.update(extra)
    _write_json(payload, str(out) + ".json")


def _assemble(args, sample):
    estimator = EstimatorSpec.parse(args.estimator)
    kernel = _kernel(getattr(args, "kernel", None))
    group = TransformGroup.parse(getattr(args, "group", "sign"))
    allow = getattr(args, "allow_singular_gram", False)
    gram = None
    notes = []
    if estimator.kind != "lssvc":
        if kernel is None:
            raise ConfigError(f"--kernel is required for {estimator.kind}")
        gram = gram_matrix(kernel, sample.inputs)
        diag = check_strict_pd(gram)
        if not diag.strictly_pd:
            msg = (f"Gram matrix is not strictly positive definite (min eigenvalue "
                   f"{diag.min_eigenvalue:.3e}, condition {diag.condition_estimate:.3e})")
            if not allow or estimator.quadratic:
                raise NumericalError(msg)
            notes.append(msg + "; continuing because --allow-singular-gram was given")
    built = assemble(estimator, sample, kernel, group, getattr(args, "weighting", "default"),
                     gram=gram, require_pd=False)
    return estimator, kernel, built, notes


# --- commands ----------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    lo, hi = args.range
    noise = NoiseSpec.parse(args.noise)
    sample = generate_synthetic(args.fn.replace("-", "_"), args.n, (lo, hi), noise, args.seed)
    save_csv(sample, args.out)
    _sidecar(args.out, "simulate", args, {
        "noise": {"family": noise.family, "params": list(noise.params), "variance": noise.variance},
        "rows": sample.n,
    })
    return EXIT_OK


def cmd_member(args) -> int:
    sample = load_csv(args.data)
    estimator, kernel, built, notes = _assemble(args, sample)
    problem = built.problem
    if args.alpha == "fit":
        alpha = point_estimate(estimator, sample, built)
    else:
        alpha = _load_alpha(args.alpha)
        if alpha.shape != (problem.dim,):
            raise DataError(f"coefficient vector has dimension {alpha.size}, "
                            f"the problem has dimension {problem.dim}")
    cfg = _region_config(args)
    result = ConfidenceRegion(problem, cfg).membership(alpha)
    _write_json({
        "schema_version": SCHEMA_VERSION, "command": "member", "parameters": _parameters(args),
        "member": result.member, "rank": result.rank, "rank_value": float(result.rank),
        "level": cfg.p, "z_values": result.z_values, "alpha": alpha, "notes": notes,
    }, args.out)
    return EXIT_OK


def _grid(args, sample):
    if args.grid == "inputs":
        return as_points(sample.inputs)
    try:
        points = int(args.grid)
    except ValueError:
        raise ConfigError("--grid takes a point count or 'inputs'") from None
    if points < 2:
        raise ConfigError("--grid needs at least 2 points")
    return default_grid(sample.inputs, points)


def cmd_band(args) -> int:
    if not args.levels:
        raise ConfigError("at least one level is required")
    sample = load_csv(args.data)
    estimator, kernel, built, notes = _assemble(args, sample)
    if estimator.kind == "lssvc":
        raise ConfigError("bands are defined for regression estimators")
    levels = [Fraction(v).limit_denominator(10 * args.m) for v in args.levels]
    qs = levels_to_qs(levels, args.m)
    cfg = RegionConfig(args.m, max(qs), args.seed)
    region = ConfidenceRegion(built.problem, cfg)
    center = point_estimate(estimator, sample, built)
    grid = _grid(args, sample)
    info = {}
    if args.sampler == "rays":
        lam = estimator["lambda"] if estimator.kind == "krr" else args.companion_lambda
        comp = companion_krr(built.gram, sample.outputs, lam)
        ex = explore_rays(region, center, comp, qs, n_rays=args.rays, scale=args.scale,
                          points_per_ray=args.points_per_ray, seed=args.seed)
        samples = ex.samples
        info = {"r_max": ex.r_max, "truncated_fraction": ex.truncated_fraction,
                "companion_dim": comp.basis.shape[1]}
        if ex.truncated_fraction > 0:
            notes.append(f"{ex.truncated_fraction:.1%} of (ray, level) pairs reached r_max; "
                         "the band is truncated there")
    else:
        if args.box_halfwidth is None or not args.box_halfwidth > 0:
            raise ConfigError("--box-halfwidth must be positive for the box sampler")
        box = BoxSampler(center - args.box_halfwidth, center + args.box_halfwidth)
        samples = mc_region(region, box, args.samples, seed=args.seed)
    band = model_band(samples, kernel, sample.inputs, grid, levels)
    notes.extend(band.notes)

    header = [f"grid_x{j + 1}" for j in range(grid.shape[1])] if grid.shape[1] > 1 else ["grid_x"]
    cols = [grid[:, j] for j in range(grid.shape[1])]
    for i, p in enumerate(band.levels):
        header += [f"lower_{float(p):g}", f"upper_{float(p):g}"]
        cols += [band.lower[i], band.upper[i]]
    with open(args.out, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*cols):
            fh.write(",".join("%.17g" % v for v in row) + "\n")
    _sidecar(args.out, "band", args, {
        "levels": band.levels, "counts": band.counts, "samples": len(samples),
        "center_rank": int(region.rank_index(center[None, :])[0]), "notes": notes, **info,
    })
    return EXIT_OK


def cmd_ellipsoid(args) -> int:
    sample = load_csv(args.data)
    estimator, _, built, notes = _assemble(args, sample)
    if built.canonical is None:
        raise ConfigError("outer ellipsoids are defined for krr and lssvc only")
    qs = sorted(set(args.q))
    for q in qs:
        _region_config(args, q)
    region = ConfidenceRegion(built.problem, RegionConfig(args.m, qs[0], args.seed))
    ells = outer_ellipsoids(built.canonical, region.pset, qs)
    if any(e.degenerate for e in ells):
        notes.append("at least one perturbed subproblem is unbounded; its radius is reported "
                     "as null (infinite)")
    _write_json({
        "schema_version": SCHEMA_VERSION, "command": "ellipsoid", "parameters": _parameters(args),
        "ellipsoids": [e.to_dict() for e in ells], "notes": notes,
    }, args.out)
    return EXIT_OK


def cmd_coverage(args) -> int:
    if args.trials < 1:
        raise ConfigError("--trials must be at least 1")
    lo, hi = args.range
    scenario = Scenario(KernelSpec.parse(args.kernel), EstimatorSpec.parse(args.estimator),
                        NoiseSpec.parse(args.noise), args.n, (lo, hi), args.fn.replace("-", "_"),
                        TransformGroup.parse(args.group), args.weighting)
    cfg = _region_config(args)
    res = coverage_experiment(scenario, args.trials, cfg, args.seed)
    lo_ci, hi_ci = res.confidence_interval(0.99)
    _write_json({
        "schema_version": SCHEMA_VERSION, "command": "coverage", "parameters": _parameters(args),
        "nominal": res.p_nominal, "empirical": res.empirical_coverage, "trials": res.trials,
        "ci": {"level": 0.99, "low": lo_ci, "high": hi_ci},
        "three_sigma": res.three_sigma,
        "rank_histogram": np.bincount(res.ranks, minlength=cfg.m + 1)[1:],
    }, args.out)
    return EXIT_OK


# --- parser ------------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_region(p, multi_q=False):
    p.add_argument("--m", type=int, default=100, help="number of Z values (default 100)")
    if multi_q:
        p.add_argument("--q", type=int, nargs="+", default=[90, 50, 10])
    else:
        p.add_argument("--q", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)


def _add_problem(p):
    p.add_argument("--data", required=True, help="CSV with x1..xd,y[,y_true]")
    p.add_argument("--estimator", required=True, help="e.g. krr:lambda=0.1, svr:c=250,eps=0.2")
    p.add_argument("--kernel", default=None, help="e.g. gaussian:sigma=0.5")
    p.add_argument("--group", default="sign", choices=["sign", "perm"])
    p.add_argument("--weighting", default="default", choices=["default", "identity", "hessian"])
    p.add_argument("--allow-singular-gram", action="store_true",
                   help="let non-quadratic estimators run on a numerically singular Gram matrix")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kernel-sps", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a synthetic data set")
    p.add_argument("--fn", default="x-sin-x")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--range", type=float, nargs=2, default=[0.0, 10.0], metavar=("LO", "HI"))
    p.add_argument("--noise", required=True, help="laplace:0:0.5, gaussian:1, uniform:1.7, binomial:20")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("member", help="rank and membership of one coefficient vector")
    _add_problem(p)
    p.add_argument("--alpha", required=True, help="coefficient file (numbers or JSON) or 'fit'")
    _add_region(p)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_member)

    p = sub.add_parser("band", help="model-space confidence bands as CSV")
    _add_problem(p)
    p.add_argument("--m", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--levels", type=float, nargs="*", default=[0.9])
    p.add_argument("--grid", default="201", help="point count over the input range, or 'inputs'")
    p.add_argument("--sampler", default="rays", choices=["rays", "box"])
    p.add_argument("--rays", type=int, default=200)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--points-per-ray", type=int, default=10)
    p.add_argument("--companion-lambda", type=float, default=0.1)
    p.add_argument("--box-halfwidth", type=float, default=None)
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_band)

    p = sub.add_parser("ellipsoid", help="outer ellipsoids for krr / lssvc regions")
    _add_problem(p)
    _add_region(p, multi_q=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_ellipsoid)

    p = sub.add_parser("coverage", help="Monte Carlo coverage of the ideal coefficients")
    p.add_argument("--estimator", required=True)
    p.add_argument("--kernel", required=True)
    p.add_argument("--noise", required=True)
    p.add_argument("--fn", default="x-sin-x")
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--range", type=float, nargs=2, default=[0.0, 10.0], metavar=("LO", "HI"))
    p.add_argument("--group", default="sign", choices=["sign", "perm"])
    p.add_argument("--weighting", default="default", choices=["default", "identity", "hessian"])
    p.add_argument("--trials", type=int, default=2000)
    _add_region(p)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_coverage)

    for sp in sub.choices.values():
        sp.add_argument("--config", default=None, help="key = value file; flags take precedence")
    return parser


def _config_path(argv) -> str | None:
    for i, tok in enumerate(argv):
        if tok == "--config":
            if i + 1 >= len(argv):
                raise UsageError("--config needs a file name")
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def parse_args(argv):
    parser = build_parser()
    path = _config_path(argv)
    if path is not None:
        cmd = next((t for t in argv if t in _COMMANDS), None)
        if cmd is None:
            raise UsageError("--config must follow a subcommand")
        sub = parser._subparsers._group_actions[0].choices[cmd]
        tokens = _config_tokens(sub, read_config(path))
        idx = argv.index(cmd)
        argv = list(argv[:idx + 1]) + tokens + list(argv[idx + 1:])
    return parser.parse_args(argv)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
        with warnings.catch_warnings():
            warnings.simplefilter("error", ConvergenceWarning)
            return args.func(args)
    except SystemExit as exc:          # --help / --version
        return int(exc.code or 0)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, ConvergenceWarning, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
