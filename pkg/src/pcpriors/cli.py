"""Command-line front end.

Every command writes ``#`` provenance lines, one header row and CSV rows
with 17 significant digits. Exit codes: 0 success, 2 usage or domain error,
3 infeasible tail statement, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from typing import Optional, Sequence

import numpy as np

from . import analysis, bym, core, multivariate, univariate
from .errors import (
    DegenerateComponentError,
    DomainError,
    FeasibilityError,
    NumericalError,
    PCPriorError,
    UnsupportedError,
)

KINDS = ("precision", "student_t", "ar1_base0", "ar1_base1", "exch_corr", "corr_matrix",
         "toeplitz", "bym", "weights", "simplex", "sphere")
SCALAR_KINDS = ("precision", "student_t", "ar1_base0", "ar1_base1", "exch_corr", "bym")
H_MAPS = {"sqrt2a": multivariate.SQRT_2A, "sqrta": multivariate.SQRT_A, "identity": multivariate.IDENTITY}

EXIT_OK, EXIT_USAGE, EXIT_FEASIBILITY, EXIT_NUMERICAL = 0, 2, 3, 4


class UsageError(Exception):
    pass


def fmt(v) -> str:
    return format(float(v), ".17g")


def _emit_row(out, values):
    out.write(",".join(v if isinstance(v, str) else fmt(v) for v in values) + "\n")


def parse_grid(text: str) -> np.ndarray:
    """``a:b:n`` to ``n`` equally spaced points from ``a`` to ``b``."""
    try:
        a, b, n = text.split(":")
        a, b, n = float(a), float(b), int(n)
    except ValueError as exc:
        raise UsageError(f"grid must look like a:b:n, got {text!r}") from exc
    if n < 1:
        raise UsageError("grid needs at least one point")
    return np.linspace(a, b, n)


def parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from exc


# ---------------------------------------------------------------------------
# prior construction
# ---------------------------------------------------------------------------


def _tail(args):
    has_lam = args.lam is not None
    has_tail = args.U is not None or args.alpha is not None
    if has_lam == has_tail:
        raise UsageError("give exactly one of --lambda or the pair --U/--alpha")
    if has_tail and (args.U is None or args.alpha is None):
        raise UsageError("--U and --alpha must be given together")
    return has_lam


def _need(args, name):
    val = getattr(args, name)
    if val is None:
        raise UsageError(f"--{name} is required for kind {args.kind}")
    return val


def _structure(args) -> bym.StructureModel:
    if args.structure and args.adjacency:
        raise UsageError("give only one of --structure and --adjacency")
    if args.structure:
        R = bym.read_structure_triplets(args.structure)
    elif args.adjacency:
        R = bym.read_adjacency(args.adjacency)
    else:
        raise UsageError("kind bym needs --structure or --adjacency")
    return bym.scale_structure(R)


def calibrate(args) -> tuple[float, dict]:
    """Rate for the requested kind and diagnostics about the tail statement."""
    kind = args.kind
    if _tail(args):
        return args.lam, {}
    U, alpha = args.U, args.alpha
    info = {"U": U, "alpha": alpha}
    if kind == "precision":
        info["event"] = "Prob(1/sqrt(tau) > U) = alpha"
        return univariate.PrecisionPrior.from_tail(U, alpha).rate, info
    if kind == "student_t":
        info["event"] = "Prob(nu < U) = alpha"
        return univariate.StudentTPrior.from_tail(U, alpha).rate, info
    if kind == "ar1_base0":
        info["event"] = "Prob(|rho| > U) = alpha"
        return univariate.ar1_calibrate("rho_zero", U, alpha), info
    if kind == "ar1_base1":
        info["event"] = "Prob(rho > U) = alpha"
        info["lower_bound_alpha"] = math.sqrt((1.0 - U) / 2.0) if U < 1 else math.nan
        return univariate.ar1_calibrate("rho_one", U, alpha), info
    if kind == "exch_corr":
        info["event"] = "Prob(|rho| > U) = alpha"
        dist = univariate.exchangeable_distance(_need(args, "m"))
        return core.calibrate_rate(dist, core.TailCondition(U, alpha, "upper", abs)), info
    if kind == "bym":
        model = _structure(args)
        dist = bym.bym_distance_function(model)
        info["event"] = "Prob(phi < U) = alpha"
        d1 = dist.d_max
        info["lower_bound_alpha"] = float(dist.evaluate(U)) / d1 if math.isfinite(d1) else 0.0
        return bym.bym_calibrate(model, U, alpha), info
    raise UsageError(f"kind {kind} takes --lambda only")


def scalar_density(args, lam):
    kind = args.kind
    if kind == "precision":
        return lambda x: univariate.precision_density(lam, x)
    if kind == "student_t":
        return lambda x: univariate.student_t_pc_density(lam, x)
    if kind == "ar1_base0":
        return univariate.AR1Prior(lam, "rho_zero").density
    if kind == "ar1_base1":
        return univariate.AR1Prior(lam, "rho_one").density
    if kind == "exch_corr":
        return univariate.ExchangeableCorrPrior(lam, _need(args, "m")).density
    if kind == "bym":
        prior = bym.MixingPrior(lam, bym.bym_distance_function(_structure(args)))
        return prior.density
    raise UsageError(f"kind {kind} is not scalar")


def scalar_distance(args):
    kind = args.kind
    if kind == "precision":
        return univariate.precision_distance()
    if kind == "student_t":
        return univariate.student_t_distance_function()
    if kind == "ar1_base0":
        return univariate.ar1_distance("rho_zero")
    if kind == "ar1_base1":
        return univariate.ar1_distance("rho_one")
    if kind == "exch_corr":
        return univariate.exchangeable_distance(_need(args, "m"))
    if kind == "bym":
        return bym.bym_distance_function(_structure(args))
    raise UsageError(f"kind {kind} is not scalar")


def foliated_prior(args, lam) -> multivariate.FoliatedPCPrior:
    kind = args.kind
    if kind == "weights":
        if not args.components:
            raise UsageError("kind weights needs --components file1,file2,...")
        covs = [bym.read_structure_triplets(p) for p in args.components.split(",")]
        return bym.weights_pc_prior(covs, lam)
    n = _need(args, "n_dim")
    h = H_MAPS[args.h]
    if kind == "simplex":
        b = parse_vector(args.b) if args.b else None
        return multivariate.FoliatedPCPrior(lam, n, "linear", h, b=b)
    H = bym.read_structure_triplets(args.H) if args.H else None
    return multivariate.FoliatedPCPrior(lam, n, "quadratic", h, H=H)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _provenance(out, args, lam=None, seed=None):
    parts = [f"kind={args.kind}"]
    if lam is not None:
        parts.append(f"lambda={fmt(lam)}")
    if seed is not None:
        parts.append(f"seed={seed}")
    out.write("# " + " ".join(parts) + "\n")


def cmd_density(args, out):
    lam, _ = calibrate(args)
    _provenance(out, args, lam)
    if args.kind in SCALAR_KINDS:
        if not args.grid:
            raise UsageError("density of a scalar kind needs --grid a:b:n")
        f = scalar_density(args, lam)
        _emit_row(out, ["x", "density"])
        for x in parse_grid(args.grid):
            _emit_row(out, [x, float(f(x))])
        return
    if not args.point:
        raise UsageError(f"density of kind {args.kind} needs one or more --point x1,x2,...")
    points = [parse_vector(p) for p in args.point]
    if args.kind == "corr_matrix":
        f = lambda v: multivariate.correlation_pc_density(lam, v)
        names = [f"theta{i}{j}" for i, j in multivariate.angle_index(_need(args, "q"))]
    elif args.kind == "toeplitz":
        f = lambda v: multivariate.toeplitz_pc_density(lam, v)
        names = [f"phi{i + 1}" for i in range(len(points[0]))]
    else:
        prior = foliated_prior(args, lam)
        f = prior.density
        names = [f"x{i + 1}" for i in range(prior.n)]
    _emit_row(out, [*names, "density"])
    for v in points:
        if len(v) != len(names):
            raise UsageError(f"expected {len(names)} coordinates per point, got {len(v)}")
        _emit_row(out, [*v, float(f(v))])


def cmd_sample(args, out):
    lam, _ = calibrate(args)
    rng = np.random.default_rng(args.seed)
    n = args.n
    if n < 1:
        raise UsageError("--n must be positive")
    _provenance(out, args, lam, args.seed)
    kind = args.kind
    if kind == "corr_matrix":
        q = _need(args, "q")
        out.write(f"q={q}\n")
        _emit_row(out, [f"r{i}{j}" for i in range(q) for j in range(q)])
        for _ in range(n):
            R = multivariate.correlation_pc_sample(q, lam, rng, permute=args.permute).R
            _emit_row(out, R.ravel())
        return
    if kind == "toeplitz":
        p = _need(args, "p")
        draws = multivariate.toeplitz_pc_sample(p, lam, rng, n)
        names = [f"phi{i + 1}" for i in range(p)]
    elif kind in ("simplex", "sphere"):
        draws = foliated_prior(args, lam).sample(rng, n)
        names = [f"x{i + 1}" for i in range(draws.shape[1])]
    elif kind == "weights":
        draws = bym.sample_weights(foliated_prior(args, lam), rng, n)
        names = [f"w{i + 1}" for i in range(draws.shape[1])]
    elif kind == "precision":
        draws = univariate.precision_sample(lam, rng, n)[:, None]
        names = ["tau"]
    elif kind in ("ar1_base0", "ar1_base1"):
        base = "rho_zero" if kind == "ar1_base0" else "rho_one"
        draws = univariate.AR1Prior(lam, base).sample(rng, n)[:, None]
        names = ["rho"]
    else:
        draws = core.PCPrior1D(lam, scalar_distance(args)).sample(rng, n)[:, None]
        names = ["x"]
    _emit_row(out, names)
    for row in draws:
        _emit_row(out, row)


def cmd_calibrate(args, out):
    if args.lam is not None:
        raise UsageError("calibrate takes --U and --alpha, not --lambda")
    lam, info = calibrate(args)
    _provenance(out, args)
    for k, v in info.items():
        out.write(f"# {k}={v if isinstance(v, str) else fmt(v)}\n")
    _emit_row(out, ["lambda"])
    _emit_row(out, [lam])


def cmd_distance(args, out):
    if args.kind not in SCALAR_KINDS:
        raise UsageError(f"distance is available for {', '.join(SCALAR_KINDS)}")
    if not args.grid:
        raise UsageError("distance needs --grid a:b:n")
    dist = scalar_distance(args)
    exact = args.kind == "student_t" and args.exact
    _provenance(out, args)
    _emit_row(out, ["x", "distance"])
    for x in parse_grid(args.grid):
        d = univariate.student_t_distance(x) if exact else float(dist.evaluate(x))
        _emit_row(out, [x, d])


def cmd_kld(args, out):
    if args.kind not in SCALAR_KINDS:
        raise UsageError(f"kld is available for {', '.join(SCALAR_KINDS)}")
    if not args.grid:
        raise UsageError("kld needs --grid a:b:n")
    dist = scalar_distance(args)
    _provenance(out, args)
    _emit_row(out, ["x", "kld"])
    for x in parse_grid(args.grid):
        k = univariate.student_t_kld(x) if args.kind == "student_t" else 0.5 * float(dist.evaluate(x)) ** 2
        _emit_row(out, [x, k])


def cmd_risk(args, out):
    norms = parse_grid(args.norms)
    curves = []
    for name in args.prior.split(","):
        if name == "identity":
            dens = None
        elif name == "pc":
            dens = analysis.exponential_sigma_density(-math.log(args.alpha) / args.U)
        elif name == "half_cauchy":
            dens = analysis.half_cauchy_sigma_density(args.scale)
        else:
            raise UsageError(f"unknown risk prior {name!r}")
        curves.append(analysis.risk_curve(dens, norms, args.p, args.replicates, args.seed, name))
    out.write(f"# risk p={args.p} replicates={args.replicates} seed={args.seed}\n")
    analysis.write_risk_csv(curves, out)


SIM_KEYS = {"n": int, "nu": float, "prior": str, "U": float, "alpha": float, "mean": float,
            "upper": float, "replicates": int, "seed": int, "grid_n": int, "full": int}
SIM_DEFAULTS = {"prior": "pc", "U": 10.0, "alpha": 0.5, "mean": 5.0, "upper": 100.0,
                "replicates": 100, "seed": 1, "grid_n": analysis.NU_GRID_N, "full": 0}


def read_config(path) -> dict:
    cfg = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in SIM_KEYS:
                raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                cfg[key] = SIM_KEYS[key](val)
            except ValueError as exc:
                raise UsageError(f"{path}:{lineno}: bad value for {key}") from exc
    return cfg


def _dof_prior(cfg):
    name = cfg["prior"]
    if name == "pc":
        return univariate.StudentTPrior.from_tail(cfg["U"], cfg["alpha"])
    if name == "exponential":
        return univariate.ExponentialDofPrior(cfg["mean"])
    if name == "uniform":
        return univariate.UniformDofPrior(cfg["upper"])
    raise UsageError(f"unknown prior {name!r}; use pc, exponential or uniform")


def cmd_simulate(args, out):
    cfg = dict(SIM_DEFAULTS)
    if args.config:
        cfg.update(read_config(args.config))
    for key in SIM_KEYS:
        val = getattr(args, f"sim_{key}", None)
        if val is not None:
            cfg[key] = val
    prior = _dof_prior(cfg)
    if "n" in cfg and "nu" in cfg:
        scenarios = [(cfg["n"], cfg["nu"])]
    elif cfg["full"]:
        scenarios = [(n, nu) for n in (100, 1000, 10000) for nu in (5, 10, 20, 100)]
    else:
        scenarios = [(n, nu) for n in (100, 1000, 10000) for nu in (5, 100)]
    grid = analysis.default_nu_grid(cfg["grid_n"])
    workers = int(os.environ.get("PCP_THREADS", os.cpu_count() or 1))
    results = []
    for k, (n, nu) in enumerate(scenarios):
        sc = analysis.SimulationScenario(n, nu, prior, cfg["replicates"], grid, cfg["prior"])
        # each scenario gets its own root seed so adding scenarios never shifts another's stream
        results.append(analysis.simulation_study(sc, [cfg["seed"], k], workers))
    out.write(f"# simulate prior={cfg['prior']} seed={cfg['seed']} replicates={cfg['replicates']}\n")
    analysis.write_simulation_csv(results, out)


def cmd_selftest(args, out):
    from .selftest import run_selftest

    results = run_selftest()
    _emit_row(out, ["check", "status", "detail"])
    for name, ok, detail in results:
        _emit_row(out, [name, "PASS" if ok else "FAIL", detail.replace(",", ";")])
    if not all(ok for _, ok, _ in results):
        raise NumericalError("self-test failures")


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _prior_args(p: argparse.ArgumentParser):
    p.add_argument("--kind", required=True, choices=KINDS)
    p.add_argument("--lambda", dest="lam", type=float, help="rate of the exponential on the distance")
    p.add_argument("--U", type=float, help="tail bound of the calibration statement")
    p.add_argument("--alpha", type=float, help="tail probability of the calibration statement")
    p.add_argument("--m", type=int, help="block size (exch_corr)")
    p.add_argument("--q", type=int, help="matrix dimension (corr_matrix)")
    p.add_argument("--p", type=int, help="number of partial correlations (toeplitz)")
    p.add_argument("--n-dim", dest="n_dim", type=int, help="dimension (simplex, sphere)")
    p.add_argument("--h", default="sqrt2a", choices=sorted(H_MAPS), help="map from level to distance")
    p.add_argument("--b", help="comma-separated simplex weights")
    p.add_argument("--H", help="triplet file with the sphere matrix")
    p.add_argument("--structure", help="triplet file with a structure matrix (bym)")
    p.add_argument("--adjacency", help="edge-list file for a CAR structure (bym)")
    p.add_argument("--components", help="comma-separated triplet files of component covariances (weights)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pcpriors", description="Penalised complexity priors")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("density", help="tabulate a prior density")
    _prior_args(p)
    p.add_argument("--grid", help="a:b:n grid for scalar kinds")
    p.add_argument("--point", action="append", help="x1,x2,... (repeatable) for vector kinds")
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("sample", help="draw from a prior")
    _prior_args(p)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--permute", action="store_true", help="random index order (corr_matrix)")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("calibrate", help="rate from a tail statement")
    _prior_args(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("distance", help="tabulate the distance to the base model")
    _prior_args(p)
    p.add_argument("--grid", required=False)
    p.add_argument("--exact", action="store_true", help="direct quadrature for student_t")
    p.set_defaults(func=cmd_distance)

    p = sub.add_parser("kld", help="tabulate the KLD to the base model")
    _prior_args(p)
    p.add_argument("--grid", required=False)
    p.set_defaults(func=cmd_kld)

    p = sub.add_parser("risk", help="normal-means risk curves")
    p.add_argument("--p", type=int, default=7)
    p.add_argument("--norms", default="0:8:9", help="a:b:n grid of |x0|")
    p.add_argument("--prior", default="identity,pc,half_cauchy")
    p.add_argument("--U", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--scale", type=float, default=1.0, help="half-Cauchy scale")
    p.add_argument("--replicates", type=int, default=2000)
    p.add_argument("--seed", type=int, default=1)
    p.set_defaults(func=cmd_risk)

    p = sub.add_parser("simulate", help="Student-t degrees-of-freedom simulation")
    p.add_argument("--config", help="key=value file; flags override its values")
    for key, typ in SIM_KEYS.items():
        p.add_argument(f"--{key.replace('_', '-')}", dest=f"sim_{key}", type=typ)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("selftest", help="run the invariant checks")
    p.set_defaults(func=cmd_selftest)
    return parser


VALUE_FLAGS = ("--grid", "--norms", "--point", "--b")


def _attach_values(argv):
    """Turn ``--grid -1:1:5`` into ``--grid=-1:1:5`` so values may start with a minus sign."""
    out = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok in VALUE_FLAGS and i + 1 < len(argv):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
        else:
            out.append(tok)
            i += 1
    return out


def run(argv: Optional[Sequence[str]] = None, out=None, err=None) -> int:
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    parser = build_parser()
    argv = _attach_values(list(sys.argv[1:] if argv is None else argv))
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        args.func(args, out)
    except UsageError as exc:
        err.write(f"usage error: {exc}\n")
        return EXIT_USAGE
    except (DomainError, UnsupportedError, DegenerateComponentError) as exc:
        err.write(f"error: {exc}\n")
        return EXIT_USAGE
    except FeasibilityError as exc:
        err.write(f"infeasible: {exc}\n")
        if exc.attainable is not None:
            err.write(f"attainable probabilities: ({fmt(exc.attainable[0])}, {fmt(exc.attainable[1])})\n")
        return EXIT_FEASIBILITY
    except (NumericalError, PCPriorError, ArithmeticError) as exc:
        err.write(f"numerical failure: {exc}\n")
        return EXIT_NUMERICAL
    except OSError as exc:
        err.write(f"error: {exc}\n")
        return EXIT_USAGE
    return EXIT_OK


def main() -> None:
    sys.exit(run())
