"""Command-line interface.

Subcommands: simulate, precompute, fit, eval, oracle-check, study, plotdata.
Every run is deterministic given its flags and seed.  Exit codes: 0 success,
2 usage/validation error, 3 resource limit, 4 numerical failure.  Failures
print a machine-readable JSON object on stderr:

    {"error": {"type": "<exception class>", "message": "...", "exit_code": N}}

A JSON config file (``--config``) may supply any flag as a default; explicit
flags win.  Cache files live in ``--cache-dir``, the ``CONJLOGIT_CACHE_DIR``
environment variable, or ``./caches``, in that order of precedence.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

from .data_model import (
    DataError,
    Dataset,
    IndependentGamma,
    SpecError,
    drop_degenerate,
    load_dataset,
    load_spec,
    recode_negative,
    rescale_covariates,
    save_dataset,
    save_spec,
    validate_dataset,
)
from .diophantine import (
    BudgetError,
    CACHE_FORMAT_VERSION,
    CacheFileError,
    build_cache,
    compositions_count,
    compositions_cum,
    fnv1a_x_vectors,
    load_cache,
    save_cache,
)
from .gamma_kernels import DomainError
from .optimizer import (
    FitError,
    GridAxis,
    GridSpec,
    grid_fit,
    newton_fit,
    params_to_spec,
)
from .oracle import QuadConfig, ToleranceNotMet, mc_h, quadrature_h
from .series import (
    HouseholdSums,
    SeriesConfig,
    TruncationFailure,
    h_grouped,
    log_marginal,
    log_marginal_prepared,
    prepare_dataset,
)
from .sim import SimDesign, run_study, simulate_dataset

from . import __version__

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RESOURCE = 3
EXIT_NUMERIC = 4


def _fail(exc: Exception, code: int) -> int:
    payload = {
        "error": {
            "type": type(exc).__name__,
            "message": str(exc),
            "exit_code": code,
        }
    }
    print(json.dumps(payload), file=sys.stderr)
    return code


def _cache_dir(args) -> str:
    return (
        getattr(args, "cache_dir", None)
        or os.environ.get("CONJLOGIT_CACHE_DIR")
        or "caches"
    )


def _cache_path(cache_dir: str, x_vectors, R: int) -> str:
    return os.path.join(cache_dir, f"dio_{fnv1a_x_vectors(x_vectors):016x}_R{R}.bin")


def _parse_floats(s: str) -> list[float]:
    return [float(v) for v in s.split(",") if v != ""]


def _parse_counts(s: str) -> list[int]:
    return [int(v) for v in s.lower().split("x") if v != ""]


def _grid_from_args(args, P: int) -> GridSpec:
    counts = _parse_counts(args.grid)
    if len(counts) == 1:
        counts = counts * (2 * P)
    if len(counts) == 2 and P > 1:
        counts = counts * P
    spacings = _parse_floats(args.spacing)
    if len(spacings) == 1:
        spacings = spacings * (2 * P)
    centers = _parse_floats(args.center)
    if len(centers) != 2 * P or len(counts) != 2 * P or len(spacings) != 2 * P:
        raise SpecError(
            f"grid needs {2*P} axes (b1,n1,...,b{P},n{P}); "
            f"got {len(counts)} counts, {len(spacings)} spacings, {len(centers)} centers"
        )
    return GridSpec(
        tuple(GridAxis(c, k, s) for c, k, s in zip(centers, counts, spacings))
    )


def _load_data(args) -> Dataset:
    d = load_dataset(args.data)
    if getattr(args, "rescale", None):
        d = rescale_covariates(d, args.rescale)
    if getattr(args, "drop_degenerate", False):
        d = drop_degenerate(d)
    if getattr(args, "recode_negative", False):
        d = recode_negative(d, flip=True)
    violations = validate_dataset(d)
    if violations:
        raise DataError(
            "dataset failed validation: "
            + "; ".join(str(v) for v in violations[:5])
            + (f" (+{len(violations)-5} more)" if len(violations) > 5 else "")
        )
    return d


def _signatures(d: Dataset):
    seen = {}
    for h in d.households:
        xv = h.x_vectors(d.P)
        seen.setdefault(xv, 0)
        seen[xv] += 1
    return seen


def _load_available_caches(d: Dataset, R: int, cache_dir: str) -> dict:
    caches = {}
    for xv in _signatures(d):
        path = _cache_path(cache_dir, xv, R)
        if os.path.exists(path):
            caches[xv] = load_cache(path, expect_x_vectors=xv)
    return caches


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    P = args.P
    b = _parse_floats(args.b)
    n = _parse_floats(args.n)
    if len(b) == 1:
        b = b * P
    if len(n) == 1:
        n = n * P
    spec = IndependentGamma(tuple(b), tuple(n), args.eps)
    design = SimDesign(
        I=args.I, J=args.J, N=args.N, P=P, true_spec=spec,
        grid=GridSpec((GridAxis(b[0], 1, 1.0),) * (2 * P)),  # unused by simulate
        R=1, c=args.scale, x_support=tuple(int(v) for v in args.x_support.split(",")),
        replicates=max(args.replicate + 1, 1), seed=args.seed,
    )
    d = simulate_dataset(design, args.replicate)
    save_dataset(d, args.output)
    if args.truth:
        save_spec(spec, args.truth)
    print(f"wrote {len(d.households)} households to {args.output}")
    return EXIT_OK


def cmd_precompute(args) -> int:
    d = _load_data(args)
    cache_dir = _cache_dir(args)
    sigs = _signatures(d)
    plans = []
    for xv, n_households in sigs.items():
        M = len(xv[0])
        admitted = compositions_cum(args.R, M)
        shell = compositions_count(args.R, M)
        plans.append((xv, n_households, M, admitted))
        print(
            f"signature {fnv1a_x_vectors(xv):016x}: {n_households} households, "
            f"M={M}, admitted k-tuples C({args.R + M},{M}) = {admitted}, "
            f"feasibility estimate C({args.R + M - 1},{M - 1}) ~ "
            f"10^{math.log10(shell):.1f}"
        )
    if args.dry_run:
        print("dry run: no caches built")
        return EXIT_OK
    over = [p for p in plans if p[3] > args.limit]
    if over:
        raise BudgetError(
            f"{len(over)} signature(s) exceed the admission limit {args.limit}; "
            f"largest C(R+M,M) = {max(p[3] for p in over)}"
        )
    os.makedirs(cache_dir, exist_ok=True)
    built = reused = 0
    for xv, _, _, _ in plans:
        path = _cache_path(cache_dir, xv, args.R)
        if os.path.exists(path):
            load_cache(path, expect_x_vectors=xv)  # hash check
            reused += 1
            continue
        save_cache(build_cache(xv, args.R, args.limit), path)
        built += 1
    print(f"built {built} cache(s), reused {reused}, dir {cache_dir}")
    return EXIT_OK


def cmd_fit(args) -> int:
    if args.family != "gamma":
        raise SpecError(f"fit supports --family gamma, got {args.family!r}")
    d = _load_data(args)
    grid = _grid_from_args(args, d.P)
    cfg = SeriesConfig(R=args.R, mode="grouped", parity_check=args.parity_check)
    caches = _load_available_caches(d, args.R, _cache_dir(args))
    prep = prepare_dataset(d, cfg, caches)
    res = grid_fit(d, grid, cfg, eps=args.eps, prep=prep)
    if args.newton:
        res = newton_fit(d, params_to_spec(res.omega_hat, d.P, args.eps), cfg, prep=prep)
    if args.output:
        with open(args.output, "w") as f:
            f.write(res.to_json())
    names = [f"{k}{p+1}" for p in range(d.P) for k in ("b", "n")]
    print("param  estimate")
    for name, v in zip(names, res.omega_hat):
        print(f"{name:>5}  {v:.6g}")
    print(f"loglik {res.loglik:.6f}  boundary={res.boundary_flag}")
    return EXIT_OK


def cmd_eval(args) -> int:
    d = _load_data(args)
    spec = load_spec(args.spec)
    cfg = SeriesConfig(R=args.R, mode=args.mode, parity_check=args.parity_check)
    caches = None
    if args.mode == "grouped" and not args.parity_check:
        caches = _load_available_caches(d, args.R, _cache_dir(args))
    ev = log_marginal(d, spec, cfg, caches)
    out = {
        "loglik": ev.value,
        "terms": ev.terms,
        "parity_spread": ev.parity_spread,
        "R": args.R,
        "mode": args.mode,
    }
    print(json.dumps(out, indent=2))
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    d = _load_data(args)
    spec = load_spec(args.spec)
    cfg = SeriesConfig(R=args.R, mode="grouped")
    prep = prepare_dataset(d, cfg)
    rows = []
    all_ok = True
    for sums, mult in prep.groups[: args.max_households]:
        cache = prep.caches[sums.x_vectors]
        series = h_grouped(sums, cache, spec, d.x_scale).value
        h = next(
            hh for hh in d.households
            if HouseholdSums.from_household(hh, d.P) == sums
        )
        try:
            quad = quadrature_h(h, spec, QuadConfig(rel_tol=1e-10), d.x_scale)
        except (SpecError, ToleranceNotMet):
            quad = None
        mc, se = mc_h(h, spec, args.mc_draws, args.seed, d.x_scale)
        rel_q = abs(series - quad) / abs(quad) if quad else None
        z_mc = abs(series - mc) / se if se > 0 else 0.0
        ok = (rel_q is None or rel_q < args.rel_tol) and z_mc < 5.0
        all_ok &= ok
        rows.append((h.id, series, quad, mc, rel_q, z_mc, ok))
    print(f"{'household':>10} {'series':>13} {'quadrature':>13} {'mc':>13} "
          f"{'rel(quad)':>10} {'z(mc)':>7} pass")
    for hid, s, q, m, rq, z, ok in rows:
        qs = f"{q:13.6e}" if q is not None else f"{'n/a':>13}"
        rqs = f"{rq:10.2e}" if rq is not None else f"{'n/a':>10}"
        print(f"{hid:>10} {s:13.6e} {qs} {m:13.6e} {rqs} {z:7.2f} "
              f"{'ok' if ok else 'FAIL'}")
    if not all_ok:
        raise FitError("oracle check failed for at least one household")
    return EXIT_OK


def cmd_study(args) -> int:
    P = args.P
    b = _parse_floats(args.b)
    n = _parse_floats(args.n)
    if len(b) == 1:
        b = b * P
    if len(n) == 1:
        n = n * P
    spec = IndependentGamma(tuple(b), tuple(n), args.eps)
    if args.center_at_truth:
        centers = [v for pair in zip(b, n) for v in pair]
        args.center = ",".join(str(v) for v in centers)
    grid = _grid_from_args(args, P)
    design = SimDesign(
        I=args.I, J=args.J, N=args.N, P=P, true_spec=spec, grid=grid,
        R=args.R, c=args.scale,
        x_support=tuple(int(v) for v in args.x_support.split(",")),
        replicates=args.replicates, seed=args.seed,
    )
    report = run_study(design, n_tests=args.n_tests)
    report.write_csv(args.output)
    print(f"{'param':>6} {'truth':>8} {'mean':>10} {'sd':>10} {'t':>8} "
          f"{'crit':>6} pass")
    for r in report.rows:
        print(f"{r.param:>6} {r.truth:8.3f} {r.mean:10.4f} {r.sd:10.4f} "
              f"{r.t:8.3f} {r.crit:6.3f} {'ok' if r.passed else 'FAIL'}")
    print(f"boundary hits: {report.boundary_hits}/{design.replicates}; "
          f"report written to {args.output}")
    return EXIT_OK if report.all_pass else EXIT_NUMERIC


def cmd_plotdata(args) -> int:
    d = _load_data(args)
    grid = _grid_from_args(args, d.P)
    cfg = SeriesConfig(R=args.R, mode="grouped")
    caches = _load_available_caches(d, args.R, _cache_dir(args))
    prep = prepare_dataset(d, cfg, caches)
    names = [f"{k}{p+1}" for p in range(d.P) for k in ("b", "n")]
    n_rows = 0
    with open(args.output, "w") as f:
        f.write(",".join(names) + ",loglik\n")
        for params in grid.points():
            try:
                ll = log_marginal_prepared(
                    prep, params_to_spec(params, d.P, args.eps)
                ).value
                cell = f"{ll:.10g}"
            except TruncationFailure:
                cell = "nan"
            f.write(",".join(f"{v:.10g}" for v in params) + f",{cell}\n")
            n_rows += 1
    print(f"wrote {n_rows} rows to {args.output}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_data_flags(p):
    p.add_argument("--data", required=True, help="panel CSV file")
    p.add_argument("--rescale", type=float, default=None,
                   help="multiply covariates by this factor and round to integers")
    p.add_argument("--drop-degenerate", action="store_true",
                   help="drop all-zero covariate rows instead of rejecting")
    p.add_argument("--recode-negative", action="store_true",
                   help="flip outcomes on rows with negative covariates")
    p.add_argument("--cache-dir", default=None)


def _add_grid_flags(p):
    p.add_argument("--grid", default="5x7",
                   help="axis point counts, e.g. 5x7 or 4x4x4x4")
    p.add_argument("--spacing", default="0.1", help="axis spacing(s), comma list")
    p.add_argument("--center", default=None, help="axis centers b1,n1,...")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="conjlogit",
        description="Closed-form marginal likelihood for heterogeneous binary logit panels",
    )
    ap.add_argument(
        "--version", action="version",
        version=f"conjlogit {__version__} (cache-format {CACHE_FORMAT_VERSION})",
    )
    ap.add_argument("--config", default=None,
                    help="JSON file of flag defaults (explicit flags win)")
    ap.add_argument("--threads", type=int, default=1,
                    help="worker cap (evaluation is currently sequential)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a synthetic panel dataset")
    p.add_argument("--I", type=int, required=True)
    p.add_argument("--J", type=int, default=1)
    p.add_argument("--N", type=int, default=1)
    p.add_argument("--P", type=int, default=1)
    p.add_argument("--b", required=True, help="true scale(s), comma list")
    p.add_argument("--n", required=True, help="true shape(s), comma list")
    p.add_argument("--eps", type=float, default=0.0)
    p.add_argument("--scale", type=float, default=0.01,
                   help="real covariate = scale * stored integer")
    p.add_argument("--x-support", default="1,2,3")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replicate", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--truth", default=None, help="write the true spec JSON here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("precompute", help="build per-signature count caches")
    _add_data_flags(p)
    p.add_argument("--R", type=int, required=True)
    p.add_argument("--dry-run", action="store_true")
    p.add_argument("--limit", type=int, default=10**9,
                   help="admission limit on C(R+M, M)")
    p.set_defaults(func=cmd_precompute)

    p = sub.add_parser("fit", help="grid (optionally Newton-refined) fit")
    _add_data_flags(p)
    _add_grid_flags(p)
    p.add_argument("--family", default="gamma")
    p.add_argument("--R", type=int, default=100)
    p.add_argument("--eps", type=float, default=0.0)
    p.add_argument("--parity-check", action="store_true")
    p.add_argument("--newton", action="store_true")
    p.add_argument("-o", "--output", default=None, help="FitResult JSON path")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="log marginal likelihood with diagnostics")
    _add_data_flags(p)
    p.add_argument("--spec", required=True, help="heterogeneity spec JSON")
    p.add_argument("--R", type=int, default=100)
    p.add_argument("--mode", choices=("grouped", "naive"), default="grouped")
    p.add_argument("--parity-check", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("oracle-check",
                       help="series vs quadrature vs Monte Carlo table")
    _add_data_flags(p)
    p.add_argument("--spec", required=True)
    p.add_argument("--R", type=int, default=200)
    p.add_argument("--rel-tol", type=float, default=5e-3)
    p.add_argument("--mc-draws", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-households", type=int, default=10)
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("study", help="parameter-recovery simulation study")
    p.add_argument("--I", type=int, default=1000)
    p.add_argument("--J", type=int, default=1)
    p.add_argument("--N", type=int, default=1)
    p.add_argument("--P", type=int, default=1)
    p.add_argument("--b", default="5")
    p.add_argument("--n", default="14")
    p.add_argument("--eps", type=float, default=0.0)
    p.add_argument("--scale", type=float, default=0.01)
    p.add_argument("--x-support", default="1,2,3")
    p.add_argument("--R", type=int, default=100)
    p.add_argument("--replicates", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-tests", type=int, default=None,
                   help="Bonferroni family size (default 2P)")
    _add_grid_flags(p)
    p.add_argument("--center-at-truth", action="store_true",
                   help="center the grid at the true parameters")
    p.add_argument("-o", "--output", default="study.csv")
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("plotdata", help="CSV of the log-likelihood grid surface")
    _add_data_flags(p)
    _add_grid_flags(p)
    p.add_argument("--R", type=int, default=100)
    p.add_argument("--eps", type=float, default=0.0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_plotdata)

    return ap


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    # config-file overlay: values become parser defaults, explicit flags win.
    # Subcommands parse into a fresh namespace, so the overlay must be applied
    # to each subparser as well as the root parser.
    if "--config" in argv:
        cfg_path = argv[argv.index("--config") + 1]
        with open(cfg_path) as f:
            overlay = json.load(f)
        defaults = {k.replace("-", "_"): v for k, v in overlay.items()}
        parser.set_defaults(**defaults)
        for action in parser._subparsers._group_actions:
            for sub in action.choices.values():
                sub.set_defaults(
                    **{k: v for k, v in defaults.items()
                       if any(k == a.dest for a in sub._actions)}
                )
    args = parser.parse_args(argv)
    if getattr(args, "center", None) is None and hasattr(args, "center"):
        if args.command in ("fit", "plotdata", "study") and not getattr(
            args, "center_at_truth", False
        ):
            return _fail(SpecError("--center is required (or --center-at-truth)"),
                         EXIT_USAGE)
    try:
        return args.func(args)
    except BudgetError as e:
        return _fail(e, EXIT_RESOURCE)
    except (TruncationFailure, FitError, DomainError, ToleranceNotMet,
            OverflowError, ZeroDivisionError) as e:
        return _fail(e, EXIT_NUMERIC)
    except (DataError, SpecError, ValueError, FileNotFoundError, CacheFileError) as e:
        return _fail(e, EXIT_USAGE)


if __name__ == "__main__":
    sys.exit(main())
