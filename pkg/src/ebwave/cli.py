"""Command-line interface.

Subcommands: tabulate-basis, estimate, simulate, lower-bound, verify.
Exit codes: 0 success, 2 verification failure, 3 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import __version__
from .basis import build_basis, index_set, load_basis, save_basis
from .bounds import rate_trace
from .errors import ConfigError, EbwaveError
from .estimator import build_system, evaluate_expansion
from .families import family_from_config
from .harness import load_config_file, run_experiment, write_csv
from .lepski import LAMBDA_CAL, practical_levels, select_resolution, stack_sup, theoretical_threshold
from .oracle import prior_from_config
from .verify import run_suites, SUITES


def _family_config_from_args(args) -> dict:
    cfg = {"family": args.family}
    for key in ("sigma", "b", "beta", "c1", "c2", "theta_lo", "theta_hi"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _prior_config_from_args(args) -> dict:
    cfg = {"prior": args.prior}
    for key in ("mu0", "sigma0", "a", "rate", "theta0", "lo", "hi"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _add_family_args(p):
    p.add_argument("--family", required=True,
                   choices=["normal", "double_exponential", "weibull", "gamma",
                            "uniform_scale"])
    p.add_argument("--sigma", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--c1", type=float)
    p.add_argument("--c2", type=float)
    p.add_argument("--theta-lo", dest="theta_lo", type=float)
    p.add_argument("--theta-hi", dest="theta_hi", type=float)


def _add_prior_args(p):
    p.add_argument("--prior", required=True,
                   choices=["normal", "gamma", "point", "uniform"])
    p.add_argument("--mu0", type=float)
    p.add_argument("--sigma0", type=float)
    p.add_argument("--a", type=float)
    p.add_argument("--rate", type=float)
    p.add_argument("--theta0", type=float)
    p.add_argument("--lo", type=float)
    p.add_argument("--hi", type=float)


def _add_basis_args(p):
    p.add_argument("--wavelet", default="db8")
    p.add_argument("--depth", type=int, default=12)
    p.add_argument("--basis-cache", default=None,
                   help="read the tabulation from a cache file instead of building it")


def _get_basis(args):
    if getattr(args, "basis_cache", None):
        return load_basis(args.basis_cache)
    return build_basis(args.wavelet, args.depth)


def cmd_tabulate_basis(args) -> int:
    basis = build_basis(args.wavelet, args.depth)
    save_basis(basis, args.out)
    print(json.dumps({
        "wavelet": basis.name,
        "support": [basis.support_lo, basis.support_hi],
        "vanishing_moments": basis.vanishing_moments,
        "depth": basis.tab_depth,
        "out": args.out,
    }))
    return 0


def _read_data(path) -> np.ndarray:
    vals = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                vals.append(float(line))
    return np.asarray(vals, dtype=float)


def cmd_estimate(args) -> int:
    family = family_from_config(_family_config_from_args(args))
    basis = _get_basis(args)
    data = _read_data(args.data)
    y = args.y
    out = {"y": y, "n": int(data.size)}
    if args.m == "auto":
        gammas = {
            m: family.norms(basis, m, y, skip_divergent=True).norm ** 2
            for m in range(0, max(1, min(12, int(np.log2(max(data.size, 4))) - 1)))
        }
        levels = practical_levels(gammas, data.size)
        if args.lambda_mode == "calibrated":
            lam = args.lambda_mult * LAMBDA_CAL
        else:
            m_top = max(levels)
            binw = 2.0 * 2.0**-m_top
            lo, hi = data.min(), data.max() + binw
            counts, _ = np.histogram(data, bins=max(8, int((hi - lo) / binw)),
                                     range=(lo, hi))
            p_sup = counts.max() / (data.size * binw)
            psi_sup = args.psi_sup
            if psi_sup is None:
                raise ConfigError("theory mode needs --psi-sup")
            lam = args.lambda_mult * theoretical_threshold(
                p_sup, psi_sup, float(np.abs(basis.tables[0]).max()),
                stack_sup(basis), index_set(basis, m_top, y).size,
            )
        trace = select_resolution(family, basis, data, y, levels, lam,
                                  gamma_sq_by_m=gammas)
        m = trace.m_hat
        out["m_auto"] = True
        out["lambda"] = lam
        out["flags"] = list(trace.flags)
        if args.trace:
            with open(args.trace, "w") as f:
                json.dump(trace.as_dict(), f, indent=2)
    else:
        m = int(args.m)
        out["m_auto"] = False
    sys_ = build_system(family, basis, data, y, m, delta_mult=args.delta_mult)
    expansion = evaluate_expansion(basis, m, sys_.K, sys_.a_hat, y)
    t_hat = y - expansion if family.location_form else expansion
    import scipy.linalg

    min_eig = float(scipy.linalg.eigvalsh(
        sys_.B_hat, subset_by_index=[0, 0], driver="evr")[0]) + sys_.delta
    out.update({
        "t_hat": t_hat,
        "m": m,
        "size": sys_.K.size,
        "delta": sys_.delta,
        "min_eig": min_eig,
        "n_local": sys_.n_local,
        "low_density": sys_.n_local < 10,
    })
    print(json.dumps(out))
    return 0


def cmd_simulate(args) -> int:
    config = load_config_file(args.config)
    result = run_experiment(config)
    write_csv(result, args.out)
    print(json.dumps({"cells": len(result.cells), "out": args.out}))
    return 0


def cmd_lower_bound(args) -> int:
    family = family_from_config(_family_config_from_args(args))
    prior = prior_from_config(_prior_config_from_args(args))
    n_grid = [int(float(v)) for v in args.n_grid.split(",")]
    trace = rate_trace(family, prior, args.r, n_grid, args.y)
    with open(args.out, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["n", "h", "zeta", "kl_exact", "kl_bound", "gap", "gap_sq"])
        for row in trace.rows:
            writer.writerow([
                row.n, repr(row.h), repr(row.zeta), repr(row.kl_exact),
                repr(row.kl_bound), repr(row.gap), repr(row.gap_sq),
            ])
    print(json.dumps({
        "exponent": trace.exponent,
        "kl_band_ratio": trace.kl_band_ratio,
        "r": trace.r, "r1": trace.r1, "r2": trace.r2,
        "out": args.out,
    }))
    return 0


def cmd_verify(args) -> int:
    names = sorted(SUITES) if args.suite == "all" else [args.suite]
    results = run_suites(names)
    failed = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"[{status}] {r.suite}.{r.name}: {r.detail}")
        failed += 0 if r.passed else 1
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ebwave",
        description="Wavelet-series empirical Bayes estimation toolkit",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tabulate-basis", help="write a binary basis tabulation cache")
    p.add_argument("--wavelet", default="db8")
    p.add_argument("--depth", type=int, default=12)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tabulate_basis)

    p = sub.add_parser("estimate", help="pointwise estimate from a data file")
    _add_family_args(p)
    _add_basis_args(p)
    p.add_argument("--data", required=True, help="text file, one observation per line")
    p.add_argument("--y", type=float, required=True)
    p.add_argument("--m", required=True, help="resolution level or 'auto'")
    p.add_argument("--delta-mult", dest="delta_mult", type=float, default=1.0)
    p.add_argument("--lambda-mode", dest="lambda_mode", default="calibrated",
                   choices=["calibrated", "theory"])
    p.add_argument("--lambda-mult", dest="lambda_mult", type=float, default=1.0)
    p.add_argument("--psi-sup", dest="psi_sup", type=float, default=None)
    p.add_argument("--trace", default=None, help="write the selection trace as JSON")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("simulate", help="run a Monte-Carlo experiment from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("lower-bound", help="two-hypothesis rate trace")
    _add_family_args(p)
    _add_prior_args(p)
    p.add_argument("--r", type=float, required=True)
    p.add_argument("--y", type=float, required=True)
    p.add_argument("--n-grid", dest="n_grid", required=True,
                   help="comma-separated sample sizes")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_lower_bound)

    p = sub.add_parser("verify", help="run a module property suite")
    p.add_argument("--suite", required=True, choices=sorted(SUITES) + ["all"])
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except EbwaveError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
