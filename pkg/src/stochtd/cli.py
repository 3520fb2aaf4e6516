"""Command-line front end.

    std <simulate|ensemble|check|gendiff> --config FILE [--seed N] [--out DIR]
        [--paths N] [--allow-out-of-range]

``--config`` takes a JSON file or the name of a bundled preset. Exit codes:
0 success, 2 config error, 3 numerical divergence, 4 admissibility failure.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (ensemble_ms_error, gendiff_errors, make_bump, path_seeds,
                       theorem1_bound, window_mask)
from .config import PRESETS, ConfigError, ExperimentConfig, load_config
from .design import (LinearDesign, StabilityError, admissible_r_min, hurwitz_check,
                     in_admissible_range, r0_lhs, r0_threshold, verify_certificate)
from .noise import RNG_ALGORITHM
from .simulate import DivergenceError, simulate_ensemble, simulate_td

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_ADMISSIBILITY = 4


class CliFailure(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _warn(message):
    print(f"warning: {message}", file=sys.stderr)


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(_clean(payload), indent=2, sort_keys=True) + "\n")


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, np.integer)):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _out_dir(args, exp: ExperimentConfig) -> Path:
    out = Path(args.out or exp.outputs)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seed(args, exp) -> int:
    return int(exp.ensemble["base_seed"] if args.seed is None else args.seed)


def _provenance(exp, seed=None) -> dict:
    meta = {"experiment_digest": exp.digest, "rng": RNG_ALGORITHM, "dt": exp.grid.dt,
            "config_digest": exp.td.digest, "stochtd_version": __version__}
    if seed is not None:
        meta["seed"] = seed
    return meta


def _certificate_status(exp, allow_out_of_range):
    """Certificate and r_min if the bound applies, else ``(None, r_min_or_None)``."""
    cert, _ = exp.resolve_certificate()
    if cert is None:
        return None, None
    r_min = admissible_r_min(cert, exp.td.n)
    if not in_admissible_range(exp.td.r, cert, exp.td.n):
        msg = f"r={exp.td.r:g} is not admissible (r_min={r_min:.6g})"
        if not allow_out_of_range:
            raise CliFailure(msg, EXIT_ADMISSIBILITY)
        _warn(msg + "; bound columns omitted")
        return None, r_min
    return cert, r_min


# -- commands ------------------------------------------------------------------------

def cmd_simulate(exp: ExperimentConfig, args) -> int:
    seed = _seed(args, exp)
    out = _out_dir(args, exp)
    cert, _ = exp.resolve_certificate()
    r_min = admissible_r_min(cert, exp.td.n) if cert is not None else None
    summary = {"command": "simulate", **_provenance(exp, seed), "diverged": False}
    try:
        traj = simulate_td(exp.td, exp.signal, exp.grid, seed, r_min=r_min)
    except DivergenceError as exc:
        summary.update(diverged=True, message=str(exc), step=exc.step)
        _write_json(out / "summary.json", summary)
        raise CliFailure(str(exc), EXIT_DIVERGENCE) from None
    traj.to_csv(out / "trajectory.csv", extra_metadata={"experiment_digest": exp.digest})
    t = traj.times
    final = {"x1_minus_v": float(traj.x[-1, 0] - traj.v_values[-1])}
    for i in range(2, exp.td.n + 1):
        try:
            target = float(exp.signal.derivative(i - 1, t[-1]))
        except NotImplementedError:
            break
        final[f"x{i}_minus_v{i - 1}"] = float(traj.x[-1, i - 1] - target)
    T = exp.bounds["T"]
    mask = window_mask(t, T)
    err = traj.x[:, 0] - traj.v_values
    summary.update(
        final_errors=final,
        window={"t_from": T, "t_to": float(t[-1]),
                "mean_abs_error": float(np.abs(err[mask]).mean()),
                "mean_sq_error": float((err[mask] ** 2).mean())},
        max_abs_x2=float(np.abs(traj.x[:, 1]).max()),
        r_dt=exp.td.r * exp.grid.dt,
    )
    _write_json(out / "summary.json", summary)
    print(f"wrote {out / 'trajectory.csv'} ({len(t)} rows)")
    return EXIT_OK


def cmd_ensemble(exp: ExperimentConfig, args) -> int:
    paths = int(args.paths or exp.ensemble["paths"])
    if paths < 2:
        raise CliFailure("ensemble needs at least 2 paths", EXIT_CONFIG)
    base = _seed(args, exp)
    out = _out_dir(args, exp)
    cert, r_min = _certificate_status(exp, args.allow_out_of_range)
    if cert is None and r_min is None:
        _warn("no certificate available; bound columns omitted")
    try:
        stats = ensemble_ms_error(exp.td, exp.signal, exp.grid, paths, base,
                                  workers=int(exp.ensemble.get("workers", 1)), r_min=r_min)
    except DivergenceError as exc:
        raise CliFailure(f"path diverged: {exc}", EXIT_DIVERGENCE) from None
    T, mu = exp.bounds["T"], exp.bounds["mu"]
    report = None
    if cert is not None:
        report = theorem1_bound(cert, exp.td, exp.signal, mu=mu, T=T)
    meta = _provenance(exp)
    meta.update(paths=paths, base_seed=base)
    stats.to_csv(out / "ms_error.csv", bound=None if report is None else report.theorem1_bound,
                 T=T, metadata=meta)
    mask = window_mask(stats.times, T)
    summary = {
        "command": "ensemble", **meta,
        "seeds": path_seeds(base, paths),
        "parameters": exp.to_dict(),
        "window_mean_ms_error": float(stats.ms_error[mask].mean()),
        "max_ms_error_after_T": float(stats.ms_error[mask].max()),
        "noise_floor": exp.td.sigma1 ** 2 * exp.td.noise1.gamma,
        "bounds": None if report is None else report.to_dict(),
    }
    if report is not None:
        lower = stats.ms_error[mask] - 3 * stats.ms_error_stderr[mask]
        summary["bound_violations"] = int(np.sum(lower > report.optimized_bound))
    _write_json(out / "ensemble.json", summary)
    print(f"wrote {out / 'ms_error.csv'} ({paths} paths)")
    return EXIT_OK


def cmd_check(exp: ExperimentConfig, args) -> int:
    out = _out_dir(args, exp)
    f = exp.td.f
    result = {"command": "check", **_provenance(exp), "design": f.to_dict()}
    if f.kind == "linear":
        hurwitz = hurwitz_check(LinearDesign(f.coefficients))
        result["hurwitz"] = hurwitz
        print(f"Hurwitz: {hurwitz}")
    try:
        cert, Q = exp.resolve_certificate()
    except StabilityError as exc:
        _write_json(out / "check.json", result)
        raise CliFailure(str(exc), EXIT_ADMISSIBILITY) from None
    if cert is None:
        raise CliFailure("check needs a certificate for non-linear designs", EXIT_CONFIG)
    if Q is not None:
        result["Q"] = Q
        print("Q =")
        for row in Q:
            print("  " + "  ".join(f"{q: .6g}" for q in row))
    n, r = exp.td.n, exp.td.r
    r_min = admissible_r_min(cert, n)
    admissible = in_admissible_range(r, cert, n)
    sampled = verify_certificate(f, cert, {"half_width": 10.0, "count": 100_000, "seed": 0})
    result.update(
        certificate=cert.to_dict(), r=r, r_min=r_min, admissible=admissible,
        r0_lhs=r0_lhs(r, n), r0_threshold=r0_threshold(cert),
        sampled_check=sampled.to_dict(),
    )
    c = cert
    print(f"lambda1={c.lambda1:.6g} lambda2={c.lambda2:.6g} lambda3={c.lambda3:.6g} "
          f"lambda4={c.lambda4:.6g} c1={c.c1:.6g} c2={c.c2:.6g} theta={c.theta:g}")
    print(f"certificate holds on [-10, 10]^{n} (1e5 samples): {sampled.holds}")
    print(f"r_min={r_min:.6g}  r={r:g}  lhs={r0_lhs(r, n):.6g}  "
          f"threshold={r0_threshold(cert):.6g}  admissible={admissible}")
    _write_json(out / "check.json", result)
    if not admissible:
        msg = f"r={r:g} is not in the admissible range (r_min={r_min:.6g})"
        if not args.allow_out_of_range:
            raise CliFailure(msg, EXIT_ADMISSIBILITY)
        _warn(msg)
    return EXIT_OK


def cmd_gendiff(exp: ExperimentConfig, args) -> int:
    if exp.gendiff is None:
        raise CliFailure("config has no gendiff section", EXIT_CONFIG)
    g = exp.gendiff
    try:
        phi = make_bump(g["a"], g["center"], g["width"])
    except ValueError as exc:
        raise CliFailure(f"invalid test function: {exc}", EXIT_CONFIG) from None
    orders = [int(i) for i in g["orders"]]
    bad = [i for i in orders if not 2 <= i <= exp.td.n]
    if bad:
        raise CliFailure(f"orders {bad} outside [2, {exp.td.n}]", EXIT_CONFIG)
    if exp.grid.t_end < phi.a - 1e-9:
        raise CliFailure(f"grid ends at {exp.grid.t_end:g} before a={phi.a:g}", EXIT_CONFIG)
    seed = _seed(args, exp)
    paths = int(args.paths or 1)
    out = _out_dir(args, exp)
    try:
        ens = simulate_ensemble(exp.td, exp.signal, exp.grid, path_seeds(seed, paths))
    except DivergenceError as exc:
        raise CliFailure(str(exc), EXIT_DIVERGENCE) from None
    s1, g1 = exp.td.sigma1, exp.td.noise1.gamma
    per_order = []
    for i in orders:
        xf, vf = gendiff_errors(ens.times, ens.x[:, :, i - 1], ens.v_values, phi, i)
        err = np.abs(xf - vf)
        entry = {
            "order": i,
            "x_i_functional": xf.tolist(),
            "v_functional": vf,
            "abs_error": err.tolist(),
            "median_abs_error": float(np.median(err)),
            "mean_sq_error": float(np.mean(err ** 2)),
            "theorem2_bound": phi.a ** 2 * phi.sup_bound(i - 1) ** 2 * s1 ** 2 * g1,
        }
        if paths >= 2:
            entry["mean_sq_error_stderr"] = float(np.std(err ** 2, ddof=1) / math.sqrt(paths))
        try:
            mask = ens.times <= phi.a + 1e-12
            t = ens.times[mask]
            direct = np.asarray(exp.signal.derivative(i - 1, t), dtype=float)
            entry["v_functional_direct"] = float(np.trapezoid(direct * phi(t), t))
        except NotImplementedError:
            pass
        per_order.append(entry)
    payload = {"command": "gendiff", **_provenance(exp), "seeds": list(ens.seeds),
               "test_function": {"a": phi.a, "center": phi.center, "width": phi.width,
                                 "sup_bounds": [phi.sup_bound(k) for k in range(phi.max_order + 1)]},
               "orders": per_order}
    _write_json(out / "gendiff.json", payload)
    print(f"wrote {out / 'gendiff.json'}")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "ensemble": cmd_ensemble,
            "check": cmd_check, "gendiff": cmd_gendiff}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="std", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True,
                       help=f"JSON config file or preset ({', '.join(PRESETS)})")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--paths", type=int, default=None)
        p.add_argument("--allow-out-of-range", action="store_true",
                       help="downgrade an inadmissible gain to a warning")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        exp = load_config(args.config)
        return COMMANDS[args.command](exp, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CliFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
