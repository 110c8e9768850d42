"""Command-line front end.

Four subcommands cover the measurement pipeline:

    qkr sweep     run ensembles over a (u, size) grid, write curves
    qkr fit       finite-size scaling fit of a curves CSV
    qkr verify    algebraic identities and the static-mapping residuals
    qkr collapse  export collapse coordinates for plotting

Values resolve with precedence: command-line flag, then --config JSON
(flat keys named like the flags with underscores), then built-in default.
The output directory falls back to the QKR_OUT environment variable.

Exit codes: 0 success, 2 usage or input errors, 3 data cannot identify
the scaling parameters, 4 fit failed to converge, 5 verification failed
or ensemble members aborted.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import anderson, ensemble, scaling, storage
from .model import OMEGA_DEFAULT, ModelParams

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_UNIDENTIFIABLE = 3
EXIT_NO_CONVERGENCE = 4
EXIT_FAILURE = 5

SWEEP_DEFAULTS = {
    "u_min": None,
    "u_max": None,
    "u_step": None,
    "sizes": None,
    "samples": 400,
    "seed": 12345,
    "workers": 1,
    "out": None,
    "init": "delta",
    "n0": 0,
    "sigma": 1.0,
    "t_steps": None,
    "mu": 1.0,
    "omega": OMEGA_DEFAULT,
    "dz_factor": 0.8,
}

FIT_DEFAULTS = {
    "window": None,
    "kmax_range": (1, 4),
    "boot": 200,
    "seed": 0,
    "out": None,
}

VERIFY_DEFAULTS = {
    "sizes": (4, 8, 16),
    "trials": 50,
    "seed": 20260822,
    "points": 10000,
    "out": None,
}


class UsageError(Exception):
    """Bad flag/config values; maps to exit code 2."""


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _parse_int_list(text) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    try:
        items = tuple(int(p) for p in str(text).split(",") if p.strip())
    except ValueError as exc:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from exc
    if not items:
        raise UsageError("empty integer list")
    return items


def _parse_pair(text) -> tuple[float, float]:
    if isinstance(text, (list, tuple)):
        vals = [float(v) for v in text]
    else:
        try:
            vals = [float(p) for p in str(text).split(",")]
        except ValueError as exc:
            raise UsageError(f"expected LO,HI, got {text!r}") from exc
    if len(vals) != 2:
        raise UsageError(f"expected exactly two values, got {text!r}")
    return vals[0], vals[1]


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    return doc


def _resolve(args, config: dict, defaults: dict) -> dict:
    """flag > config > default for every known key."""
    out = {}
    for key, fallback in defaults.items():
        flag = getattr(args, key, None)
        if flag is not None:
            out[key] = flag
        elif key in config:
            out[key] = config[key]
        else:
            out[key] = fallback
    return out


def _out_dir(value) -> Path:
    if value is None:
        value = os.environ.get("QKR_OUT", ".")
    path = Path(value)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _u_grid(u_min: float, u_max: float, u_step: float) -> list[float]:
    if u_step <= 0:
        raise UsageError(f"u-step must be positive, got {u_step}")
    if u_max < u_min:
        raise UsageError(f"u-max {u_max} below u-min {u_min}")
    grid = []
    k = 0
    while True:
        u = round(u_min + k * u_step, 10)
        if u > u_max + 0.5 * u_step:
            break
        grid.append(u)
        k += 1
    return grid


def cmd_sweep(args) -> int:
    cfg = _load_config(args.config)
    opt = _resolve(args, cfg, SWEEP_DEFAULTS)
    for key in ("u_min", "u_max", "u_step", "sizes"):
        if opt[key] is None:
            raise UsageError(f"missing required option --{key.replace('_', '-')}")
    sizes = _parse_int_list(opt["sizes"])
    grid = _u_grid(float(opt["u_min"]), float(opt["u_max"]), float(opt["u_step"]))
    if not grid:
        raise UsageError("empty u grid")
    out = _out_dir(opt["out"])
    try:
        spec = ensemble.EnsembleSpec(
            n_samples=int(opt["samples"]),
            master_seed=int(opt["seed"]),
            init_kind=str(opt["init"]),
            n0=int(opt["n0"]),
            sigma=float(opt["sigma"]),
        )
        params_base = ModelParams(
            h_e=1.0,
            mu=float(opt["mu"]),
            omega=float(opt["omega"]),
            dz_factor=float(opt["dz_factor"]),
            n_trunc=int(sizes[0]),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    workers = int(opt["workers"])
    t_steps = None if opt["t_steps"] is None else int(opt["t_steps"])
    print(
        f"sweep: {len(grid)} u-points x {len(sizes)} sizes, "
        f"{spec.n_samples} members, seed {spec.master_seed}, "
        f"{workers} worker(s) -> {out}"
    )
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        result = ensemble.sweep(
            params_base,
            grid,
            sizes,
            spec,
            t_steps=t_steps,
            out_dir=out,
            pool=pool,
            progress=print,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    finally:
        if pool is not None:
            pool.shutdown()
    csv_path = out / "curves.csv"
    storage.write_curves_csv(csv_path, result.curves)
    print(
        f"wrote {csv_path} ({len(result.curves)} curves, "
        f"{result.n_loaded} loaded from previous runs)"
    )
    flagged = [c for c in result.curves if c.truncation_flagged]
    for c in flagged:
        print(
            f"warning: truncation flagged at u={c.u:g} size={c.params.n_trunc} "
            f"(edge weight {c.max_edge_weight:.2e})"
        )
    if result.failures:
        for (u, n_trunc), fails in sorted(result.failures.items()):
            _err(f"u={u:g} size={n_trunc}: {len(fails)} member(s) aborted")
        return EXIT_FAILURE
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = _load_config(args.config)
    opt = _resolve(args, cfg, FIT_DEFAULTS)
    if opt["window"] is None:
        raise UsageError("missing required option --window LO,HI")
    window = _parse_pair(opt["window"])
    k_lo, k_hi = (int(v) for v in _parse_pair(opt["kmax_range"]))
    out = _out_dir(opt["out"])
    try:
        rows = storage.read_curves_csv(args.csv)
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    try:
        ds = storage.dataset_from_rows(rows, window=window)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    except scaling.UnidentifiableError as exc:
        _err(str(exc))
        return EXIT_UNIDENTIFIABLE
    n_boot = int(opt["boot"])
    seed = int(opt["seed"])
    try:
        k_max, k_table = scaling.select_kmax(ds, (k_lo, k_hi))
        fit_res = scaling.fit(ds, k_max)
        boot = scaling.bootstrap_errors(ds, fit_res, n_boot=n_boot, seed=seed)
    except scaling.ConvergenceError as exc:
        _err(str(exc))
        return EXIT_NO_CONVERGENCE
    except (scaling.UnidentifiableError, scaling.RankDeficiencyError) as exc:
        _err(str(exc))
        return EXIT_UNIDENTIFIABLE
    except ValueError as exc:
        _err(str(exc))
        return EXIT_UNIDENTIFIABLE
    doc = storage.fit_report_dict(
        fit_res,
        boot=boot,
        window=window,
        seed=seed,
        extra={
            "k_table": [[k, c] for k, c in k_table],
            "x_ratio": ds.x_ratio,
        },
    )
    report_path = out / "fit_report.json"
    storage.write_json(report_path, doc)
    y, d_vals, sigma_vals, size_vals = scaling.collapse_export(ds, fit_res)
    collapse_path = out / "collapse.csv"
    storage.write_collapse_csv(collapse_path, y, d_vals, sigma_vals, size_vals)
    print(
        f"u_c = {fit_res.u_c:.6f} +/- {boot.u_c:.6f} (boot) "
        f"/ {fit_res.err_u_c:.6f} (cov)"
    )
    print(
        f"nu = {fit_res.nu:.4f} +/- {boot.nu:.4f} (boot) "
        f"/ {fit_res.err_nu:.4f} (cov)"
    )
    print(
        f"sigma* = {fit_res.sigma_star:.4f} +/- {boot.sigma_star:.4f} (boot) "
        f"/ {fit_res.err_sigma_star:.4f} (cov)"
    )
    print(
        f"k_max = {fit_res.k_max}, chi2/dof = {fit_res.chi2_dof:.3f} "
        f"({fit_res.n_points} points)"
    )
    print(f"wrote {report_path} and {collapse_path}")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = _load_config(args.config)
    opt = _resolve(args, cfg, VERIFY_DEFAULTS)
    sizes = _parse_int_list(opt["sizes"])
    try:
        ok, report = anderson.run_verification(
            sizes=sizes,
            trials=int(opt["trials"]),
            seed=int(opt["seed"]),
            n_points=int(opt["points"]),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    ident = report["identities"]
    print(
        f"identities over {ident['n_points']} random points: "
        f"unitarity {ident['unitarity']:.2e}, cayley {ident['cayley']:.2e}, "
        f"tangent {ident['tangent']:.2e} "
        f"[{'ok' if ident['ok'] else 'FAIL'}]"
    )
    by_size = {}
    for row in report["secular"]:
        by_size.setdefault(row["n_trunc"], []).append(row)
    for n_trunc, rows in sorted(by_size.items()):
        worst = max(r["max_residual"] for r in rows)
        skipped = sum(r["n_skipped"] for r in rows)
        all_ok = all(r["ok"] for r in rows)
        print(
            f"static mapping size {n_trunc}: {len(rows)} instances, "
            f"worst residual {worst:.2e}, {skipped} singular states skipped "
            f"[{'ok' if all_ok else 'FAIL'}]"
        )
    if opt["out"] is not None:
        path = Path(opt["out"])
        if path.is_dir():
            path = path / "verify_report.json"
        storage.write_json(path, {"schema": "qkr-verify-v1", "ok": ok, **report})
        print(f"wrote {path}")
    print("verification " + ("PASSED" if ok else "FAILED"))
    return EXIT_OK if ok else EXIT_FAILURE


def cmd_collapse(args) -> int:
    try:
        rows = storage.read_curves_csv(args.csv)
        report = storage.read_json(args.report)
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    if "u_c" not in report or "nu" not in report:
        raise UsageError(f"{args.report} is not a fit report (no u_c/nu)")
    window = _parse_pair(args.window) if args.window else report.get("window")
    out = _out_dir(args.out)
    try:
        ds = storage.dataset_from_rows(
            rows, window=window, x_ratio=report.get("x_ratio", storage.X_RATIO)
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    except scaling.UnidentifiableError as exc:
        _err(str(exc))
        return EXIT_UNIDENTIFIABLE
    y = scaling.scaling_variable(ds.u, ds.size, report["u_c"], report["nu"])
    path = out / "collapse.csv"
    storage.write_collapse_csv(path, y, ds.d, ds.sigma, ds.size)
    print(f"wrote {path} ({ds.n_points} points)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qkr",
        description=(
            "spin-1/2 quantum kicked rotor: momentum diffusion sweeps and "
            "finite-size scaling at the localization transition"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sweep = sub.add_parser("sweep", help="run ensembles over a (u, size) grid")
    p_sweep.add_argument("--config", help="JSON file with flat option keys")
    p_sweep.add_argument("--u-min", type=float, dest="u_min")
    p_sweep.add_argument("--u-max", type=float, dest="u_max")
    p_sweep.add_argument("--u-step", type=float, dest="u_step")
    p_sweep.add_argument("--sizes", help="comma-separated momentum cutoffs")
    p_sweep.add_argument("--samples", type=int, help="ensemble members per point")
    p_sweep.add_argument("--seed", type=int, help="master seed")
    p_sweep.add_argument("--workers", type=int, help="process count")
    p_sweep.add_argument("--out", help="output directory (default $QKR_OUT or .)")
    p_sweep.add_argument("--init", choices=("delta", "gaussian"))
    p_sweep.add_argument("--n0", type=int, help="initial momentum center")
    p_sweep.add_argument("--sigma", type=float, help="gaussian packet width")
    p_sweep.add_argument(
        "--t-steps", type=int, dest="t_steps", help="fixed period count (default size^2/4)"
    )
    p_sweep.add_argument("--mu", type=float)
    p_sweep.add_argument("--omega", type=float)
    p_sweep.add_argument("--dz-factor", type=float, dest="dz_factor")
    p_sweep.set_defaults(func=cmd_sweep)

    p_fit = sub.add_parser("fit", help="finite-size scaling fit of a curves CSV")
    p_fit.add_argument("csv", help="curves CSV from qkr sweep")
    p_fit.add_argument("--config", help="JSON file with flat option keys")
    p_fit.add_argument("--window", help="u window LO,HI (required)")
    p_fit.add_argument(
        "--kmax-range", dest="kmax_range", help="degrees to try, LO,HI (default 1,4)"
    )
    p_fit.add_argument("--boot", type=int, help="bootstrap replicates (default 200)")
    p_fit.add_argument("--seed", type=int, help="bootstrap seed")
    p_fit.add_argument("--out", help="output directory (default $QKR_OUT or .)")
    p_fit.set_defaults(func=cmd_fit)

    p_verify = sub.add_parser(
        "verify", help="kick identities and static-mapping residuals"
    )
    p_verify.add_argument("--config", help="JSON file with flat option keys")
    p_verify.add_argument("--sizes", help="comma-separated cutoffs (max 32)")
    p_verify.add_argument("--trials", type=int, help="instances per size")
    p_verify.add_argument("--seed", type=int)
    p_verify.add_argument("--points", type=int, help="random points for identities")
    p_verify.add_argument("--out", help="write a JSON report here")
    p_verify.set_defaults(func=cmd_verify)

    p_col = sub.add_parser("collapse", help="export collapse coordinates")
    p_col.add_argument("csv", help="curves CSV from qkr sweep")
    p_col.add_argument("report", help="fit report JSON from qkr fit")
    p_col.add_argument("--window", help="u window LO,HI (default: from report)")
    p_col.add_argument("--out", help="output directory (default $QKR_OUT or .)")
    p_col.set_defaults(func=cmd_collapse)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except ensemble.EnsembleError as exc:
        _err(str(exc))
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
