"""Deterministic on-disk formats: curve sidecars, the curves CSV, fit reports.

Every writer here is byte-deterministic: floats are printed with 17
significant digits (lossless for float64), JSON keys are sorted, and rows
are emitted in a fixed sort order.  Two runs with the same seed must
produce identical files no matter how the work was scheduled; tests
compare outputs byte for byte.

Curve sidecars carry full provenance (model parameters, ensemble spec,
period count, schema version).  A sweep resumes by loading a sidecar only
when the provenance matches the requested run exactly; anything else is
recomputed and overwritten.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .ensemble import DiffusionCurve, EnsembleSpec
from .evolve import default_record_times
from .model import ModelParams

SCHEMA_CURVE = "qkr-curve-v1"
SCHEMA_FIT = "qkr-fit-v1"

CSV_HEADER = "u,h_e,N,t,D_mean,D_stderr,E_mean,n_samples,master_seed"

# Fraction t / size^2 at which scaling points are taken.
X_RATIO = 0.25


def fmt(x: float) -> str:
    """Float64 to text, 17 significant digits (round-trips exactly)."""
    return format(float(x), ".17g")


def _write_text(path: Path, text: str) -> None:
    # atomic replace so an interrupted run never leaves a truncated file
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def curve_path(out_dir, u: float, n_trunc: int) -> Path:
    """Sidecar location for one (u, size) grid point."""
    return Path(out_dir) / f"curve_u{float(u)!r}_N{int(n_trunc)}.json"


def _params_dict(params: ModelParams) -> dict:
    return {
        "h_e": params.h_e,
        "mu": params.mu,
        "omega": params.omega,
        "dz_factor": params.dz_factor,
        "n_trunc": params.n_trunc,
    }


def _spec_dict(spec: EnsembleSpec) -> dict:
    return {
        "n_samples": spec.n_samples,
        "master_seed": spec.master_seed,
        "init_kind": spec.init_kind,
        "n0": spec.n0,
        "sigma": spec.sigma,
    }


def save_curve(path, curve: DiffusionCurve, spec: EnsembleSpec) -> None:
    """Persist one curve with enough provenance to trust it on resume."""
    doc = {
        "schema": SCHEMA_CURVE,
        "params": _params_dict(curve.params),
        "ensemble": _spec_dict(spec),
        "t_max": curve.t_max,
        "times": [int(t) for t in curve.times],
        "delta_sq_mean": [float(v) for v in curve.delta_sq_mean],
        "d_mean": [float(v) for v in curve.d_mean],
        "d_stderr": [float(v) for v in curve.d_stderr],
        "e_mean": [float(v) for v in curve.e_mean],
        "max_edge_weight": curve.max_edge_weight,
        "truncation_flagged": curve.truncation_flagged,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _write_text(
        path, json.dumps(doc, sort_keys=True, indent=1, allow_nan=False) + "\n"
    )


def load_curve(path) -> tuple[DiffusionCurve, dict]:
    """Read a sidecar back into a DiffusionCurve plus its raw document."""
    doc = json.loads(Path(path).read_text())
    p = doc["params"]
    params = ModelParams(
        h_e=p["h_e"],
        mu=p["mu"],
        omega=p["omega"],
        dz_factor=p["dz_factor"],
        n_trunc=p["n_trunc"],
    )
    e = doc["ensemble"]
    curve = DiffusionCurve(
        params=params,
        t_max=doc["t_max"],
        times=np.asarray(doc["times"], dtype=np.int64),
        delta_sq_mean=np.asarray(doc["delta_sq_mean"]),
        d_mean=np.asarray(doc["d_mean"]),
        d_stderr=np.asarray(doc["d_stderr"]),
        e_mean=np.asarray(doc["e_mean"]),
        n_samples=e["n_samples"],
        master_seed=e["master_seed"],
        init_kind=e["init_kind"],
        max_edge_weight=doc["max_edge_weight"],
        truncation_flagged=doc["truncation_flagged"],
    )
    return curve, doc


def load_matching_curve(
    path, params: ModelParams, spec: EnsembleSpec, t_max: int
) -> DiffusionCurve | None:
    """Load a sidecar only if it describes exactly the requested run."""
    try:
        curve, doc = load_curve(path)
    except (OSError, ValueError, KeyError, TypeError):
        return None
    if doc.get("schema") != SCHEMA_CURVE:
        return None
    if doc["params"] != _params_dict(params):
        return None
    if doc["ensemble"] != _spec_dict(spec):
        return None
    if doc["t_max"] != t_max:
        return None
    expected = (
        default_record_times(t_max)
        if spec.record_times is None
        else tuple(int(t) for t in spec.record_times)
    )
    if tuple(doc["times"]) != expected:
        return None
    return curve


def write_curves_csv(path, curves) -> None:
    """Write the flat per-time table, sorted by (u, size, t)."""
    rows = []
    for c in curves:
        for k, t in enumerate(c.times):
            rows.append(
                (
                    c.u,
                    c.params.h_e,
                    c.params.n_trunc,
                    int(t),
                    c.d_mean[k],
                    c.d_stderr[k],
                    c.e_mean[k],
                    c.n_samples,
                    c.master_seed,
                )
            )
    rows.sort(key=lambda r: (r[0], r[2], r[3]))
    lines = [CSV_HEADER]
    for u, h_e, n, t, dm, ds, em, ns, seed in rows:
        lines.append(
            f"{fmt(u)},{fmt(h_e)},{n},{t},{fmt(dm)},{fmt(ds)},{fmt(em)},{ns},{seed}"
        )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _write_text(path, "\n".join(lines) + "\n")


def read_curves_csv(path):
    """Parse the per-time table into row dicts with native types."""
    text = Path(path).read_text()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError(f"{path}: not a curves CSV (bad header)")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 9:
            raise ValueError(f"{path}: malformed row {ln!r}")
        rows.append(
            {
                "u": float(parts[0]),
                "h_e": float(parts[1]),
                "N": int(parts[2]),
                "t": int(parts[3]),
                "D_mean": float(parts[4]),
                "D_stderr": float(parts[5]),
                "E_mean": float(parts[6]),
                "n_samples": int(parts[7]),
                "master_seed": int(parts[8]),
            }
        )
    return rows


def dataset_from_rows(rows, window=None, x_ratio: float = X_RATIO):
    """Scaling points from CSV rows: one point per (u, size) at t = x * size^2.

    window, when given, restricts u to [lo, hi] inclusive.
    """
    from .scaling import ScalingDataset  # deferred: scaling is downstream

    picked = []
    for r in rows:
        if r["t"] != int(round(x_ratio * r["N"] * r["N"])):
            continue
        if window is not None and not window[0] <= r["u"] <= window[1]:
            continue
        picked.append((r["u"], r["N"], r["D_mean"], r["D_stderr"]))
    picked.sort(key=lambda p: (p[0], p[1]))
    if not picked:
        raise ValueError("no rows at the scaling time t = x * size^2 in the window")
    u, size, d, sigma = (np.asarray(col) for col in zip(*picked))
    return ScalingDataset(
        u=u.astype(float),
        size=size.astype(int),
        d=d.astype(float),
        sigma=sigma.astype(float),
        x_ratio=x_ratio,
    )


def fit_report_dict(fit, *, boot=None, window=None, seed=None, extra=None) -> dict:
    """Assemble the JSON document describing one finished fit."""
    doc = {
        "schema": SCHEMA_FIT,
        "u_c": fit.u_c,
        "nu": fit.nu,
        "sigma_star": fit.sigma_star,
        "coeffs": [float(c) for c in fit.coeffs],
        "chi2": fit.chi2,
        "chi2_dof": fit.chi2_dof,
        "dof": fit.dof,
        "k_max": fit.k_max,
        "n_points": fit.n_points,
        "covariance_err": {
            "u_c": fit.err_u_c,
            "nu": fit.err_nu,
            "sigma_star": fit.err_sigma_star,
        },
    }
    if boot is not None:
        doc["bootstrap_err"] = {
            "u_c": boot.u_c,
            "nu": boot.nu,
            "sigma_star": boot.sigma_star,
            "coeffs": [float(c) for c in boot.coeffs],
            "n_boot": boot.n_boot,
        }
    if window is not None:
        doc["window"] = [float(window[0]), float(window[1])]
    if seed is not None:
        doc["seed"] = int(seed)
    if extra:
        doc.update(extra)
    return doc


def write_json(path, doc: dict) -> None:
    """Sorted-keys JSON with a trailing newline; byte-deterministic."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _write_text(
        path, json.dumps(doc, sort_keys=True, indent=1, allow_nan=False) + "\n"
    )


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def write_collapse_csv(path, y, d, sigma, size) -> None:
    """Collapse table y, D, sigma_D, N sorted by the scaling variable."""
    order = np.lexsort((np.asarray(size), np.asarray(y)))
    lines = ["y,D,sigma_D,N"]
    for i in order:
        lines.append(f"{fmt(y[i])},{fmt(d[i])},{fmt(sigma[i])},{int(size[i])}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _write_text(path, "\n".join(lines) + "\n")
