"""Deterministic artifact writers (CSV, JSON, manifest).

Floats go out as ``%.17e`` in CSV and as shortest round-trip ``repr`` in
JSON so reruns with the same inputs are byte-identical.
"""

import csv
import hashlib
import json
import math
import platform
from pathlib import Path

import numpy as np

FLOAT = "%.17e"


def fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return FLOAT % v
    return str(value)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else str(v)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=1, sort_keys=True)
        fh.write("\n")


def trajectory_records(traj):
    return [
        {"time": float(t), "coeffs": c.tolist(), "rho": r.tolist()}
        for t, c, r in zip(traj.times, traj.coeffs, traj.rho)
    ]


def write_trajectory_json(traj, path, digest=""):
    write_json(path, {
        "config_sha256": digest,
        "dim": traj.grid.dim,
        "cells": traj.grid.cells,
        "modes": traj.basis.n_modes,
        "m0_star": traj.m0_star,
        "snapshots": trajectory_records(traj),
    })


def read_trajectory_json(path):
    with open(path) as fh:
        return json.load(fh)


def write_ledger_csv(ledger, path):
    write_csv(path, ["time", "kinetic", "potential", "visc_dissipation",
                     "art_dissipation", "residual"], ledger.rows())


def write_density_csv(traj, path, every=1):
    centers = traj.grid.centers
    header = ["time"] + ["|".join(FLOAT % v for v in pt) for pt in centers]
    rows = [[t, *r] for t, r in zip(traj.times[::every], traj.rho[::every])]
    write_csv(path, header, rows)


def write_contraction_csv(reports, path):
    rows = []
    for rep in reports:
        for k, change in enumerate(rep.changes, start=1):
            prev = rep.changes[k - 2] if k > 1 else math.nan
            theta = change / prev if k > 1 and prev > 0 else math.nan
            rows.append([rep.window, k, rep.t_start, rep.length, change, theta])
    write_csv(path, ["window", "iteration", "t_start", "length", "change", "theta"], rows)


def sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def versions():
    import scipy
    import sklearn

    from . import __version__

    return {
        "dissipative_flow": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "scikit-learn": sklearn.__version__,
    }


def write_manifest(path, digest, artifacts, verdicts):
    """Plain-text ``key = value`` manifest tying artifacts to the config hash."""
    lines = [f"config_sha256 = {digest}"]
    lines += [f"version.{k} = {v}" for k, v in versions().items()]
    lines += [f"verdict.{k} = {fmt(v)}" for k, v in verdicts.items()]
    for name in sorted(artifacts):
        lines.append(f"artifact.{name} = {sha256_file(artifacts[name])}")
    Path(path).write_text("\n".join(lines) + "\n")


SUMMARY_COLUMNS = ["delta", "eps", "n", "status", "energy_residual", "energy_tolerance",
                   "defect_norm", "sqrt_eps_grad", "eps_correction", "verdict"]


def write_sweep(report, outdir):
    """One JSON document per lattice point plus ``summary.csv``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for i, point in enumerate(report.points):
        p = outdir / f"point_{i:03d}.json"
        write_json(p, point)
        paths[p.name] = p
    rows = [[p.get(c, math.nan) for c in SUMMARY_COLUMNS] for p in report.rows()]
    summary = outdir / "summary.csv"
    write_csv(summary, SUMMARY_COLUMNS, rows)
    paths[summary.name] = summary
    verdicts = [[d, e, v["verdict"], v["tail_certificate"], *v["defects"]]
                for (d, e), v in sorted(report.verdicts.items(), reverse=True)]
    vpath = outdir / "verdicts.csv"
    write_csv(vpath, ["delta", "eps", "verdict", "tail_certificate", "defects..."], verdicts)
    paths[vpath.name] = vpath
    return paths
