"""Command-line entry point: ``dissipative-flow <command> ...``.

Exit codes: 0 success, 1 energy audit failed or no Young function found,
2 invalid configuration or arguments, 3 solver failure.
"""

import argparse
import configparser
import math
import sys
from pathlib import Path

import numpy as np

from . import io as artifacts
from .defect import SweepPlan, run_sweep
from .energy import energy_audit
from .exceptions import (
    ConfigurationError,
    ContractViolation,
    EquiIntegrabilityError,
    StepRejected,
    WindowContractionError,
)
from .momentum import Trajectory
from .orlicz import (
    SampleFamily,
    absolute_continuity_excess,
    build_young,
    delta2_verify,
    load_family_csv,
    orlicz_bound,
    select_thresholds,
    write_young_csv,
)
from .rheology import PotentialSpec, fenchel_conjugate, quadratic_conjugate
from .scenario import Scenario, preset
from .solver import solver_for
from .tensor_core import SymTensor

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3

BUILTIN_FAMILIES = ("ones", "inv_sqrt", "spikes")


def _fail(code, message):
    print(f"error: {message}", file=sys.stderr)
    return code


def _load_scenario(args):
    if args.config and args.preset:
        raise ConfigurationError("give either --config or --preset, not both")
    if args.preset:
        scenario = preset(args.preset)
    elif args.config:
        scenario = Scenario.from_ini(args.config)
    else:
        raise ConfigurationError("one of --config or --preset is required")
    if args.seed is not None:
        scenario = scenario.with_params(seed=args.seed)
    return scenario


def _out_dir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_run(out, scenario, traj, ledger, extra=None):
    digest = scenario.digest()
    paths = {}
    config = out / "scenario.ini"
    config.write_text(scenario.to_ini())
    paths[config.name] = config
    if traj is not None:
        tpath = out / "trajectory.json"
        artifacts.write_trajectory_json(traj, tpath, digest)
        paths[tpath.name] = tpath
        dpath = out / "density.csv"
        every = max(1, (len(traj.times) - 1) // max(1, scenario.outputs))
        artifacts.write_density_csv(traj, dpath, every)
        paths[dpath.name] = dpath
        cpath = out / "contraction.csv"
        artifacts.write_contraction_csv(traj.reports, cpath)
        paths[cpath.name] = cpath
    lpath = out / "ledger.csv"
    artifacts.write_ledger_csv(ledger, lpath)
    paths[lpath.name] = lpath
    verdicts = {
        "energy": "PASS" if ledger.passed else "FAIL",
        "energy_max_residual": float(ledger.residual.max()),
        "energy_tolerance": float(ledger.tolerance),
        "initial_energy": float(ledger.initial_energy),
    }
    verdicts.update(extra or {})
    artifacts.write_manifest(out / "manifest.txt", digest, paths, verdicts)
    return verdicts


def cmd_simulate(args):
    scenario = _load_scenario(args)
    out = _out_dir(args.out)
    est = solver_for(scenario)
    try:
        est.fit(scenario.initial_data())
    except WindowContractionError as exc:
        return _fail(EXIT_SOLVER, f"solver failed at t={exc.time}: {exc}")
    except StepRejected as exc:
        return _fail(EXIT_SOLVER, f"solver failed: {exc}")
    traj = est.trajectory_
    ledger = energy_audit(traj, scenario.c_audit)
    verdicts = _write_run(out, scenario, traj, ledger, {
        "windows": len(traj.reports),
        "max_theta": max((r.theta for r in traj.reports), default=0.0),
    })
    print(f"energy {verdicts['energy']}: max residual {verdicts['energy_max_residual']:.3e} "
          f"(tolerance {verdicts['energy_tolerance']:.3e})")
    return EXIT_OK if ledger.passed else EXIT_FAIL


def _trajectory_from_json(path, scenario):
    data = artifacts.read_trajectory_json(path)
    if data.get("config_sha256") and data["config_sha256"] != scenario.digest():
        raise ConfigurationError("trajectory was produced by a different configuration",
                                 "trajectory")
    snaps = data["snapshots"]
    return Trajectory(
        grid=scenario.grid(), basis=scenario.basis(),
        times=np.array([s["time"] for s in snaps]),
        rho=np.array([s["rho"] for s in snaps]),
        coeffs=np.array([s["coeffs"] for s in snaps]),
        potential=scenario.potential(), a=scenario.a, eps=scenario.eps,
        m0_star=np.asarray(data["m0_star"], dtype=float),
    )


def cmd_audit(args):
    scenario = _load_scenario(args)
    if not args.trajectory:
        raise ConfigurationError("--trajectory is required", "trajectory")
    traj = _trajectory_from_json(args.trajectory, scenario)
    ledger = energy_audit(traj, scenario.c_audit)
    if args.out:
        artifacts.write_ledger_csv(ledger, _out_dir(args.out) / "ledger.csv")
    print(f"energy {'PASS' if ledger.passed else 'FAIL'}: max residual "
          f"{float(ledger.residual.max()):.3e} (tolerance {float(ledger.tolerance):.3e})")
    return EXIT_OK if ledger.passed else EXIT_FAIL


def read_plan(path, seed=None):
    """Scenario plus ``[sweep]`` section (deltas, eps, modes, pairing)."""
    scenario = Scenario.from_ini(path)
    if seed is not None:
        scenario = scenario.with_params(seed=seed)
    parser = configparser.ConfigParser()
    parser.read(path)
    if not parser.has_section("sweep"):
        raise ConfigurationError("missing [sweep] section", "sweep")
    sec = parser["sweep"]
    allowed = {"deltas", "eps", "modes", "pairing"}
    for key in sec:
        if key not in allowed:
            raise ConfigurationError("unknown entry", f"sweep.{key}")

    def numbers(key, cast):
        raw = sec.get(key, "").replace(",", " ").split()
        try:
            return tuple(cast(v) for v in raw)
        except ValueError as exc:
            raise ConfigurationError(f"cannot parse {sec.get(key)!r}", f"sweep.{key}") from exc

    return SweepPlan(
        deltas=numbers("deltas", float),
        eps=numbers("eps", float),
        modes=numbers("modes", int),
        scenario=scenario,
        pairing=sec.get("pairing", "successive").strip(),
    )


def cmd_sweep(args):
    if not args.config:
        raise ConfigurationError("--config is required for a sweep plan")
    plan = read_plan(args.config, args.seed)
    report = run_sweep(plan, workers=args.workers)
    out = _out_dir(args.out)
    paths = artifacts.write_sweep(report, out)
    config = out / "plan.ini"
    config.write_text(Path(args.config).read_text())
    paths[config.name] = config
    verdicts = {f"{d}_{e}": v["verdict"] for (d, e), v in sorted(report.verdicts.items())}
    artifacts.write_manifest(out / "manifest.txt", plan.scenario.digest(), paths, verdicts)
    for row in report.rows():
        defect = row.get("defect_norm", math.nan)
        print(f"delta={row['delta']:g} eps={row['eps']:g} n={row['n']} {row['status']} "
              f"defect={defect:.3e} {row.get('verdict', '')}")
    return EXIT_OK


def _potential_from_args(args):
    if args.config:
        return Scenario.from_ini(args.config).spec()
    if args.variant == "quadratic":
        return PotentialSpec.quadratic(args.mu, args.lam, args.dim)
    if args.variant == "power_law":
        return PotentialSpec.power_law(args.mu, args.q, args.lam, args.dim, args.c)
    if args.variant == "custom":
        return PotentialSpec.custom(args.custom, args.dim, args.mu, args.q, args.c)
    raise ConfigurationError(f"unknown variant {args.variant!r}", "variant")


def _parse_stress(text, dim):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse {text!r}", "stress") from exc
    if dim == 1 and len(vals) == 1:
        return SymTensor.from_matrix(np.array([[vals[0]]]))
    if dim == 2 and len(vals) == 3:
        s11, s22, s12 = vals
        return SymTensor.from_matrix(np.array([[s11, s12], [s12, s22]]))
    raise ConfigurationError(f"expected {1 if dim == 1 else 3} comma-separated entries",
                             "stress")


def cmd_conjugate(args):
    spec = _potential_from_args(args)
    labels = ["s11"] if spec.dim == 1 else ["s11", "s22", "s12"]
    closed = spec.is_quadratic
    header = labels + ["value", "saturated", "radius"] + (["closed_form"] if closed else [])
    print(",".join(header))
    for text in args.stress or []:
        S = _parse_stress(text, spec.dim)
        res = fenchel_conjugate(spec, S)
        m = S.matrix()
        comps = [m[0, 0]] if spec.dim == 1 else [m[0, 0], m[1, 1], m[0, 1]]
        value = artifacts.fmt(res.value) if res.saturated else "divergent"
        row = [artifacts.fmt(c) for c in comps] + [value, artifacts.fmt(res.saturated),
                                                  artifacts.fmt(res.radius)]
        if closed:
            row.append(artifacts.fmt(float(quadratic_conjugate(spec, S))))
        print(",".join(row))
    return EXIT_OK


def builtin_family(name, members, cells):
    x = (np.arange(cells) + 0.5) / cells
    if name == "ones":
        values = np.ones((members, cells))
    elif name == "inv_sqrt":
        values = np.tile(1.0 / np.sqrt(x), (members, 1))
    elif name == "spikes":
        # f_n = 2^n on a set of measure 2^-n: constant mass, concentrating
        values = np.zeros((members, cells))
        for n in range(1, members + 1):
            width = max(1, cells >> n)
            values[n - 1, :width] = cells / width
    else:
        raise ConfigurationError(f"unknown family {name!r}", "family")
    return SampleFamily(values, 1.0 / cells)


def cmd_orlicz(args):
    if args.family and args.builtin:
        raise ConfigurationError("give either --family or --builtin, not both")
    if args.family:
        family = load_family_csv(args.family)
    elif args.builtin:
        family = builtin_family(args.builtin, args.members, args.cells)
    else:
        raise ConfigurationError("one of --family or --builtin is required")
    rows = [("members", family.members), ("m_max", args.m_max)]
    try:
        report = select_thresholds(family, m_max=args.m_max)
    except EquiIntegrabilityError as exc:
        rows += [("status", exc.report.status), ("message", exc.report.message),
                 ("extension_ratio", exc.report.extension_ratio)]
        _print_pairs(rows)
        return EXIT_FAIL
    phi, checks = build_young(report.thresholds, args.m_max)
    d2 = delta2_verify(phi, c=report.doubling_constant)
    rows += [
        ("status", report.status),
        ("thresholds", " ".join(str(c) for c in report.thresholds)),
        ("extension_ratio", report.extension_ratio),
        ("doubling_constant", report.doubling_constant),
        ("index_equivalence", checks["index_equivalence"]),
        ("proof_inequality", checks["proof_inequality"]),
        ("delta2_K", d2.K),
        ("delta2_t0", d2.t0),
        ("delta2_bound", d2.bound),
        ("delta2_passed", d2.passed),
        ("bound", orlicz_bound(family, phi)),
        ("ac_excess", absolute_continuity_excess(family, phi)),
    ]
    _print_pairs(rows)
    if args.out:
        write_young_csv(phi, _out_dir(args.out) / "young.csv")
    return EXIT_OK


def _print_pairs(rows):
    print("key,value")
    for key, value in rows:
        print(f"{key},{artifacts.fmt(value)}")


def _seed(text):
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _workers(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("workers must be at least 1")
    return value


def build_parser():
    parser = argparse.ArgumentParser(prog="dissipative-flow")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=False):
        p.add_argument("--config", metavar="PATH")
        p.add_argument("--out", metavar="DIR", required=out_required)
        p.add_argument("--seed", type=_seed, metavar="U64")
        p.add_argument("--workers", type=_workers, default=1, metavar="N")

    p = sub.add_parser("simulate", help="integrate one scenario and audit its energy")
    common(p, out_required=True)
    p.add_argument("--preset", choices=("rest", "single_mode"))
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("audit", help="re-audit a stored trajectory")
    common(p)
    p.add_argument("--preset", choices=("rest", "single_mode"))
    p.add_argument("--trajectory", metavar="PATH")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("sweep", help="run a (delta, eps, n) lattice")
    common(p, out_required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("conjugate", help="numerical Fenchel conjugate of a potential")
    common(p)
    p.add_argument("--variant", default="quadratic", choices=("quadratic", "power_law", "custom"))
    p.add_argument("--dim", type=int, default=2, choices=(1, 2))
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--lam", type=float, default=0.0)
    p.add_argument("--q", type=float, default=2.0)
    p.add_argument("--c", type=float, default=0.0)
    p.add_argument("--custom", default="frobenius_norm")
    p.add_argument("--stress", action="append", metavar="S11[,S22,S12]")
    p.set_defaults(func=cmd_conjugate)

    p = sub.add_parser("orlicz", help="Young function for a sampled family")
    common(p)
    p.add_argument("--family", metavar="PATH", help="CSV, one member per column")
    p.add_argument("--builtin", choices=BUILTIN_FAMILIES)
    p.add_argument("--members", type=int, default=8)
    p.add_argument("--cells", type=int, default=2**16)
    p.add_argument("--m-max", type=int, default=20)
    p.set_defaults(func=cmd_orlicz)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, ContractViolation) as exc:
        return _fail(EXIT_CONFIG, str(exc))


if __name__ == "__main__":
    sys.exit(main())
