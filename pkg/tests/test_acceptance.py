"""One test per acceptance criterion, each at its stated tolerance."""

import os
import time

import numpy as np
import pytest

from dissipative_flow.cli import main
from dissipative_flow.continuity import (
    DensityField,
    DensityTrajectory,
    density_bounds_check,
    evolve_density,
)
from dissipative_flow.defect import SweepPlan, reynolds_defect, run_sweep
from dissipative_flow.energy import energy_audit
from dissipative_flow.momentum import picard_window
from dissipative_flow.orlicz import (
    SampleFamily,
    build_young,
    delta2_verify,
    orlicz_bound,
    select_thresholds,
)
from dissipative_flow.exceptions import EquiIntegrabilityError
from dissipative_flow.rheology import (
    PotentialSpec,
    biconjugate,
    coercivity_sweep,
    conjugate_values,
    mollification_errors,
    sample_ball,
    superlinearity_probe,
)
from dissipative_flow.scenario import Scenario, preset
from dissipative_flow.solver import solver_for
from dissipative_flow.tensor_core import GalerkinBasis, Grid, SymTensor, frobenius

RANDOM_SEEDS = range(20)


def heat_profile(t):
    return lambda x: 1.0 + 0.5 * np.exp(-np.pi**2 * t) * np.cos(np.pi * x[:, 0])


def random_scenario(seed):
    return Scenario(density_profile="random_smooth", momentum_profile="random_smooth",
                    seed=seed, t_end=0.5)


@pytest.fixture(scope="module")
def random_runs():
    return [solver_for(random_scenario(s)).fit(random_scenario(s).initial_data()).trajectory_
            for s in RANDOM_SEEDS]


@pytest.fixture(scope="module")
def eps_sweep():
    # one time grid for every run so that Galerkin levels compare node by node
    sc = preset("single_mode").with_params(cells=128, t_end=0.5, window_length=1 / 32,
                                           window_nodes=8)
    plan = SweepPlan((0.1,), (0.1, 0.05, 0.025), (4, 8, 16), sc, pairing="double")
    start = time.perf_counter()
    report = run_sweep(plan, workers=min(4, os.cpu_count() or 1))
    return report, time.perf_counter() - start


def test_rest_state_exactness(verdict):
    start = time.perf_counter()
    sc = preset("rest")
    assert (sc.dim, sc.cells, sc.modes) == (1, 64, 4)
    traj = solver_for(sc).fit(sc.initial_data()).trajectory_
    ledger = energy_audit(traj)
    elapsed = time.perf_counter() - start
    defect = reynolds_defect(traj, traj).max_norm
    u_max = float(np.abs(traj.coeffs).max())
    rho_dev = float(np.abs(traj.rho - traj.rho[0, 0]).max())
    diss = float(max(ledger.visc_dissipation.max(), ledger.art_dissipation.max()))
    resid = float(np.abs(ledger.residual).max())
    ok = verdict(1, resid <= 1e-12 and elapsed < 1.0 and defect == 0.0 and u_max <= 1e-14
                 and rho_dev <= 1e-12 and diss <= 1e-14,
                 f"residual {resid:.1e}, |u| {u_max:.1e}, rho drift {rho_dev:.1e}, "
                 f"dissipation {diss:.1e}, runtime {elapsed:.2f}s")
    assert ok


def test_heat_kernel_oracle(verdict):
    grid = Grid(1, 128)
    basis = GalerkinBasis(1, 1)
    traj = evolve_density(DensityField.from_function(grid, heat_profile(0.0)),
                          lambda t: np.zeros(1), basis, 1.0, 1e-4, 0.1)
    err = float(np.sqrt(grid.integrate((traj.values[-1] - grid.sample(heat_profile(0.1))) ** 2)))
    errs, scales = [], []
    # dt + h^2 halves from one level to the next (h shrinks by sqrt 2)
    for cells in (32, 45, 64):
        g = Grid(1, cells)
        dt = 0.1 / round(0.1 * cells**2)
        t = evolve_density(DensityField.from_function(g, heat_profile(0.0)),
                           lambda t: np.zeros(1), basis, 1.0, dt, 0.1)
        errs.append(np.sqrt(g.integrate((t.values[-1] - g.sample(heat_profile(0.1))) ** 2)))
        scales.append(dt + g.h**2)
    orders = np.log(np.array(errs[:-1]) / errs[1:]) / np.log(np.array(scales[:-1]) / scales[1:])
    ok = verdict(2, err <= 1e-3 and bool(np.all(np.abs(orders - 1.0) <= 0.3)),
                 f"L2 error {err:.2e} at N=128; orders {np.round(orders, 3).tolist()}")
    assert ok


def test_density_envelope(verdict, random_runs):
    violations = 0
    for traj in random_runs:
        rep = density_bounds_check(DensityTrajectory(traj.grid, traj.times, traj.rho),
                                   traj.coeffs, traj.basis)
        violations += rep.violations
    ok = verdict(3, violations == 0, f"{violations} violations over {len(random_runs)} scenarios")
    assert ok


def test_mass_conservation(verdict, random_runs):
    sc = preset("single_mode").with_params(t_end=1.0, window_length=1 / 64, window_nodes=16)
    long_run = solver_for(sc).fit(sc.initial_data()).trajectory_
    steps = len(long_run.times) - 1
    drift = 0.0
    for traj in [long_run, *random_runs]:
        m = traj.masses()
        drift = max(drift, float(np.max(np.abs(m / m[0] - 1.0))))
    ok = verdict(4, steps >= 1000 and drift <= 1e-9,
                 f"max relative drift {drift:.1e}; longest run {steps} steps")
    assert ok


def test_picard_contraction(verdict):
    sc = preset("single_mode")
    cfg = sc.momentum_config()
    auto = solver_for(sc).fit(sc.initial_data()).trajectory_.reports[0].length
    thetas = []
    for length in (auto, auto / 2, auto / 4):
        _, rep = picard_window(sc.initial_density(), sc.m0_star(), 0.0, length,
                               sc.potential(), cfg, sc.basis(), sc.grid())
        thetas.append(rep.theta)
    ok = verdict(5, thetas[0] < 1 and thetas[0] > thetas[1] > thetas[2],
                 f"T(n)={auto:.4f}; theta {np.round(thetas, 4).tolist()}")
    assert ok


def test_energy_audit(verdict, random_runs, eps_sweep):
    trajs = list(random_runs)
    for name in ("rest", "single_mode"):
        sc = preset(name)
        trajs.append(solver_for(sc).fit(sc.initial_data()).trajectory_)
    failures = 0
    worst = 0.0
    for traj in trajs:
        ledger = energy_audit(traj)
        failures += not ledger.passed
        worst = max(worst, float(np.abs(ledger.residual).max() / ledger.tolerance))
        for acc in (ledger.visc_dissipation, ledger.art_dissipation):
            failures += bool(np.any(acc < 0) or np.any(np.diff(acc) < 0))
    report, _ = eps_sweep
    failures += sum(p["status"] != "PASS" for p in report.points)
    ok = verdict(6, failures == 0,
                 f"{len(trajs) + len(report.points)} trajectories, {failures} failures, "
                 f"worst |residual|/tolerance {worst:.2e}")
    assert ok


def test_fenchel_machinery(verdict):
    rng = np.random.default_rng(7)
    quad2 = PotentialSpec.quadratic(1.0, 0.0, 2)
    power = PotentialSpec.power_law(1.0, 1.5, dim=2)
    S = sample_ball(2, 100, 5.0, rng)
    conj_err = float(np.max(np.abs(conjugate_values(quad2, S) - 0.5 * frobenius(S) ** 2)))

    fy_min = np.inf
    fy_sub = 0.0
    for spec in (quad2, power):
        S = sample_ball(2, 1000, 5.0, rng)
        D = sample_ball(2, 1000, 5.0, rng)
        res = spec.values(D) + conjugate_values(spec, S) - np.sum(S * D, axis=(-2, -1))
        fy_min = min(fy_min, float(res.min()))
        D = sample_ball(2, 100, 3.0, rng)
        G = spec.gradient(D)
        res = spec.values(D) + conjugate_values(spec, G) - np.sum(G * D, axis=(-2, -1))
        fy_sub = max(fy_sub, float(np.abs(res).max()))

    bi_err = 0.0
    for D in sample_ball(2, 3, 2.0, rng):
        res = biconjugate(quad2, D)
        bi_err = max(bi_err, abs(res.value - 0.5 * float(frobenius(D)) ** 2))

    radii = [1.0, 2.0, 4.0, 8.0, 16.0]
    e = SymTensor.diag(1.0, -1.0) * (1 / np.sqrt(2))
    ratios = superlinearity_probe(quad2, e, radii)
    increasing = bool(np.all(np.diff(ratios) > 0))
    ok = verdict(7, conj_err <= 1e-6 and fy_min >= -1e-7 and fy_sub <= 1e-6
                 and bi_err <= 1e-5 and increasing,
                 f"conjugate error {conj_err:.1e}, FY min {fy_min:.1e}, FY on subgradients "
                 f"{fy_sub:.1e}, biconjugate error {bi_err:.1e}, ratios {np.round(ratios, 3).tolist()}")
    assert ok


def test_mollification(verdict):
    mu, q = 1.0, 1.5
    spec = PotentialSpec.power_law(mu, q, dim=2)
    deltas = (0.2, 0.1, 0.05)
    sweep = coercivity_sweep(spec, deltas, nu=mu / q, c=0.1, q=q, samples=1000)
    probes = sample_ball(2, 20, 2.0, np.random.default_rng(11))
    errs = mollification_errors(spec, deltas, probes)
    monotone = bool(np.all(errs[:-1] > errs[1:]))
    ok = verdict(8, sweep.certified and monotone,
                 f"coercivity worst violation {sweep.worst_violation:.2e} over 3x1000 samples; "
                 f"max error per delta {np.round(errs.max(axis=1), 5).tolist()}")
    assert ok


def test_defect_trend(verdict, eps_sweep):
    report, elapsed = eps_sweep
    lines = []
    ok = elapsed < 600
    for (delta, eps), v in sorted(report.verdicts.items()):
        d = np.asarray(v["defects"])
        shrinking = bool(np.all(d[1:] <= 1.2 * d[:-1]) and d[-1] < d[0])
        ok &= shrinking and v["verdict"] == "weak-solution regime"
        lines.append(f"eps={eps:g}: " + ", ".join(f"{x:.2e}" for x in d))
    ok = verdict(9, ok, f"defects {'; '.join(lines)}; sweep runtime {elapsed:.1f}s")
    assert ok


def test_vanishing_eps_terms(verdict, eps_sweep):
    report, _ = eps_sweep
    ladder = [4, 8, 16]
    rows = [p for p in report.points if p["n"] in ladder]
    constant = max(p["grad_bound"] for p in rows)
    grad_max = max(p["sqrt_eps_grad"] for p in rows)
    slopes = [report.eps_slopes[(0.1, n)]["eps_correction_slope"] for n in ladder]
    ok = verdict(10, grad_max <= constant and all(0.7 <= s <= 1.3 for s in slopes),
                 f"max sqrt(eps)|grad rho| {grad_max:.3f} <= {constant:.3f}; "
                 f"slopes {np.round(slopes, 3).tolist()}")
    assert ok


def test_young_function_round_trip(verdict):
    fam = SampleFamily.on_unit_interval([lambda x: 1 / np.sqrt(x)], 2**16)
    report = select_thresholds(fam, m_max=40)
    phi, checks = build_young(report.thresholds, m_max=40)
    d2 = delta2_verify(phi, c=report.doubling_constant)
    bound = orlicz_bound(fam, phi)
    cells = 4096
    spikes = np.zeros((8, cells))
    for n in range(1, 9):
        width = cells >> n
        spikes[n - 1, :width] = cells / width
    try:
        select_thresholds(SampleFamily(spikes, 1 / cells))
        rejected = False
    except EquiIntegrabilityError as exc:
        rejected = exc.report.status == "violation"
    ok = verdict(11, checks["index_equivalence"] and d2.K <= 2 * report.doubling_constant + 1e-9
                 and bound <= 1.05 and rejected,
                 f"C_1..5 {report.thresholds[:5]}, K {d2.K:.3f} <= 2c = "
                 f"{2 * report.doubling_constant:.3f}, bound {bound:.4f}, spikes rejected {rejected}")
    assert ok


def test_determinism(verdict, tmp_path):
    cfg = tmp_path / "s.ini"
    cfg.write_text("[scenario]\nt_end = 0.2\nseed = 9001\n"
                   "[density]\nprofile = random_smooth\n[momentum]\nprofile = random_smooth\n")
    plan = tmp_path / "p.ini"
    plan.write_text("[scenario]\nt_end = 0.1\nseed = 3\n[density]\nprofile = random_smooth\n"
                    "[sweep]\ndeltas = 0.1\neps = 0.1, 0.05\nmodes = 4, 8\n")
    for run, workers in (("a", "1"), ("b", "2")):
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / run / "sim")]) == 0
        assert main(["sweep", "--config", str(plan), "--out", str(tmp_path / run / "sweep"),
                     "--workers", workers]) == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    differ = [str(f) for f in files
              if (tmp_path / "a" / f).read_bytes() != (tmp_path / "b" / f).read_bytes()]
    ok = verdict(12, not differ and len(files) > 5,
                 f"{len(files)} artifacts compared, differing: {differ or 'none'}")
    assert ok
