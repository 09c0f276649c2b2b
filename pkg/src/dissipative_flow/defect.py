"""Reynolds-defect estimates and (delta, eps, n) refinement sweeps.

The defect of the convective term is estimated from two Galerkin levels on
the same grid: ``r = (m x m / rho)[fine] - (m x m / rho)[coarse]``.  This is
a trend indicator, not the measure-valued object itself; in particular it
need not be positive semidefinite at finite resolution, so its eigenvalue
floor is reported rather than enforced.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import math

import numpy as np
from scipy.integrate import trapezoid
from scipy.ndimage import gaussian_filter

from .energy import energy_audit, kinetic_energy, pressure_potential
from .exceptions import ConfigurationError, ContractViolation, EquiIntegrabilityError
from .momentum import assemble_forcing, density_gradient
from .orlicz import SampleFamily, select_thresholds
from .solver import solver_for

PAIRINGS = ("successive", "double")
NOISE_BAND = 1.2
ZERO = 1e-14


def convective_flux(rho, m):
    """``m x m / rho`` per cell with ``0/0 = 0``; shapes ``(..., P)`` and ``(..., P, d)``."""
    rho = np.asarray(rho, dtype=float)
    m = np.asarray(m, dtype=float)
    safe = np.where(rho > 0, rho, 1.0)
    outer = m[..., :, None] * m[..., None, :]
    return np.where((rho > 0)[..., None, None], outer / safe[..., None, None], 0.0)


def smooth_field(values, grid, width=1.0):
    """Gaussian filter (in cells) of a ``(..., P, d, d)`` field, mirrored at the walls."""
    values = np.asarray(values, dtype=float)
    lead = values.shape[:-3]
    d = values.shape[-1]
    shaped = values.reshape(lead + grid.shape + (d, d))
    sigma = (0,) * len(lead) + (width,) * grid.dim + (0, 0)
    return gaussian_filter(shaped, sigma=sigma, mode="reflect").reshape(values.shape)


@dataclass
class DefectSeries:
    """Defect estimates at common times.

    ``field`` is the smoothed pointwise estimate ``(K, P, d, d)``; ``raw`` the
    unsmoothed difference.  ``norm`` is the L1 norm of ``raw`` per time,
    ``trace_integral`` the integral of its trace, and the two gaps are the
    fine-minus-coarse kinetic and pressure-potential energies.
    """

    times: np.ndarray
    field: np.ndarray
    raw: np.ndarray
    norm: np.ndarray
    trace_integral: np.ndarray
    kinetic_gap: np.ndarray
    pressure_gap: np.ndarray
    eigen_floor: np.ndarray
    asymmetry: float

    @property
    def max_norm(self):
        return float(self.norm.max()) if self.norm.size else 0.0


def _check_pair(coarse, fine):
    if coarse is fine:
        return
    if coarse.grid != fine.grid:
        raise ContractViolation("trajectories live on different grids")
    if coarse.a != fine.a or coarse.eps != fine.eps:
        raise ContractViolation("trajectories come from different scenarios")
    if fine.basis.n_modes < 2 * coarse.basis.n_modes:
        raise ContractViolation("fine level needs at least twice the coarse mode count")
    if abs(coarse.times[-1] - fine.times[-1]) > 1e-9 * max(1.0, coarse.times[-1]):
        raise ContractViolation("trajectories cover different time intervals")
    if not np.allclose(coarse.rho[0], fine.rho[0], rtol=1e-12, atol=1e-14):
        raise ContractViolation("trajectories start from different densities")


def reynolds_defect(coarse, fine, times=None, width=1.0):
    """Two-level defect estimate ``(m x m / rho)[fine] - (m x m / rho)[coarse]``."""
    _check_pair(coarse, fine)
    grid = coarse.grid
    if times is None:
        times = coarse.times
    times = np.asarray(times, dtype=float)
    rho_c, c_c = coarse.sample_at(times)
    rho_f, c_f = fine.sample_at(times)
    W_c = coarse.basis.values(grid.centers)
    W_f = fine.basis.values(grid.centers)
    m_c = rho_c[:, :, None] * np.einsum("ki,ipa->kpa", c_c, W_c)
    m_f = rho_f[:, :, None] * np.einsum("ki,ipa->kpa", c_f, W_f)
    raw = convective_flux(rho_f, m_f) - convective_flux(rho_c, m_c)
    smooth = smooth_field(raw, grid, width)
    w = grid.weights
    norm = np.sqrt(np.sum(raw * raw, axis=(-2, -1))) @ w
    trace_int = np.trace(raw, axis1=-2, axis2=-1) @ w
    kin_gap = np.array(
        [kinetic_energy(rf, mf, w) - kinetic_energy(rc, mc, w)
         for rf, mf, rc, mc in zip(rho_f, m_f, rho_c, m_c)]
    )
    pres_gap = (pressure_potential(rho_f, coarse.a) - pressure_potential(rho_c, coarse.a)) @ w
    eig = np.linalg.eigvalsh(0.5 * (smooth + np.swapaxes(smooth, -1, -2)))
    floor = eig.min(axis=(-2, -1)) if eig.size else np.zeros(times.size)
    asym = float(np.max(np.abs(raw - np.swapaxes(raw, -1, -2)))) if raw.size else 0.0
    return DefectSeries(times, smooth, raw, norm, trace_int, kin_gap, pres_gap, floor, asym)


@dataclass(frozen=True)
class CompatibilityReport:
    ratio: np.ndarray  # nan where undefined
    undefined: np.ndarray  # 0/0
    incompatible: np.ndarray  # zero denominator, non-zero trace


def trace_compatibility(trace_values, kinetic_gap, pressure_gap, tol=ZERO):
    """``tr[r] / (kinetic gap + pressure gap)`` per time.

    Both near zero gives ``nan`` (undefined); a vanishing denominator with a
    non-zero trace is flagged incompatible.
    """
    num = np.asarray(trace_values, dtype=float)
    den = np.asarray(kinetic_gap, dtype=float) + np.asarray(pressure_gap, dtype=float)
    scale = tol * np.maximum(1.0, np.abs(num))
    zero_den = np.abs(den) <= scale
    zero_num = np.abs(num) <= scale
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(zero_den, np.nan, num / np.where(zero_den, 1.0, den))
    return CompatibilityReport(ratio, zero_den & zero_num, zero_den & ~zero_num)


# ---------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class SweepPlan:
    """Lattice of regularisation parameters around one base scenario.

    ``deltas`` and ``eps`` must be strictly decreasing, ``modes`` strictly
    increasing.  With ``pairing="successive"`` the defect at ``n_i`` compares
    with ``n_{i+1}``; with ``"double"`` it compares with an extra run at
    ``2 n_i``.
    """

    deltas: tuple
    eps: tuple
    modes: tuple
    scenario: object
    pairing: str = "successive"
    tail_levels: tuple = tuple(2.0**k for k in range(11))

    def __post_init__(self):
        for name, values, sign in (("deltas", self.deltas, -1), ("eps", self.eps, -1),
                                   ("modes", self.modes, 1)):
            if len(values) == 0:
                raise ConfigurationError("list must not be empty", f"sweep.{name}")
            diffs = np.diff(np.asarray(values, dtype=float))
            if np.any(sign * diffs <= 0):
                order = "increasing" if sign > 0 else "decreasing"
                raise ConfigurationError(f"values must be strictly {order}", f"sweep.{name}")
        if any(d <= 0 for d in self.deltas):
            raise ConfigurationError("values must be positive", "sweep.deltas")
        if any(e < 0 for e in self.eps):
            raise ConfigurationError("values must be non-negative", "sweep.eps")
        if any(int(n) != n or n < 1 for n in self.modes):
            raise ConfigurationError("values must be positive integers", "sweep.modes")
        if self.pairing not in PAIRINGS:
            raise ConfigurationError(f"unknown pairing {self.pairing!r}", "sweep.pairing")
        if self.pairing == "successive" and len(self.modes) < 2:
            raise ConfigurationError("successive pairing needs at least two mode counts",
                                     "sweep.modes")

    def run_modes(self):
        modes = [int(n) for n in self.modes]
        if self.pairing == "double":
            modes = sorted(set(modes) | {2 * n for n in modes})
        return modes

    def partner(self, n):
        modes = [int(m) for m in self.modes]
        if self.pairing == "double":
            return 2 * n
        i = modes.index(n)
        return modes[i + 1] if i + 1 < len(modes) else None

    def points(self):
        return [(float(d), float(e), n) for d in self.deltas for e in self.eps
                for n in self.run_modes()]


def eps_correction_size(traj):
    """``max_t |<eps (grad rho . grad) u, w_i>|_2`` along a trajectory."""
    out = 0.0
    for r, c in zip(traj.rho, traj.coeffs):
        terms = assemble_forcing(r, c, traj.potential, traj.eps, traj.a, traj.basis, traj.grid)
        out = max(out, float(np.linalg.norm(terms.eps_correction)))
    return out


def density_gradient_norm(traj):
    """``sqrt(eps) ||grad rho||_{L2(0,T; L2)}``."""
    grid = traj.grid
    rates = np.array([np.sum(density_gradient(r, grid) ** 2, axis=1) @ grid.weights for r in traj.rho])
    return math.sqrt(traj.eps * float(trapezoid(rates, traj.times))) if traj.times.size > 1 else 0.0


def gradient_bound(traj, initial_energy):
    """Energy bound ``sqrt(max rho * (E0 - a M log M) / a)`` for ``sqrt(eps)||grad rho||``.

    Uses ``int P(rho) >= a M log M`` (Jensen, unit volume) for the mass ``M``.
    """
    mass = float(traj.grid.integrate(traj.rho[0]))
    floor = traj.a * mass * math.log(mass)
    return math.sqrt(max(float(traj.rho.max()), 0.0) * max(initial_energy - floor, 0.0) / traj.a)


def flux_family(traj):
    """``|rho u x u|`` per cell at every stored time, as rows."""
    m = traj.momentum()
    return np.sqrt(np.sum(convective_flux(traj.rho, m) ** 2, axis=(-2, -1)))


def tail_profile(values, weights, levels):
    """``sup_rows int_{|f| > M} |f|`` for each level ``M``."""
    values = np.abs(np.atleast_2d(values))
    return np.array([float(np.max(np.where(values > M, values, 0.0) @ weights)) for M in levels])


def run_point(scenario, delta, eps, n, tail_levels):
    """Simulate and audit one lattice point; failures become ``status="ERROR"``."""
    record = {"delta": delta, "eps": eps, "n": n}
    try:
        est = solver_for(scenario.with_params(delta=delta, eps=eps, modes=n))
        est.fit(scenario.with_params(modes=n).initial_data())
        traj = est.trajectory_
        ledger = energy_audit(traj, scenario.c_audit)
    except Exception as exc:  # noqa: BLE001 - a sweep records every failure and moves on
        record.update(status="ERROR", error=f"{type(exc).__name__}: {exc}")
        return record, None
    record.update(
        status="PASS" if ledger.passed else "FAIL",
        energy_residual=float(ledger.residual.max()),
        energy_tolerance=float(ledger.tolerance),
        initial_energy=ledger.initial_energy,
        visc_dissipation=float(ledger.visc_dissipation[-1]),
        art_dissipation=float(ledger.art_dissipation[-1]),
        sqrt_eps_grad=density_gradient_norm(traj),
        grad_bound=gradient_bound(traj, ledger.initial_energy),
        eps_correction=eps_correction_size(traj),
        tail_mass=tail_profile(flux_family(traj), traj.grid.weights, tail_levels).tolist(),
        windows=len(traj.reports),
        max_theta=max((r.theta for r in traj.reports), default=0.0),
        mass_drift=float(np.max(np.abs(traj.masses() - traj.masses()[0])) / traj.masses()[0]),
    )
    return record, traj


def _run_point_args(args):
    return run_point(*args)


@dataclass
class SweepReport:
    plan: SweepPlan
    points: list
    verdicts: dict = field(default_factory=dict)
    eps_slopes: dict = field(default_factory=dict)

    def rows(self):
        return [p for p in self.points if p["n"] in [int(m) for m in self.plan.modes]]


def ladder_verdict(defects, q, dim, band=NOISE_BAND):
    """Weak-solution regime iff the defect norms shrink along the ladder and ``q > d``."""
    d = np.asarray(defects, dtype=float)
    if d.size == 0 or np.any(~np.isfinite(d)):
        return "undetermined"
    if q <= dim:
        return "dissipative (q <= d)"
    if np.all(d <= ZERO):
        return "weak-solution regime"
    monotone = bool(np.all(d[1:] <= band * d[:-1])) and d[-1] < d[0]
    return "weak-solution regime" if monotone else "defect persists"


def log_slope(x, y):
    """Least-squares slope of ``log y`` against ``log x`` (nan if undefined)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = (x > 0) & (y > 0)
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


def run_sweep(plan, workers=1):
    """Run every lattice point, then compare Galerkin levels.

    Points run in a process pool when ``workers > 1``; the reduction is
    sequential and deterministic (points are ordered as in
    :meth:`SweepPlan.points`).
    """
    scenario = plan.scenario
    jobs = [(scenario, d, e, n, plan.tail_levels) for d, e, n in plan.points()]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_point_args, jobs))
    else:
        results = [run_point(*job) for job in jobs]

    trajs = {}
    points = []
    for (d, e, n), (record, traj) in zip(plan.points(), results):
        trajs[(d, e, n)] = traj
        points.append(record)
    index = {(p["delta"], p["eps"], p["n"]): p for p in points}

    q = scenario.spec().q
    verdicts = {}
    times = np.linspace(0.0, scenario.t_end, scenario.outputs + 1)
    for d in plan.deltas:
        for e in plan.eps:
            ladder = []
            for n in [int(m) for m in plan.modes]:
                partner = plan.partner(n)
                rec = index[(float(d), float(e), n)]
                if partner is None:
                    continue
                coarse, fine = trajs.get((float(d), float(e), n)), trajs.get((float(d), float(e), partner))
                if coarse is None or fine is None:
                    rec["defect_norm"] = math.nan
                    ladder.append(math.nan)
                    continue
                series = reynolds_defect(coarse, fine, times)
                compat = trace_compatibility(series.trace_integral, series.kinetic_gap,
                                             series.pressure_gap)
                rec["defect_norm"] = series.max_norm
                rec["defect_partner"] = partner
                rec["eigen_floor"] = float(series.eigen_floor.min())
                finite = compat.ratio[np.isfinite(compat.ratio)]
                rec["trace_ratio"] = float(np.median(finite)) if finite.size else math.nan
                rec["trace_incompatible"] = int(compat.incompatible.sum())
                ladder.append(series.max_norm)
            family = [flux_family(trajs[(float(d), float(e), n)])
                      for n in plan.run_modes() if trajs.get((float(d), float(e), n)) is not None]
            certificate = "n/a"
            if family:
                values = np.concatenate(family, axis=0)
                try:
                    select_thresholds(SampleFamily(values, scenario.grid().cell_volume), m_max=20)
                    certificate = "equi-integrable"
                except EquiIntegrabilityError as exc:
                    certificate = exc.report.status
            verdict = ladder_verdict(ladder, q, scenario.dim)
            verdicts[(float(d), float(e))] = {
                "verdict": verdict, "defects": ladder, "tail_certificate": certificate,
            }
            for n in plan.run_modes():
                index[(float(d), float(e), n)]["verdict"] = verdict

    slopes = {}
    for d in plan.deltas:
        for n in plan.run_modes():
            recs = [index[(float(d), float(e), n)] for e in plan.eps]
            eps_vals = [r["eps"] for r in recs if r["status"] != "ERROR"]
            sizes = [r["eps_correction"] for r in recs if r["status"] != "ERROR"]
            grads = [r["sqrt_eps_grad"] for r in recs if r["status"] != "ERROR"]
            bounds = [r["grad_bound"] for r in recs if r["status"] != "ERROR"]
            slopes[(float(d), n)] = {
                "eps_correction_slope": log_slope(eps_vals, sizes),
                "sqrt_eps_grad_max": max(grads, default=math.nan),
                "grad_bound": min(bounds, default=math.nan),
            }
    return SweepReport(plan, points, verdicts, slopes)
