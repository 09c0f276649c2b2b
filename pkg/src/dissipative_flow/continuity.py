"""Regularised continuity equation ``rho_t + div(rho u) = eps lap(rho)``.

Finite volumes on the cell-centred grid: first-order upwind fluxes for the
convection, a central Neumann Laplacian (ghost cells mirror the boundary
cell), and backward Euler in time.  The resulting system matrix has unit
column sums and is an M-matrix for every ``dt``, so each step conserves mass
exactly (up to round-off) and keeps the density positive.
"""

from dataclasses import dataclass, field
import math
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded
from scipy.sparse.linalg import spsolve

from .exceptions import ConfigurationError, ContractViolation, StepRejected
from .tensor_core import Grid, tabulate


@dataclass(frozen=True)
class DensityField:
    """Cell values of a strictly positive density at time ``time``."""

    grid: Grid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).reshape(-1)
        if vals.size != self.grid.size:
            raise ContractViolation(
                f"density has {vals.size} values, grid has {self.grid.size} cells"
            )
        if not np.all(np.isfinite(vals)):
            raise ContractViolation("density contains non-finite values")
        if np.any(vals <= 0):
            raise ContractViolation("density must be strictly positive")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, grid, func, time=0.0):
        return cls(grid, grid.sample(func), time)

    @classmethod
    def constant(cls, grid, value, time=0.0):
        return cls(grid, np.full(grid.size, float(value)), time)

    @property
    def mass(self):
        return float(self.grid.integrate(self.values))

    @property
    def lower(self):
        return float(self.values.min())

    @property
    def upper(self):
        return float(self.values.max())


@dataclass(frozen=True)
class ParabolicStepConfig:
    eps: float
    dt: float
    scheme: str = "backward_euler"

    def __post_init__(self):
        if not self.eps >= 0:
            raise ConfigurationError(f"must be non-negative, got {self.eps}", "eps")
        if not self.dt > 0:
            raise ConfigurationError(f"must be positive, got {self.dt}", "dt")
        if self.scheme != "backward_euler":
            raise ConfigurationError(f"unsupported scheme {self.scheme!r}", "scheme")


def regularize_initial_density(values, n):
    """Clamp to ``[1/n, n]`` and rescale back to the original mass."""
    if n < 1:
        raise ContractViolation("regularisation level must be at least 1")
    values = np.asarray(values, dtype=float)
    target = values.sum()
    if not target > 0:
        raise ContractViolation("initial density must have positive mass")
    clamped = np.clip(values, 1.0 / n, float(n))
    return clamped * (target / clamped.sum())


def face_velocities(coeffs, basis, grid):
    """Normal velocity on the faces of each axis; boundary faces are zero."""
    table = tabulate(basis, grid)
    coeffs = basis.check_coeffs(coeffs)
    out = []
    for b in range(grid.dim):
        shape = list(grid.shape)
        shape[b] += 1
        u = (coeffs @ table.face_normals[b]).reshape(shape)
        # no-slip: the sine modes vanish there, make it exact
        idx = [slice(None)] * grid.dim
        idx[b] = 0
        u[tuple(idx)] = 0.0
        idx[b] = -1
        u[tuple(idx)] = 0.0
        out.append(u)
    return out


def discrete_divergence(coeffs, basis, grid):
    """Flux divergence ``sum_b (u_b(right) - u_b(left)) / h`` per cell."""
    div = np.zeros(grid.shape)
    for b, u in enumerate(face_velocities(coeffs, basis, grid)):
        div += np.diff(u, axis=b) / grid.h
    return div.reshape(-1)


def _tridiagonal(grid, u, eps, dt):
    """Banded ``(3, N)`` form of the 1D backward-Euler system."""
    N = grid.cells
    h = grid.h
    up = np.maximum(u, 0.0)
    dn = np.minimum(u, 0.0)
    diff = eps * dt / h**2
    # couplings to the neighbour on the right / left of each cell
    right = np.full(N, diff)
    left = np.full(N, diff)
    right[-1] = 0.0
    left[0] = 0.0
    diag = 1.0 + right + left + dt / h * (up[1:] - dn[:-1])
    upper = -right - (-dt / h * dn[1:])  # row i, column i+1
    lower = -left - dt / h * up[:-1]  # row i, column i-1
    ab = np.zeros((3, N))
    ab[0, 1:] = upper[:-1]
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    return ab


def system_matrix(grid, faces, eps, dt):
    """Sparse ``I - eps dt L + dt A[u]`` for any dimension."""
    P = grid.size
    ids = np.arange(P).reshape(grid.shape)
    rows, cols, vals = [np.arange(P)], [np.arange(P)], [np.ones(P)]
    h = grid.h
    for b, u in enumerate(faces):
        lo = [slice(None)] * grid.dim
        hi = [slice(None)] * grid.dim
        lo[b] = slice(0, -1)
        hi[b] = slice(1, None)
        left_cells = ids[tuple(lo)].ravel()
        right_cells = ids[tuple(hi)].ravel()
        inner = [slice(None)] * grid.dim
        inner[b] = slice(1, -1)
        ui = u[tuple(inner)].ravel()
        up = dt / h * np.maximum(ui, 0.0)
        dn = dt / h * np.minimum(ui, 0.0)
        diff = np.full(ui.shape, eps * dt / h**2)
        # flux through an interior face leaves the left cell, enters the right one
        rows += [left_cells, left_cells, right_cells, right_cells]
        cols += [left_cells, right_cells, left_cells, right_cells]
        vals += [up + diff, dn - diff, -up - diff, -dn + diff]
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(P, P)
    )
    return mat.tocsr()


def advance_density(rho, coeffs, basis, cfg):
    """One backward-Euler step of the regularised continuity equation.

    Raises :class:`StepRejected` (suggesting half the step) if the linear
    solve fails or the new density is not strictly positive.
    """
    grid = rho.grid
    faces = face_velocities(coeffs, basis, grid)
    try:
        if grid.dim == 1:
            new = solve_banded((1, 1), _tridiagonal(grid, faces[0], cfg.eps, cfg.dt), rho.values)
        else:
            new = spsolve(system_matrix(grid, faces, cfg.eps, cfg.dt), rho.values)
    except (np.linalg.LinAlgError, ValueError, RuntimeError) as exc:
        raise StepRejected(f"density solve failed: {exc}", cfg.dt / 2) from exc
    if not np.all(np.isfinite(new)) or np.any(new <= 0):
        raise StepRejected("density lost positivity", cfg.dt / 2)
    return DensityField(grid, new, rho.time + cfg.dt)


def advance_with_halving(rho, coeffs, basis, cfg, min_dt=1e-12):
    """Advance by ``cfg.dt``, splitting into smaller steps after rejections."""
    target = rho.time + cfg.dt
    dt = cfg.dt
    while target - rho.time > 1e-14 * max(1.0, abs(target)):
        step = min(dt, target - rho.time)
        try:
            rho = advance_density(rho, coeffs, basis, ParabolicStepConfig(cfg.eps, step))
        except StepRejected as exc:
            dt = exc.suggested_dt
            if dt < min_dt:
                raise
    return DensityField(rho.grid, rho.values, target)


@dataclass
class DensityTrajectory:
    """Stored density snapshots; ``values`` has shape ``(K, cells)``."""

    grid: Grid
    times: np.ndarray
    values: np.ndarray
    initial_mass: float = field(init=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        self.initial_mass = float(self.grid.integrate(self.values[0]))

    def masses(self):
        return self.values @ self.grid.weights

    def field(self, k):
        return DensityField(self.grid, self.values[k], float(self.times[k]))


def evolve_density(rho0, velocity: Callable, basis, eps, dt, t_end, store_every=1):
    """Integrate the continuity equation for a prescribed velocity.

    ``velocity(t)`` returns Galerkin coefficients; the backward-Euler step
    ending at ``t`` uses ``velocity(t)``.
    """
    if not t_end > 0:
        raise ConfigurationError("final time must be positive", "t_end")
    steps = max(1, int(round(t_end / dt)))
    dt = t_end / steps
    cfg = ParabolicStepConfig(eps, dt)
    rho = rho0
    times, values = [rho0.time], [rho0.values]
    for j in range(1, steps + 1):
        rho = advance_with_halving(rho, velocity(rho0.time + j * dt), basis, cfg)
        if j % store_every == 0 or j == steps:
            times.append(rho.time)
            values.append(rho.values)
    return DensityTrajectory(rho0.grid, np.array(times), np.array(values))


def max_divergence(basis, coeff_series, grid, oversample=4):
    """``max |div u|`` over a series of coefficient vectors.

    Takes the larger of the analytic divergence sampled on a grid refined
    ``oversample`` times and the discrete flux divergence on ``grid``.
    """
    coeff_series = np.atleast_2d(np.asarray(coeff_series, dtype=float))
    fine = Grid(grid.dim, grid.cells * oversample)
    div_fine = coeff_series @ tabulate(basis, fine).divergence
    worst = float(np.max(np.abs(div_fine))) if div_fine.size else 0.0
    for c in coeff_series:
        worst = max(worst, float(np.max(np.abs(discrete_divergence(c, basis, grid)))))
    return worst


@dataclass(frozen=True)
class DensityBoundsReport:
    upper_initial: float
    lower_initial: float
    divergence_bound: float
    upper_slack: float  # min over times of envelope - max rho (>= 0 means pass)
    lower_slack: float  # min over times of min rho - envelope
    violations: int
    passed: bool


def density_bounds_check(trajectory, coeff_series, basis):
    """Check ``lower e^{-tK} <= rho(t) <= upper e^{tK}`` at every stored time.

    ``K`` bounds ``|div u|`` over the whole velocity series
    (see :func:`max_divergence`); ``upper``/``lower`` are the extreme initial
    values.  Times are measured from the first snapshot.
    """
    vals = np.asarray(trajectory.values)
    if vals.shape[0] == 0:
        raise ContractViolation("trajectory is empty")
    K = max_divergence(basis, coeff_series, trajectory.grid)
    top, bottom = float(vals[0].max()), float(vals[0].min())
    tau = np.asarray(trajectory.times) - trajectory.times[0]
    upper_env = top * np.exp(tau * K)
    lower_env = bottom * np.exp(-tau * K)
    up_gap = upper_env - vals.max(axis=1)
    lo_gap = vals.min(axis=1) - lower_env
    # round-off allowance relative to the density scale
    tol = 1e-12 * top
    violations = int(np.sum(up_gap < -tol) + np.sum(lo_gap < -tol))
    return DensityBoundsReport(
        top, bottom, K, float(up_gap.min()), float(lo_gap.min()), violations, violations == 0
    )


@dataclass(frozen=True)
class StabilityReport:
    numerator: float
    denominator: float
    ratio: float
    degenerate: bool


def velocity_w1inf(basis, coeffs, grid, oversample=4):
    """``max|u| + max|grad u|`` (Frobenius) sampled on a refined grid."""
    fine = Grid(grid.dim, grid.cells * oversample)
    table = tabulate(basis, fine)
    u = np.einsum("i,ipa->pa", coeffs, table.values)
    g = np.einsum("i,ipab->pab", coeffs, table.gradients)
    return float(np.max(np.linalg.norm(u, axis=-1)) + np.max(np.sqrt(np.sum(g * g, axis=(-2, -1)))))


def stability_gap(velocity1, velocity2, rho0, basis, eps, dt, t_end):
    """Measured Lipschitz constant of ``u -> rho[u]``.

    ``sup_t ||rho[u1] - rho[u2]||_L2 / sup_t ||u1 - u2||_W1,inf`` with both
    densities started from ``rho0``.  Identical velocities give a zero
    numerator and the report is flagged degenerate with ``ratio = nan``.
    """
    traj1 = evolve_density(rho0, velocity1, basis, eps, dt, t_end)
    traj2 = evolve_density(rho0, velocity2, basis, eps, dt, t_end)
    grid = rho0.grid
    diff = traj1.values - traj2.values
    numer = float(np.sqrt(np.max(diff**2 @ grid.weights)))
    denom = max(
        velocity_w1inf(basis, np.asarray(velocity1(t)) - np.asarray(velocity2(t)), grid)
        for t in traj1.times
    )
    if denom == 0.0:
        return StabilityReport(numer, 0.0, math.nan, True)
    return StabilityReport(numer, denom, numer / denom, False)
