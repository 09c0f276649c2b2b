"""Pressure potential and the energy ledger of a computed trajectory.

The audit deliberately re-derives every term from the stored densities and
coefficients with its own quadrature code instead of reusing solver
internals, so a PASS is an actual consistency check.
"""

from dataclasses import dataclass
import math

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .exceptions import ContractViolation
from .rheology import conjugate_values, quadratic_conjugate, stress_field
from .tensor_core import GalerkinBasis, symmetrize


def pressure_potential(rho, a):
    """``P(rho) = a rho log rho`` with ``P(0) = 0``; negative densities raise."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise ValueError("pressure potential is undefined for negative density")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(rho > 0, a * rho * np.log(np.where(rho > 0, rho, 1.0)), 0.0)
    return out if out.ndim else float(out)


def pressure_ode_residual(rho, a, h=1e-6):
    """``rho P'(rho) - P(rho) - a rho`` with ``P'`` by central differences."""
    dP = (pressure_potential(rho + h, a) - pressure_potential(rho - h, a)) / (2 * h)
    return rho * dP - pressure_potential(rho, a) - a * rho


def kinetic_energy(rho, m, weights):
    """``int |m|^2 / (2 rho)`` with the convention ``0/0 = 0``.

    ``rho`` has shape ``(cells,)``, ``m`` shape ``(cells, d)``.  A cell with
    zero density but non-zero momentum makes the energy infinite.
    """
    rho = np.asarray(rho, dtype=float)
    m = np.asarray(m, dtype=float).reshape(rho.shape[0], -1)
    if np.any(rho < 0):
        raise ContractViolation("density must be non-negative")
    m2 = np.sum(m * m, axis=1)
    empty = rho == 0
    if np.any(empty & (m2 > 0)):
        return math.inf
    dens = np.where(empty, 0.0, m2 / np.where(empty, 1.0, rho))
    return float(0.5 * np.dot(weights, dens))


def _fields(traj):
    """Velocity and its gradient at every node, evaluated from the modes directly."""
    centers = traj.grid.centers
    values = traj.basis.values(centers)
    grads = traj.basis.gradients(centers)
    u = np.einsum("ki,ipa->kpa", traj.coeffs, values)
    grad_u = np.einsum("ki,ipab->kpab", traj.coeffs, grads)
    return u, grad_u


def _rho_gradient(values, grid):
    """Central differences inside, one-sided at the two boundary cells of each axis."""
    f = values.reshape((-1,) + grid.shape)
    out = []
    for b in range(grid.dim):
        ax = b + 1
        g = np.empty_like(f)
        inner = [slice(None)] * f.ndim
        inner[ax] = slice(1, -1)
        up = [slice(None)] * f.ndim
        up[ax] = slice(2, None)
        dn = [slice(None)] * f.ndim
        dn[ax] = slice(None, -2)
        g[tuple(inner)] = (f[tuple(up)] - f[tuple(dn)]) / (2 * grid.h)
        for edge, (i, j) in ((0, (1, 0)), (-1, (-1, -2))):
            e = [slice(None)] * f.ndim
            e[ax] = edge
            p = [slice(None)] * f.ndim
            p[ax] = i
            q = [slice(None)] * f.ndim
            q[ax] = j
            g[tuple(e)] = (f[tuple(p)] - f[tuple(q)]) / grid.h
        out.append(g.reshape(f.shape[0], -1))
    return np.stack(out, axis=-1)


@dataclass
class EnergyLedger:
    """Per-node energy accounting; residual = energy + dissipation - initial."""

    times: np.ndarray
    kinetic: np.ndarray
    potential: np.ndarray
    visc_dissipation: np.ndarray
    art_dissipation: np.ndarray
    residual: np.ndarray
    initial_energy: float
    tolerance: float
    passed: bool
    dt: float
    h: float

    @property
    def total(self):
        return self.kinetic + self.potential

    def rows(self):
        return np.column_stack(
            [self.times, self.kinetic, self.potential, self.visc_dissipation,
             self.art_dissipation, self.residual]
        )


def energy_audit(traj, c_audit=10.0, slack=1e-12):
    """Energy ledger and verdict for a trajectory.

    PASS iff ``residual(t) <= c_audit (dt + h^2) |E0|`` at every node and
    both dissipation accumulators are non-negative and non-decreasing.  A
    further ``slack`` (relative to ``max(1, |E0|)``) absorbs round-off so
    that exactly conservative runs are not rejected by the last bit.
    """
    grid = traj.grid
    w = grid.weights
    u, grad_u = _fields(traj)
    rho = traj.rho
    kinetic = 0.5 * np.einsum("p,kp,kpa,kpa->k", w, rho, u, u)
    potential = pressure_potential(rho, traj.a) @ w
    D = symmetrize(grad_u)
    S = stress_field(traj.potential, D)
    visc_rate = np.einsum("p,kpab,kpab->k", w, S, grad_u)
    grad_rho = _rho_gradient(rho, grid)
    art_rate = traj.eps * np.einsum("p,kp,kpb->k", w, traj.a / rho, grad_rho**2)
    visc = cumulative_trapezoid(visc_rate, traj.times, initial=0.0)
    art = cumulative_trapezoid(art_rate, traj.times, initial=0.0)
    E0 = float(kinetic[0] + potential[0])
    residual = kinetic + potential + visc + art - E0
    dt = traj.max_dt
    tol = c_audit * (dt + grid.h**2) * abs(E0)
    floor = slack * max(1.0, abs(E0))
    monotone = (
        np.all(visc >= -floor) and np.all(art >= -floor)
        and np.all(np.diff(visc) >= -floor) and np.all(np.diff(art) >= -floor)
    )
    passed = bool(np.all(residual <= tol + floor) and monotone)
    return EnergyLedger(
        traj.times, kinetic, potential, visc, art, residual, E0, tol, passed, dt, grid.h
    )


def fenchel_young_gap(potential, grad_u, weights):
    """``int S:D - int [F(D) + F*(S)]`` for ``S`` the selected stress at ``D``.

    Zero up to conjugate accuracy because ``S`` is the gradient of ``F``.
    """
    D = symmetrize(grad_u)
    S = stress_field(potential, D)
    if getattr(potential, "is_quadratic", False):
        spec = getattr(potential, "spec", potential)
        conj = quadratic_conjugate(spec, S)
    else:
        conj = conjugate_values(potential, S)
    work = np.sum(S * D, axis=(-2, -1))
    return float(weights @ (work - potential.values(D) - conj))


def heat_flow_trajectory(density_traj, basis, potential, eps, a):
    """Wrap a density-only run (``u = 0``) so it can be audited."""
    from .momentum import Trajectory

    n = basis.n_modes if isinstance(basis, GalerkinBasis) else int(basis)
    coeffs = np.zeros((density_traj.times.size, n))
    return Trajectory(
        density_traj.grid, basis, density_traj.times, density_traj.values, coeffs,
        potential, a, eps, np.zeros(n),
    )
