"""Galerkin momentum dynamics coupled to the continuity solver.

The velocity ``u(t) = sum_i c_i(t) w_i`` solves the fixed-point problem

    c(tau) = M[rho(tau)]^{-1} (m0* + int_0^tau N[rho, u] ds)

on short time windows, where ``M`` is the density-weighted Gram matrix and
``N`` collects convection, viscous stress, pressure, and the artificial
viscosity correction tested against each mode.  ``rho = rho[u]`` comes from
:mod:`dissipative_flow.continuity`.  Each window is solved by Picard
iteration; windows are chained until the final time.
"""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .continuity import (
    DensityField,
    ParabolicStepConfig,
    advance_with_halving,
    velocity_w1inf,
)
from .exceptions import (
    ConfigurationError,
    ContractViolation,
    StepRejected,
    WindowContractionError,
)
from .rheology import stress_field
from .tensor_core import symmetrize, tabulate


def _density_values(rho, grid):
    vals = rho.values if isinstance(rho, DensityField) else np.asarray(rho, dtype=float)
    if vals.shape != (grid.size,):
        raise ContractViolation("density does not match the grid")
    return vals


@dataclass(frozen=True)
class MassOperator:
    """``M_ij = int rho w_i . w_j`` together with its Cholesky factor."""

    matrix: np.ndarray
    factor: tuple = field(repr=False)

    @property
    def size(self):
        return self.matrix.shape[0]

    def eigenvalues(self):
        return np.linalg.eigvalsh(self.matrix)


def assemble_mass(rho, basis, grid):
    """Density-weighted Gram matrix of the basis; refuses non-positive densities."""
    vals = _density_values(rho, grid)
    if np.any(vals <= 0):
        raise ContractViolation("mass operator needs a strictly positive density")
    W = tabulate(basis, grid).values
    mat = np.einsum("ipa,p,jpa->ij", W, vals * grid.cell_volume, W)
    mat = 0.5 * (mat + mat.T)
    try:
        factor = cho_factor(mat)
    except LinAlgError as exc:
        raise ContractViolation(f"mass operator is not positive definite: {exc}") from exc
    return MassOperator(mat, factor)


def mass_bound_constant(basis, grid):
    """``c(n)`` with ``||M[rho]||_2 <= c(n) ||rho||_L1`` for every density.

    ``u.M u = int rho |sum u_i w_i|^2 <= ||rho||_L1 |u|^2 max_x sum_i |w_i(x)|^2``,
    so the constant is the largest pointwise sum of squared mode values,
    taken over the quadrature points actually used.
    """
    W = tabulate(basis, grid).values
    return float(np.max(np.einsum("ipa,ipa->p", W, W)))


def apply_inverse(M, rhs):
    """Solve ``M x = rhs`` with the stored Cholesky factor."""
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape[0] != M.size:
        raise ContractViolation("right-hand side does not match the operator size")
    x = cho_solve(M.factor, rhs)
    resid = np.linalg.norm(M.matrix @ x - rhs)
    if resid > 1e-10 * max(np.linalg.norm(rhs), 1e-300) and np.linalg.norm(rhs) > 0:
        raise ContractViolation(f"mass solve residual {resid:.3e} exceeds tolerance")
    return x


def project_momentum(momentum, basis, grid):
    """``m0*_i = int m0 . w_i`` for a momentum field of shape ``(cells, d)``."""
    momentum = np.asarray(momentum, dtype=float).reshape(grid.size, grid.dim)
    W = tabulate(basis, grid).values
    return np.einsum("ipa,p,pa->i", W, grid.weights, momentum)


def density_gradient(values, grid):
    """Cell gradient of a density, ``(cells, d)``.

    Central differences inside, one-sided at the boundary cells.
    """
    field_ = np.asarray(values, dtype=float).reshape(grid.shape)
    grads = np.gradient(field_, grid.h, edge_order=1)
    if grid.dim == 1:
        grads = [grads]
    return np.stack([g.reshape(-1) for g in grads], axis=-1)


@dataclass(frozen=True)
class ForcingTerms:
    """The four contributions to ``<N[rho, u], w_i>``, each of shape ``(n,)``."""

    convective: np.ndarray
    viscous: np.ndarray
    pressure: np.ndarray
    eps_correction: np.ndarray

    @property
    def total(self):
        return self.convective + self.viscous + self.pressure + self.eps_correction


def assemble_forcing(rho, coeffs, potential, eps, a, basis, grid):
    """Quadrature of ``(rho u x u - S) : grad w_i + a rho div w_i - eps (grad rho . grad) u . w_i``.

    ``S`` is the gradient of ``potential`` at the symmetric velocity
    gradient.
    """
    vals = _density_values(rho, grid)
    coeffs = basis.check_coeffs(coeffs)
    tab = tabulate(basis, grid)
    wts = grid.weights
    u = np.einsum("i,ipa->pa", coeffs, tab.values)
    grad_u = np.einsum("i,ipab->pab", coeffs, tab.gradients)
    stress = stress_field(potential, symmetrize(grad_u))
    flux = (wts * vals)[:, None, None] * u[:, :, None] * u[:, None, :]
    convective = np.einsum("pab,ipab->i", flux, tab.gradients)
    viscous = -np.einsum("pab,ipab->i", wts[:, None, None] * stress, tab.gradients)
    pressure = a * tab.divergence @ (wts * vals)
    if eps > 0:
        grad_rho = density_gradient(vals, grid)
        transport = np.einsum("pb,pab->pa", grad_rho, grad_u)
        eps_term = -eps * np.einsum("pa,ipa->i", wts[:, None] * transport, tab.values)
    else:
        eps_term = np.zeros_like(convective)
    return ForcingTerms(convective, viscous, pressure, eps_term)


@dataclass(frozen=True)
class MomentumConfig:
    """Numerical knobs of the windowed Picard scheme.

    ``window_length=None`` selects ``min(remaining, 0.5 / (1 + K), last)``
    with ``K`` the ``W^{1,inf}`` size of the first iterate.
    """

    a: float = 1.0
    eps: float = 0.1
    window_length: float = None
    window_nodes: int = 16
    max_picard: int = 100
    picard_tol: float = 1e-9
    max_halvings: int = 12
    growth_limit: int = 3
    theta_floor: float = 1e-10

    def __post_init__(self):
        if not self.a > 0:
            raise ConfigurationError(f"must be positive, got {self.a}", "a")
        if not self.eps >= 0:
            raise ConfigurationError(f"must be non-negative, got {self.eps}", "eps")
        if self.window_length is not None and not self.window_length > 0:
            raise ConfigurationError("must be positive", "window_length")
        if self.window_nodes < 1:
            raise ConfigurationError("need at least one step per window", "window_nodes")
        if self.max_picard < 1:
            raise ConfigurationError("need at least one Picard iteration", "max_picard")
        if not self.picard_tol > 0:
            raise ConfigurationError("must be positive", "picard_tol")


@dataclass
class MomentumState:
    """Solution on one window: node times, coefficients, and densities."""

    window: int
    times: np.ndarray
    coeffs: np.ndarray  # (J + 1, n)
    rho: np.ndarray  # (J + 1, cells)
    m_star: np.ndarray

    @property
    def length(self):
        return float(self.times[-1] - self.times[0])


@dataclass(frozen=True)
class ContractionReport:
    window: int
    t_start: float
    length: float
    iterations: int
    changes: tuple
    theta: float
    converged: bool
    max_w1inf: float


def _density_path(rho_start, coeffs, basis, grid, eps, dt, t0):
    rho = DensityField(grid, rho_start, t0)
    out = [rho.values]
    cfg = ParabolicStepConfig(eps, dt)
    for c in coeffs[1:]:
        rho = advance_with_halving(rho, c, basis, cfg)
        out.append(rho.values)
    return np.array(out)


def _picard_map(coeffs, rho_path, m_star, potential, cfg, basis, grid, dt):
    forcing = np.array(
        [
            assemble_forcing(r, c, potential, cfg.eps, cfg.a, basis, grid).total
            for r, c in zip(rho_path, coeffs)
        ]
    )
    integral = cumulative_trapezoid(forcing, dx=dt, axis=0, initial=0.0)
    return np.array(
        [apply_inverse(assemble_mass(r, basis, grid), m_star + I) for r, I in zip(rho_path, integral)]
    )


def _contraction_factor(changes, floor):
    ratios = [
        changes[k] / changes[k - 1]
        for k in range(1, len(changes))
        if changes[k - 1] > floor and changes[k] > floor
    ]
    return max(ratios) if ratios else 0.0


def picard_window(rho_start, m_star, t0, length, potential, cfg, basis, grid, window=0):
    """Solve one window by Picard iteration.

    Returns ``(state, report)``.  Raises :class:`WindowContractionError` if
    the iteration diverges (non-finite values, ``growth_limit`` consecutive
    increases) or does not reach ``picard_tol`` within ``max_picard`` steps.
    Density positivity failures propagate as :class:`StepRejected`.
    """
    J = cfg.window_nodes
    dt = length / J
    times = t0 + dt * np.arange(J + 1)
    c0 = apply_inverse(assemble_mass(rho_start, basis, grid), m_star)
    coeffs = np.tile(c0, (J + 1, 1))
    changes = []
    growth = 0
    converged = False
    for _ in range(cfg.max_picard):
        rho_path = _density_path(rho_start, coeffs, basis, grid, cfg.eps, dt, t0)
        new = _picard_map(coeffs, rho_path, m_star, potential, cfg, basis, grid, dt)
        if not np.all(np.isfinite(new)):
            raise WindowContractionError("Picard iterate is not finite", t0)
        change = float(np.max(np.abs(new - coeffs)))
        if changes and change > changes[-1]:
            growth += 1
        else:
            growth = 0
        changes.append(change)
        coeffs = new
        if change <= cfg.picard_tol:
            converged = True
            break
        if growth >= cfg.growth_limit:
            raise WindowContractionError(
                f"Picard changes grew {growth} times in a row on a window of length {length:.3e}",
                t0,
            )
    if not converged:
        raise WindowContractionError(
            f"no convergence within {cfg.max_picard} Picard iterations", t0
        )
    # densities consistent with the accepted velocities
    rho_path = _density_path(rho_start, coeffs, basis, grid, cfg.eps, dt, t0)
    K = max(velocity_w1inf(basis, c, grid) for c in coeffs)
    report = ContractionReport(
        window, float(t0), float(length), len(changes), tuple(changes),
        _contraction_factor(changes, cfg.theta_floor), converged, K,
    )
    return MomentumState(window, times, coeffs, rho_path, np.asarray(m_star, dtype=float)), report


@dataclass
class Trajectory:
    """Discrete solution ``(rho, u)`` at the window nodes.

    ``rho`` has shape ``(K, cells)``, ``coeffs`` shape ``(K, n)``.
    """

    grid: object
    basis: object
    times: np.ndarray
    rho: np.ndarray
    coeffs: np.ndarray
    potential: object
    a: float
    eps: float
    m0_star: np.ndarray
    reports: list = field(default_factory=list)

    @property
    def max_dt(self):
        return float(np.max(np.diff(self.times))) if self.times.size > 1 else 0.0

    def velocity(self, k=None):
        W = tabulate(self.basis, self.grid).values
        if k is None:
            return np.einsum("ki,ipa->kpa", self.coeffs, W)
        return np.einsum("i,ipa->pa", self.coeffs[k], W)

    def momentum(self):
        return self.rho[:, :, None] * self.velocity()

    def masses(self):
        return self.rho @ self.grid.weights

    def sample_at(self, times):
        """Linear interpolation of densities and coefficients in time."""
        times = np.asarray(times, dtype=float)
        if times.min() < self.times[0] - 1e-12 or times.max() > self.times[-1] + 1e-12:
            raise ContractViolation("requested times outside the trajectory")
        idx = np.clip(np.searchsorted(self.times, times, side="right") - 1, 0, self.times.size - 2)
        t0, t1 = self.times[idx], self.times[idx + 1]
        w = ((times - t0) / (t1 - t0))[:, None]
        rho = (1 - w) * self.rho[idx] + w * self.rho[idx + 1]
        coeffs = (1 - w) * self.coeffs[idx] + w * self.coeffs[idx + 1]
        return rho, coeffs


def auto_window_length(remaining, w1inf, previous=None):
    length = min(remaining, 0.5 / (1.0 + w1inf))
    if previous is not None:
        length = min(length, previous)
    return length


def windowed_integrate(rho0, m0_star, potential, t_end, cfg, basis, grid):
    """Chain Picard windows from time 0 to ``t_end``.

    A window that fails to contract (or loses density positivity) is retried
    with half the length, up to ``cfg.max_halvings`` times; after that the
    failure is raised as :class:`WindowContractionError` carrying the time
    reached.
    """
    if not t_end > 0:
        raise ConfigurationError("final time must be positive", "t_end")
    rho_vals = _density_values(rho0, grid)
    m_star = np.asarray(m0_star, dtype=float)
    t = 0.0
    times, rhos, coeffs, reports = [0.0], [rho_vals], [], []
    previous = None
    window = 0
    while t_end - t > 1e-12 * t_end:
        remaining = t_end - t
        if cfg.window_length is not None:
            length = min(cfg.window_length, remaining)
        else:
            c_start = apply_inverse(assemble_mass(rho_vals, basis, grid), m_star)
            length = auto_window_length(remaining, velocity_w1inf(basis, c_start, grid), previous)
        for _ in range(cfg.max_halvings + 1):
            try:
                state, report = picard_window(
                    rho_vals, m_star, t, length, potential, cfg, basis, grid, window
                )
                break
            except (WindowContractionError, StepRejected):
                length *= 0.5
        else:
            raise WindowContractionError(
                f"window failed after {cfg.max_halvings} halvings", t
            )
        if not coeffs:
            coeffs.append(state.coeffs[0])
        times.extend(state.times[1:])
        rhos.extend(state.rho[1:])
        coeffs.extend(state.coeffs[1:])
        reports.append(report)
        rho_vals = state.rho[-1]
        m_star = assemble_mass(rho_vals, basis, grid).matrix @ state.coeffs[-1]
        t = float(state.times[-1])
        if math.isclose(t, t_end, rel_tol=1e-12):
            t = t_end
            times[-1] = t_end
        previous = length if cfg.window_length is None else None
        window += 1
    return Trajectory(
        grid, basis, np.array(times), np.array(rhos), np.array(coeffs), potential,
        cfg.a, cfg.eps, np.asarray(m0_star, dtype=float), reports,
    )


def galerkin_residual(traj):
    """A-posteriori residual of the projected momentum identity per mode.

    Recomputes ``int rho u . w_i`` at every node and compares its change with
    the trapezoid integral of the forcing; returns ``(K, n)`` residuals.
    """
    grid, basis = traj.grid, traj.basis
    W = tabulate(basis, grid).values
    u = np.einsum("ki,ipa->kpa", traj.coeffs, W)
    proj = np.einsum("kp,kpa,ipa->ki", traj.rho * grid.cell_volume, u, W)
    forcing = np.array(
        [
            assemble_forcing(r, c, traj.potential, traj.eps, traj.a, basis, grid).total
            for r, c in zip(traj.rho, traj.coeffs)
        ]
    )
    integral = cumulative_trapezoid(forcing, traj.times, axis=0, initial=0.0)
    return proj - traj.m0_star - integral
