"""Estimator-style front end for the coupled Galerkin / continuity solver."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .continuity import regularize_initial_density
from .exceptions import ConfigurationError
from .momentum import MomentumConfig, project_momentum, windowed_integrate
from .rheology import MollifierSpec, PotentialSpec, mollify
from .tensor_core import GalerkinBasis, Grid


class GalerkinFlowSolver(BaseEstimator):
    """Integrate the regularised compressible system from given initial data.

    ``fit(X)`` takes the initial state sampled at the cell centres, one row
    per cell and columns ``[rho, m_1, ..., m_d]``, and stores the computed
    trajectory.  ``predict(times)`` returns velocity coefficients linearly
    interpolated at the requested times.  Parameters mirror the scenario
    entries so that sweeps can use :func:`sklearn.base.clone` and
    ``set_params``.

    Attributes
    ----------
    trajectory_ : Trajectory
    contraction_reports_ : list of ContractionReport
    potential_ : MollifiedPotential
    """

    def __init__(self, dim=1, cells=64, n_modes=8, t_end=0.5, a=1.0, eps=0.05,
                 potential=None, delta=0.1, mollifier_nodes=15, window_length=None,
                 window_nodes=16, max_picard=100, picard_tol=1e-9, regularize=True):
        self.dim = dim
        self.cells = cells
        self.n_modes = n_modes
        self.t_end = t_end
        self.a = a
        self.eps = eps
        self.potential = potential
        self.delta = delta
        self.mollifier_nodes = mollifier_nodes
        self.window_length = window_length
        self.window_nodes = window_nodes
        self.max_picard = max_picard
        self.picard_tol = picard_tol
        self.regularize = regularize

    def _validate_params(self):
        if self.dim not in (1, 2):
            raise ConfigurationError(f"must be 1 or 2, got {self.dim}", "dim")
        if not self.t_end > 0:
            raise ConfigurationError("must be positive", "t_end")
        spec = self.potential if self.potential is not None else PotentialSpec.quadratic(0.02, 0.0, self.dim)
        if not isinstance(spec, PotentialSpec):
            raise ConfigurationError("expected a PotentialSpec", "potential")
        if spec.dim != self.dim:
            raise ConfigurationError("potential dimension differs from dim", "potential")
        return spec

    def fit(self, X, y=None):
        spec = self._validate_params()
        grid = Grid(self.dim, self.cells)
        basis = GalerkinBasis(self.dim, self.n_modes)
        X = check_array(X, dtype=float, ensure_min_features=self.dim + 1)
        if X.shape != (grid.size, self.dim + 1):
            raise ConfigurationError(
                f"expected initial data of shape {(grid.size, self.dim + 1)}, got {X.shape}", "X"
            )
        rho0 = X[:, 0]
        if self.regularize:
            rho0 = regularize_initial_density(rho0, self.n_modes)
        m_star = project_momentum(X[:, 1:], basis, grid)
        cfg = MomentumConfig(
            a=self.a, eps=self.eps, window_length=self.window_length,
            window_nodes=self.window_nodes, max_picard=self.max_picard,
            picard_tol=self.picard_tol,
        )
        self.potential_ = mollify(spec, MollifierSpec(self.delta, self.mollifier_nodes))
        self.grid_ = grid
        self.basis_ = basis
        self.n_features_in_ = X.shape[1]
        self.trajectory_ = windowed_integrate(rho0, m_star, self.potential_, self.t_end, cfg, basis, grid)
        self.contraction_reports_ = self.trajectory_.reports
        return self

    def predict(self, times):
        """Velocity coefficients at ``times``, shape ``(len(times), n_modes)``."""
        check_is_fitted(self, "trajectory_")
        times = np.atleast_1d(np.asarray(times, dtype=float))
        _, coeffs = self.trajectory_.sample_at(times)
        return coeffs

    def predict_density(self, times):
        check_is_fitted(self, "trajectory_")
        rho, _ = self.trajectory_.sample_at(np.atleast_1d(np.asarray(times, dtype=float)))
        return rho


def solver_for(scenario, **overrides):
    """Estimator configured from a :class:`~dissipative_flow.scenario.Scenario`."""
    params = dict(
        dim=scenario.dim, cells=scenario.cells, n_modes=scenario.modes, t_end=scenario.t_end,
        a=scenario.a, eps=scenario.eps, potential=scenario.spec(), delta=scenario.delta,
        mollifier_nodes=scenario.mollifier_nodes, window_length=scenario.window_length,
        window_nodes=scenario.window_nodes, max_picard=scenario.max_iterations,
        picard_tol=scenario.tolerance,
        # the scenario already clamps its initial density
        regularize=False,
    )
    params.update(overrides)
    return GalerkinFlowSolver(**params)
