import dataclasses

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from dissipative_flow.continuity import DensityField
from dissipative_flow.exceptions import ConfigurationError, ContractViolation
from dissipative_flow.momentum import (
    MomentumConfig,
    apply_inverse,
    assemble_forcing,
    assemble_mass,
    galerkin_residual,
    mass_bound_constant,
    picard_window,
    windowed_integrate,
)
from dissipative_flow.rheology import PotentialSpec, mollify
from dissipative_flow.scenario import preset
from dissipative_flow.tensor_core import GalerkinBasis, Grid

QUAD1 = mollify(PotentialSpec.quadratic(0.02, 0.0, 1), 0.1)


def cosine_density(grid):
    return DensityField.from_function(grid, lambda x: 1 + 0.5 * np.cos(np.pi * x[:, 0]))


def test_mass_operator_examples():
    grid, basis = Grid(1, 64), GalerkinBasis(1, 4)
    assert np.allclose(assemble_mass(DensityField.constant(grid, 1.0), basis, grid).matrix,
                       np.eye(4), atol=1e-8)
    assert np.allclose(assemble_mass(DensityField.constant(grid, 2.0), basis, grid).matrix,
                       2 * np.eye(4), atol=1e-8)
    M = assemble_mass(cosine_density(Grid(1, 256)), GalerkinBasis(1, 2), Grid(1, 256)).matrix
    oracle, _ = quad(lambda x: (1 + 0.5 * np.cos(np.pi * x)) * 2 * np.sin(np.pi * x)
                     * np.sin(2 * np.pi * x), 0, 1)
    assert M[0, 1] == pytest.approx(oracle, abs=1e-8)


def test_apply_inverse_examples(rng):
    grid, basis = Grid(1, 64), GalerkinBasis(1, 6)
    e1 = np.eye(6)[0]
    assert np.allclose(apply_inverse(assemble_mass(DensityField.constant(grid, 1.0), basis, grid),
                                     e1), e1)
    assert np.allclose(apply_inverse(assemble_mass(DensityField.constant(grid, 2.0), basis, grid),
                                     e1), 0.5 * e1)
    rho = DensityField(grid, 0.5 + rng.random(64))
    M = assemble_mass(rho, basis, grid)
    rhs = rng.normal(size=6)
    x = apply_inverse(M, rhs)
    ref = np.linalg.solve(M.matrix, rhs)
    assert np.linalg.norm(x - ref) <= 1e-10 * np.linalg.norm(ref)


def test_mass_operator_rejects_empty_cells():
    grid, basis = Grid(1, 16), GalerkinBasis(1, 2)
    with pytest.raises(ContractViolation):
        assemble_mass(np.r_[np.zeros(1), np.ones(15)], basis, grid)


def test_forcing_examples():
    grid, basis = Grid(1, 128), GalerkinBasis(1, 2)
    rest = assemble_forcing(DensityField.constant(grid, 3.0), np.zeros(2), QUAD1, 0.1, 1.0,
                            basis, grid)
    assert np.allclose(rest.total, 0.0, atol=1e-12)
    f = assemble_forcing(DensityField.constant(grid, 1.0), np.array([1.0, 0.0]), QUAD1, 0.0, 1.0,
                         basis, grid)
    # S = mu D for the quadratic potential, int |D w_1|^2 = pi^2
    assert f.viscous[0] == pytest.approx(-0.02 * np.pi**2, rel=1e-9)
    assert f.eps_correction[0] == 0.0
    fine = Grid(1, 1024)
    p = assemble_forcing(cosine_density(fine), np.zeros(2), QUAD1, 0.0, 2.0, basis, fine).pressure
    for k in (1, 2):
        oracle, _ = quad(lambda x: 2.0 * (1 + 0.5 * np.cos(np.pi * x)) * np.sqrt(2) * k * np.pi
                         * np.cos(k * np.pi * x), 0, 1)
        assert p[k - 1] == pytest.approx(oracle, rel=1e-6, abs=1e-12)


def test_rest_window_converges_immediately():
    grid, basis = Grid(1, 32), GalerkinBasis(1, 4)
    cfg = MomentumConfig(a=1.0, eps=0.1)
    state, rep = picard_window(np.full(32, 2.0), np.zeros(4), 0.0, 0.1, QUAD1, cfg, basis, grid)
    assert rep.iterations == 1 and rep.converged
    assert np.allclose(state.coeffs, 0.0, atol=1e-14) and np.allclose(state.rho, 2.0)


def test_theta_shrinks_with_window():
    sc = preset("single_mode")
    cfg = sc.momentum_config()
    thetas = []
    for length in (0.2, 0.1, 0.05):
        _, rep = picard_window(sc.initial_density(), sc.m0_star(), 0.0, length, sc.potential(),
                               cfg, sc.basis(), sc.grid())
        thetas.append(rep.theta)
    assert thetas[0] < 1 and thetas[0] > thetas[1] > thetas[2]


def test_rest_trajectory_stays_at_rest():
    sc = preset("rest")
    traj = windowed_integrate(sc.initial_density(), sc.m0_star(), sc.potential(), 0.5,
                              sc.momentum_config(), sc.basis(), sc.grid())
    assert np.allclose(traj.coeffs, 0.0, atol=1e-14)
    assert np.allclose(traj.rho, 2.0, rtol=0, atol=1e-12)


def test_window_partition_independence():
    sc = preset("single_mode").with_params(t_end=1.0)
    ends = []
    for length, nodes in ((0.125, 16), (0.0625, 8)):
        cfg = dataclasses.replace(sc.momentum_config(), window_length=length, window_nodes=nodes)
        traj = windowed_integrate(sc.initial_density(), sc.m0_star(), sc.potential(), 1.0, cfg,
                                  sc.basis(), sc.grid())
        assert np.max(np.abs(galerkin_residual(traj))) <= 1e-6
        ends.append(np.r_[traj.coeffs[-1], traj.rho[-1]])
    assert np.max(np.abs(ends[0] - ends[1])) <= 1e-6


def test_config_validation():
    with pytest.raises(ConfigurationError, match="eps"):
        MomentumConfig(eps=-1.0)
    with pytest.raises(ConfigurationError, match="a"):
        MomentumConfig(a=0.0)


@given(st.floats(0.2, 5.0), st.integers(0, 1000))
def test_mass_matrix_is_spd_and_linear(scale, seed):
    rng = np.random.default_rng(seed)
    grid, basis = Grid(1, 32), GalerkinBasis(1, 5)
    rho = 0.1 + rng.random(32)
    M1 = assemble_mass(rho, basis, grid).matrix
    M2 = assemble_mass(scale * rho, basis, grid).matrix
    assert np.allclose(M2, scale * M1, rtol=1e-12, atol=1e-14)
    assert np.linalg.eigvalsh(M1).min() > 0


@given(st.integers(0, 1000))
def test_mass_norm_bounded_by_measured_constant(seed):
    rng = np.random.default_rng(seed)
    grid, basis = Grid(1, 64), GalerkinBasis(1, 6)
    rho = 1e-3 + rng.random(64) ** 4
    M = assemble_mass(rho, basis, grid)
    c = mass_bound_constant(basis, grid)
    assert np.linalg.eigvalsh(M.matrix).max() <= c * grid.integrate(rho) * (1 + 1e-12)
    # each sine mode is at most sqrt 2 in size
    assert c <= 2 * basis.n_modes
