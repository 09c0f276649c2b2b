import numpy as np
import pytest
from hypothesis import given, strategies as st
from sklearn.base import clone

from dissipative_flow.exceptions import ConfigurationError
from dissipative_flow.scenario import PRESETS, Scenario, preset
from dissipative_flow.solver import GalerkinFlowSolver, solver_for


def test_ini_roundtrip_is_canonical():
    for name in PRESETS:
        sc = preset(name)
        again = Scenario.from_ini(sc.to_ini())
        assert again == sc and again.digest() == sc.digest()


@pytest.mark.parametrize("text,field", [
    ("[continuity]\neps = -1\n", "continuity.eps"),
    ("[scenario]\ncells = 4\nmodes = 8\n", "scenario.cells"),
    ("[rheology]\nmu = zero\n", "rheology.mu"),
    ("[rheology]\nspeed = 3\n", "rheology.speed"),
    ("[density]\nprofile = lumpy\n", "density.profile"),
])
def test_validation_names_the_field(text, field):
    with pytest.raises(ConfigurationError) as info:
        Scenario.from_ini(text)
    assert info.value.field == field and field in str(info.value)


@given(st.integers(0, 2**63))
def test_random_initial_density_is_seeded_and_admissible(seed):
    sc = Scenario(density_profile="random_smooth", seed=seed, modes=8)
    rho1, rho2 = sc.initial_density(), sc.initial_density()
    assert np.array_equal(rho1, rho2)
    assert rho1.min() >= 1 / 8 - 1e-12 and rho1.max() <= 8 + 1e-12


def test_estimator_follows_sklearn_conventions():
    sc = preset("single_mode").with_params(t_end=0.1)
    est = solver_for(sc)
    twin = clone(est)
    assert twin.get_params()["n_modes"] == 8
    est.fit(sc.initial_data())
    coeffs = est.predict([0.0, 0.05, 0.1])
    assert coeffs.shape == (3, 8)
    assert np.allclose(coeffs[0], est.trajectory_.coeffs[0])
    assert est.predict_density([0.1]).shape == (1, 64)
    with pytest.raises(ConfigurationError):
        GalerkinFlowSolver(cells=64).fit(np.ones((10, 2)))
