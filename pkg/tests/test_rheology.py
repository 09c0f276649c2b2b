import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from dissipative_flow.exceptions import ConfigurationError, ConjugateDivergenceError
from dissipative_flow.rheology import (
    MollifierSpec,
    PotentialSpec,
    biconjugate,
    coercivity_check,
    convexity_violation,
    eval_potential,
    fenchel_conjugate,
    fenchel_young_residual,
    mollify,
    quadratic_conjugate,
    stress_select,
    superlinearity_probe,
)
from dissipative_flow.tensor_core import SymTensor

QUAD2 = PotentialSpec.quadratic(1.0, 0.0, 2)
NORM2 = PotentialSpec.custom("frobenius_norm", dim=2)


def test_eval_potential_examples():
    assert eval_potential(QUAD2, SymTensor.zeros(2)) == 0.0
    assert eval_potential(QUAD2, SymTensor.identity(2)) == pytest.approx(1.0)
    cubic = PotentialSpec.power_law(1.0, 3.0, dim=1)
    assert eval_potential(cubic, SymTensor.from_matrix([[2.0]])) == pytest.approx(8.0 / 3.0)


def test_spec_validation_names_field():
    with pytest.raises(ConfigurationError, match="mu"):
        PotentialSpec.quadratic(-1.0, 0.0, 2)


def test_conjugate_examples():
    res = fenchel_conjugate(QUAD2, SymTensor.diag(2.0, 0.0))
    assert res.saturated and res.value == pytest.approx(2.0, abs=1e-6)
    for spec in (QUAD2, NORM2, PotentialSpec.power_law(1.0, 1.5, dim=2)):
        assert fenchel_conjugate(spec, SymTensor.zeros(2)).value == pytest.approx(0.0, abs=1e-12)
    div = fenchel_conjugate(NORM2, SymTensor.diag(2.0, 0.0))
    assert not div.saturated and math.isinf(div.value)
    with pytest.raises(ConjugateDivergenceError):
        fenchel_conjugate(NORM2, SymTensor.diag(2.0, 0.0), strict=True)
    # inside the unit ball the conjugate of the norm is the indicator, i.e. zero
    assert fenchel_conjugate(NORM2, SymTensor.diag(0.5, 0.0)).value == pytest.approx(0.0, abs=1e-9)


def test_power_law_conjugate_closed_form():
    spec = PotentialSpec.power_law(1.0, 3.0, dim=1)
    qp = 1.5
    res = fenchel_conjugate(spec, SymTensor.from_matrix([[2.0]]))
    assert res.value == pytest.approx(2.0**qp / qp, rel=1e-6)


@given(arrays(float, (3,), elements=st.floats(-5, 5)))
def test_quadratic_conjugate_numeric_matches_closed_form(z):
    spec = PotentialSpec.quadratic(0.7, 0.3, 2)
    S = SymTensor.from_iso(z, 2)
    assert fenchel_conjugate(spec, S).value == pytest.approx(
        float(quadratic_conjugate(spec, S)), rel=1e-6, abs=1e-7
    )


def test_mollify_examples():
    f = mollify(QUAD2, MollifierSpec(0.1))
    assert f(SymTensor.identity(2)) == pytest.approx(1.0, abs=1e-12)
    assert f(SymTensor.zeros(2)) == pytest.approx(0.0, abs=1e-12)
    # the numerical convolution agrees with the closed form
    g = mollify(QUAD2, MollifierSpec(0.1), analytic=False)
    assert g(SymTensor.identity(2)) == pytest.approx(1.0, abs=1e-6)
    spec = PotentialSpec.power_law(1.0, 1.5, dim=2)
    D = SymTensor.diag(0.3, -0.2)
    errs = [abs(mollify(spec, dl)(D) - spec(D)) for dl in (0.2, 0.1, 0.05)]
    assert errs[0] > errs[1] > errs[2]


def test_stress_select_examples():
    f = mollify(QUAD2, 0.1)
    assert np.allclose(stress_select(f, SymTensor.diag(1.0, 1.0)).matrix(), np.eye(2))
    assert np.allclose(stress_select(f, SymTensor.zeros(2)).matrix(), 0.0)
    cubic = mollify(PotentialSpec.power_law(1.0, 3.0, dim=1), 1e-3, analytic=False)
    assert stress_select(cubic, SymTensor.from_matrix([[2.0]])).matrix()[0, 0] == pytest.approx(
        4.0, rel=1e-4
    )
    exact = PotentialSpec.power_law(1.0, 3.0, dim=1).gradient(np.array([[2.0]]))
    assert float(exact[0, 0]) == pytest.approx(4.0)


def test_fenchel_young_examples():
    D = SymTensor.diag(1.0, 0.0)
    assert fenchel_young_residual(QUAD2, D, D) == pytest.approx(0.0, abs=1e-6)
    assert fenchel_young_residual(QUAD2, SymTensor.zeros(2), SymTensor.zeros(2)) == pytest.approx(
        0.0, abs=1e-12
    )
    assert fenchel_young_residual(QUAD2, 2.0 * D, D) == pytest.approx(0.5, abs=1e-6)


def test_coercivity_examples():
    assert coercivity_check(QUAD2, 0.5, 0.0, 2.0).passed
    one_d = PotentialSpec.quadratic(1.0, 0.0, 1)
    assert coercivity_check(one_d, 123.0, 0.0, 2.0).passed
    spec = PotentialSpec.power_law(1.0, 1.5, dim=2)
    assert coercivity_check(spec, 1.0 / 1.5, 0.0, 1.5).passed
    assert not coercivity_check(QUAD2, 2.0, 0.0, 2.0).passed


def test_superlinearity_examples():
    e = SymTensor.diag(1.0, 0.0)
    radii = [1.0, 2.0, 4.0]
    assert np.allclose(superlinearity_probe(QUAD2, e, radii), np.array(radii) / 2, rtol=1e-6)
    norm = superlinearity_probe(NORM2, e, [0.5, 2.0, 4.0])
    assert norm[0] == pytest.approx(0.0, abs=1e-9)
    assert np.all(np.isinf(norm[1:]))


def test_biconjugate_recovers_quadratic():
    one_d = PotentialSpec.quadratic(1.0, 0.0, 1)
    res = biconjugate(one_d, SymTensor.from_matrix([[0.7]]))
    assert res.value == pytest.approx(0.245, abs=1e-5)


def test_convexity_of_potentials():
    for spec in (QUAD2, PotentialSpec.power_law(1.0, 1.5, dim=2), NORM2):
        assert convexity_violation(spec) <= 1e-9
    assert convexity_violation(mollify(PotentialSpec.power_law(1.0, 1.5, dim=2), 0.1,
                                       analytic=False), samples=200) <= 1e-9


def test_mollifier_quadrature_mass():
    offsets, weights, raw = MollifierSpec(0.1).quadrature(2)
    assert weights.sum() == pytest.approx(1.0)
    assert abs(raw - 1.0) < 1e-2
    assert np.allclose(offsets.T @ weights, 0.0, atol=1e-15)
    with pytest.raises(ConfigurationError):
        MollifierSpec(-0.1)


@given(arrays(float, (2, 3), elements=st.floats(-3, 3)))
def test_fenchel_young_inequality_holds(pair):
    S, D = SymTensor.from_iso(pair[0], 2), SymTensor.from_iso(pair[1], 2)
    assert fenchel_young_residual(QUAD2, S, D) >= -1e-7
