import pytest
from hypothesis import given, strategies as st

from wmra_sim.config import ExperimentConfig
from wmra_sim.model import EVParams, Fleet, QuadraticCost, UtilityModel
from wmra_sim.queues import (derive_constants, drift_constant, update_H, update_J, update_K,
                             v_max)

X1 = 6.6 * 5 / 3600     # type I slot energy, kWh
X2 = 10.0 * 5 / 3600


@pytest.fixture(scope="module")
def fleet():
    return ExperimentConfig().build_fleet()


def test_v_max_default_fleet(fleet):
    V, who = v_max(fleet, 1.0, 0.12)
    assert V == pytest.approx((18.4 - 4 * X1) / 2.24, rel=1e-12)
    assert V == pytest.approx(8.1979, abs=1e-4)
    assert who < 50                          # a type I EV
    type_two = (32.0 - 4 * X2) / 2.24
    assert type_two == pytest.approx(14.26, abs=0.01)


def test_shift_constant_type_one(fleet):
    c = derive_constants(fleet, UtilityModel(), 0.12, 1.0)
    c = derive_constants(fleet, UtilityModel(), 0.12, c.V_max)
    assert c.c[0] == pytest.approx(2.3 + 2 * X1 + c.V_max * 1.12, rel=1e-12)
    assert c.c[0] == pytest.approx(11.5, abs=1e-3)
    # s_max - c = 2 x_max + V (w mu + e_max)
    assert fleet.s_max[0] - c.c[0] == pytest.approx(2 * X1 + c.V_max * 1.12, rel=1e-12)
    assert not c.warnings and c.v_mult == pytest.approx(1.0)


def test_warning_above_v_max(fleet):
    c = derive_constants(fleet, UtilityModel(), 0.12, 20.0)
    assert c.warnings and "exceeds" in c.warnings[0]


def test_non_positive_v_max_is_rejected():
    ev = EVParams(id=0, s_cap=1.0, s_min=0.1, s_max=0.9, x_max=0.2, c_up=0.01)
    with pytest.raises(ValueError, match="V_max"):
        derive_constants(Fleet([ev]), UtilityModel(), 0.12, 1.0)
    with pytest.raises(ValueError):
        derive_constants(Fleet([ev]), UtilityModel(), 0.12, -1.0)


def test_drift_constant_default_fleet(fleet):
    c_up1, c_up2 = X1 ** 2 / 4, X2 ** 2 / 4
    term1 = 2 * X1 ** 2 + (0.05 * 23) ** 2 + max(c_up1 ** 2, (X1 ** 2 - c_up1) ** 2)
    term2 = 2 * X2 ** 2 + (0.05 * 40) ** 2 + max(c_up2 ** 2, (X2 ** 2 - c_up2) ** 2)
    assert drift_constant(fleet) == pytest.approx(0.5 * (50 * term1 + 50 * term2), rel=1e-12)
    assert (0.05 * 23) ** 2 == pytest.approx(1.3225)
    assert (0.05 * 23) ** 2 / term1 > 0.999


def test_drift_constant_single_ev():
    x = 0.01
    ev = EVParams(id=0, s_cap=10, s_min=1, s_max=9, x_max=x, c_up=x ** 2 / 2)
    assert drift_constant(Fleet([ev])) == pytest.approx(x ** 2 + x ** 4 / 8, rel=1e-12)


def test_update_J_examples():
    ev = EVParams(id=0, s_cap=23, s_min=2.3, s_max=20.7, x_max=X1, c_up=X1 ** 2 / 4)
    assert update_J(0.0, ev, 0.0, 0.0, 0.0) == 0.0
    ev2 = EVParams(id=0, s_cap=23, s_min=2.3, s_max=20.7, x_max=X1, c_up=2.1e-5)
    assert update_J(0.0, ev2, 0.003, 0.0, 1.0) == 0.0
    assert update_J(1e-4, ev, X1, 0.0, 0.5) == pytest.approx(1e-4 + 0.75 * X1 ** 2, rel=1e-12)
    assert update_J(1e-4, ev, X1, 0.0, 0.5) == pytest.approx(1.6302e-4, rel=1e-4)
    # the inactive direction does not count
    assert update_J(1e-4, ev, X1, 0.0, -0.5) == pytest.approx(1e-4 - ev.c_up)


def test_update_H_examples():
    assert update_H(0.0, 0.02, 0.02) == 0.0
    assert update_H(0.1, 0.0, 0.05) == pytest.approx(0.05)


def test_update_K_examples():
    assert update_K(-1.0, 2.3, 11.5, 0.0, True) == pytest.approx(-9.2)
    assert update_K(-3.0, 5.0, 11.5, 0.01, False) == pytest.approx(-2.99)
    K = -4.0
    for _ in range(25):
        K = update_K(K, 5.0, 11.5, 0.0, False)
    assert K == -4.0


@given(st.floats(0, 1), st.floats(0, 0.02), st.floats(0, 0.02), st.floats(-1, 1))
def test_J_is_nonnegative_and_lipschitz(J, xd, xu, G):
    ev = EVParams(id=0, s_cap=23, s_min=2.3, s_max=20.7, x_max=0.02, c_up=1e-4,
                  degradation=QuadraticCost(1.0))
    J2 = update_J(J, ev, xd, xu, G)
    assert J2 >= 0.0
    assert abs(J2 - J) <= max(ev.c_up, ev.c_max - ev.c_up) + 1e-15
