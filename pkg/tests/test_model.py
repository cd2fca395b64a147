import numpy as np
import pytest
from hypothesis import given, strategies as st

from wmra_sim.model import (EVParams, EVState, Fleet, InvariantViolation, QuadraticCost,
                            PowerCost, SlotSignal, apply_energy_update, degradation_cost,
                            effective_bounds, effective_charge, external_cost,
                            rate_to_slot_energy, slot_indicators)


def small_ev(**kw):
    base = dict(id=0, s_cap=1.0, s_min=0.1, s_max=0.9, x_max=0.2, c_up=0.01)
    base.update(kw)
    return EVParams(**base)


def sig(G, e_s=0.1, e_d=0.12, avail=(True,)):
    return SlotSignal(G, e_s, e_d, np.array(avail))


@pytest.mark.parametrize("G, expected", [(0.5, (True, False)), (-0.5, (False, True)),
                                         (0.0, (False, False))])
def test_slot_indicators(G, expected):
    assert slot_indicators(G) == expected


@pytest.mark.parametrize("s, expected", [(0.5, (0.2, 0.2)), (0.85, (0.05, 0.2)),
                                         (0.1, (0.2, 0.0))])
def test_effective_bounds(s, expected):
    hd, hu = effective_bounds(small_ev(), s)
    assert hd == pytest.approx(expected[0], abs=1e-15)
    assert hu == pytest.approx(expected[1], abs=1e-15)


def test_effective_bounds_rejects_energy_outside_capacity():
    with pytest.raises(InvariantViolation):
        effective_bounds(small_ev(), 1.2)


@given(st.floats(0.0, 1.0))
def test_effective_bounds_are_boxed_and_keep_range(s):
    ev = small_ev()
    hd, hu = effective_bounds(ev, s)
    assert 0.0 <= hd <= ev.x_max and 0.0 <= hu <= ev.x_max
    if ev.s_min <= s <= ev.s_max:
        assert s + hd <= ev.s_max + 1e-12
        assert s - hu >= ev.s_min - 1e-12


def test_energy_update_arithmetic():
    ev = EVParams(id=3, s_cap=23.0, s_min=2.3, s_max=20.7, x_max=0.01, c_up=2.5e-5)
    st_ = EVState(energy=5.0)
    new, b = apply_energy_update(st_, 0.01, 0.0, sig(0.3), ev)
    assert (new.energy, b) == (pytest.approx(5.01), pytest.approx(0.01))
    new, b = apply_energy_update(st_, 0.0, 0.01, sig(-0.3), ev)
    assert (new.energy, b) == (pytest.approx(4.99), pytest.approx(-0.01))
    away = EVState(energy=5.0, available=False)
    new, b = apply_energy_update(away, 0.01, 0.0, sig(0.3), ev)
    assert new.energy == 5.0 and b == 0.0
    assert away.k_locked


def test_energy_update_flags_range_exit():
    ev = small_ev()
    with pytest.raises(InvariantViolation, match="EV 0"):
        apply_energy_update(EVState(energy=0.85), 0.1, 0.0, sig(0.5), ev)


def test_effective_charge_ignores_wrong_direction_and_absence():
    assert effective_charge(0.1, 0.2, 1.0) == pytest.approx(0.1)
    assert effective_charge(0.1, 0.2, -1.0) == pytest.approx(-0.2)
    np.testing.assert_allclose(effective_charge([0.1, 0.1], [0, 0], 1.0, [True, False]), [0.1, 0])


@pytest.mark.parametrize("G, xd, xu, e_s, e_d, expected", [
    (1.0, [0.5, 0.5], [0, 0], 0.1, 0.12, 0.0),
    (1.0, [0.4, 0.0], [0, 0], 0.1, 0.12, 0.06),
    (-1.0, [0, 0], [0, 0], 0.1, 0.12, 0.12),
])
def test_external_cost(G, xd, xu, e_s, e_d, expected):
    s = SlotSignal(G, e_s, e_d, np.ones(2, bool))
    assert external_cost(s, np.array(xd), np.array(xu)) == pytest.approx(expected, abs=1e-15)


def test_external_cost_rejects_over_allocation():
    s = SlotSignal(0.3, 0.1, 0.1, np.ones(2, bool))
    with pytest.raises(InvariantViolation, match="over-allocation"):
        external_cost(s, np.array([0.2, 0.2]), np.zeros(2))


def test_degradation_cost_values():
    ev = small_ev()
    assert degradation_cost(ev, 0.0) == 0.0
    assert degradation_cost(ev, 0.003) == pytest.approx(9e-6, rel=1e-12)
    with pytest.raises(ValueError):
        degradation_cost(ev, 0.3)


def test_type_one_slot_energy_and_max_wear():
    # 6.6 kW for 5 s, in kWh, computed through seconds and joules
    x_max = 6.6e3 * 5.0 / 3.6e6
    assert rate_to_slot_energy(6.6, 5.0) == pytest.approx(x_max, rel=1e-14)
    assert rate_to_slot_energy(6.6, 5.0) == pytest.approx(0.0091667, abs=1e-7)
    ev = EVParams(id=0, s_cap=23, s_min=2.3, s_max=20.7, x_max=x_max, c_up=x_max ** 2 / 4)
    assert ev.c_max == pytest.approx(8.4028e-5, rel=1e-4)


@pytest.mark.parametrize("kw", [dict(s_min=0.5, s_max=0.4), dict(x_max=0.0),
                                dict(c_up=1.0), dict(weight=0.0)])
def test_ev_params_validation(kw):
    with pytest.raises(ValueError):
        small_ev(**kw)


def test_fleet_requires_one_degradation_kind():
    with pytest.raises(ValueError):
        Fleet([small_ev(), small_ev(id=1, degradation=PowerCost(1.0, 3.0))])


@given(lin=st.floats(-5, 5), scale=st.floats(0, 5), ub=st.floats(0, 2))
def test_quadratic_argmin_beats_grid(lin, scale, ub):
    q = QuadraticCost(1.0)
    x = float(q.argmin(lin, scale, ub))
    assert 0.0 <= x <= ub
    grid = np.linspace(0.0, ub, 401)
    f = lambda v: lin * v + scale * q.value(v)
    assert f(x) <= np.min(f(grid)) + 1e-12


@given(lin=st.floats(-5, 5), scale=st.floats(0, 5), ub=st.floats(0, 2))
def test_power_argmin_beats_grid(lin, scale, ub):
    p = PowerCost(1.0, 3.0)
    x = float(p.argmin(lin, scale, ub))
    assert 0.0 <= x <= ub + 1e-15
    grid = np.linspace(0.0, ub, 401)
    f = lambda v: lin * v + scale * p.value(v)
    assert f(x) <= np.min(f(grid)) + 1e-12


@given(st.lists(st.tuples(st.floats(-3, 3), st.one_of(st.just(0.0), st.floats(1e-300, 5)),
                          st.floats(0, 1)), min_size=1, max_size=6),
       st.floats(0, 4))
def test_quadratic_fast_response_matches_argmin(items, lam):
    a, scale, ub = (np.array(v) for v in zip(*items))
    q = QuadraticCost(1.0)
    np.testing.assert_allclose(q.response_fn(a, scale, ub)(lam), q.argmin(a + lam, scale, ub),
                               rtol=1e-14, atol=0)
