from dataclasses import replace

import numpy as np
import pytest

from wmra_sim.config import ExperimentConfig
from wmra_sim.model import (EVParams, Fleet, FleetState, InvariantViolation, NegUtilityCost,
                            SlotSignal, UtilityModel)
from wmra_sim.queues import derive_constants
from wmra_sim.solvers import CoupledProblem, oracle_grid
from wmra_sim.stochastic import ScenarioConfig, ScenarioGenerator
from wmra_sim.wmra import greedy_step, run_controller, wmra_step

U = UtilityModel()


def two_evs(x_max=0.01, c_up=None):
    c_up = x_max ** 2 / 4 if c_up is None else c_up
    return Fleet([EVParams(id=i, s_cap=23.0, s_min=2.3, s_max=20.7, x_max=x_max, c_up=c_up)
                  for i in range(2)])


@pytest.fixture(scope="module")
def setup():
    cfg = ExperimentConfig()
    fleet = cfg.build_fleet()
    scen = cfg.scenario.resolve(fleet)
    base = derive_constants(fleet, U, scen.e_max, 1.0)
    return fleet, scen, derive_constants(fleet, U, scen.e_max, base.V_max)


def test_all_away_buys_everything_externally():
    fleet = two_evs()
    consts = derive_constants(fleet, U, 0.12, 1.0)
    st_ = FleetState([10.0, 10.0], K=np.array([10.0, 10.0]) - consts.c)
    st_.avail[:] = False
    st_.prev_avail[:] = False
    a = wmra_step(fleet, st_, SlotSignal(1.0, 0.1, 0.1, st_.avail), consts, U)
    np.testing.assert_array_equal(a.x, 0.0)
    assert a.external_cost == pytest.approx(0.1)


def test_zero_request_still_updates_H():
    fleet = two_evs()
    consts = derive_constants(fleet, U, 0.12, 1.0)
    st_ = FleetState([10.0, 10.0], H=[0.0, 0.5], K=np.array([10.0, 10.0]) - consts.c)
    a = wmra_step(fleet, st_, SlotSignal(0.0, 0.1, 0.1, st_.avail), consts, U)
    np.testing.assert_array_equal(a.x, 0.0)
    assert a.external_cost == 0.0
    np.testing.assert_allclose(st_.H, [0.0, 0.5] + a.z)
    assert a.z[0] == 0.01      # H = 0 gives z = x_max


def test_fresh_low_energy_ev_takes_full_box():
    fleet = Fleet([EVParams(id=0, s_cap=23.0, s_min=2.3, s_max=20.7, x_max=0.01, c_up=2.5e-5)])
    consts = derive_constants(fleet, U, 0.12, 1.0)
    st_ = FleetState([3.0], K=np.array([3.0]) - consts.c)
    assert st_.K[0] - 1.0 * 0.1 < 0
    a = wmra_step(fleet, st_, SlotSignal(0.5, 0.1, 0.1, st_.avail), consts, U)
    assert a.x_d[0] == pytest.approx(min(0.01, 0.5))
    # K follows the energy change
    assert st_.K[0] == pytest.approx(3.01 - consts.c[0])


def test_returning_ev_reseeds_K():
    fleet = two_evs()
    consts = derive_constants(fleet, U, 0.12, 1.0)
    st_ = FleetState([10.0, 10.0], K=[-99.0, -99.0])
    st_.prev_avail[:] = [False, True]
    wmra_step(fleet, st_, SlotSignal(0.0, 0.1, 0.1, st_.avail), consts, U)
    assert st_.K[0] == pytest.approx(10.0 - consts.c[0])
    assert st_.K[1] == -99.0


def test_greedy_respects_degradation_cap():
    # C = x^2 with c_up = x_max^2 / 4 gives x <= x_max / 2
    fleet = two_evs(x_max=0.4)
    st_ = FleetState([10.0, 10.0])
    a = greedy_step(fleet, st_, SlotSignal(5.0, 0.1, 0.1, st_.avail), U)
    np.testing.assert_allclose(a.x_d, [0.2, 0.2])


def test_greedy_single_ev_box_max():
    fleet = Fleet([EVParams(id=0, s_cap=23.0, s_min=2.3, s_max=20.7, x_max=0.4, c_up=0.04)])
    st_ = FleetState([10.0])
    a = greedy_step(fleet, st_, SlotSignal(5.0, 0.1, 0.1, st_.avail), U)
    assert a.x_d[0] == pytest.approx(0.2)
    grid = np.linspace(0, 0.2, 2001)
    assert grid[np.argmax(np.log1p(grid) - (5.0 - grid) * 0.1)] == pytest.approx(0.2)


def test_greedy_splits_evenly_between_identical_evs():
    fleet = two_evs(x_max=0.4)
    st_ = FleetState([10.0, 10.0])
    a = greedy_step(fleet, st_, SlotSignal(-0.01, 0.1, 0.1, st_.avail), U)
    np.testing.assert_allclose(a.x_u, [0.005, 0.005], atol=1e-12)
    p = CoupledProblem(np.full(2, -0.1), 1.0, 0.2, 0.01, NegUtilityCost(U, 1.0))
    xo = oracle_grid(p, 1e-4)
    np.testing.assert_allclose(xo, [0.005, 0.005], atol=1e-4)


def test_greedy_stays_inside_energy_range():
    fleet = two_evs(x_max=0.4)
    st_ = FleetState([20.6, 2.35])
    a = greedy_step(fleet, st_, SlotSignal(5.0, 0.1, 0.1, st_.avail), U)
    assert a.x_d[0] == pytest.approx(0.1)
    a = greedy_step(fleet, st_, SlotSignal(-5.0, 0.1, 0.1, st_.avail), U)
    assert a.x_u[1] == pytest.approx(0.05)


def test_run_is_deterministic(setup):
    fleet, scen, consts = setup
    a = run_controller("wmra", scen, fleet, consts, 1)
    b = run_controller("wmra", scen, fleet, consts, 1)
    assert a.summary() == b.summary()
    a = run_controller("wmra", scen, fleet, consts, 300, stride=7)
    b = run_controller("wmra", scen, fleet, consts, 300, stride=7)
    assert a.samples == b.samples and len(a.samples) == 300 // 7 + 1


def test_controller_does_not_change_scenario(setup, monkeypatch):
    fleet, scen, consts = setup
    orig = ScenarioGenerator.signal
    seen = []

    def spy(self, avail):
        s = orig(self, avail)
        seen.append((s.G, s.e_s, s.e_d, avail.tobytes()))
        return s

    monkeypatch.setattr(ScenarioGenerator, "signal", spy)
    run_controller("wmra", scen, fleet, consts, 400)
    wmra_trace = list(seen)
    seen.clear()
    run_controller("greedy", scen, fleet, consts, 400)
    assert seen == wmra_trace


def test_wmra_invariants_short_run(setup):
    fleet, scen, consts = setup
    s = run_controller("wmra", replace(scen, seed=4), fleet, consts, 3000)
    assert s.energy_violations == 0 and s.k_bound_violations == 0
    assert s.max_shift_residual <= 1e-9 and s.max_h_excess <= 1e-9


def test_strict_run_reports_slot_and_ev():
    fleet = Fleet([EVParams(id=i, s_cap=1.0, s_min=0.1, s_max=0.9, x_max=0.1, c_up=0.0025)
                   for i in range(3)])
    scen = ScenarioConfig(seed=0)
    base = derive_constants(fleet, U, scen.e_max, 1.0)
    consts = derive_constants(fleet, U, scen.e_max, 30 * base.V_max)
    with pytest.raises(InvariantViolation) as err:
        run_controller("wmra", scen, fleet, consts, 5000, strict=True)
    assert err.value.slot is not None and err.value.ev in (0, 1, 2)
    s = run_controller("wmra", scen, fleet, consts, 5000)
    assert s.energy_violations > 0


def test_bad_arguments(setup):
    fleet, scen, consts = setup
    with pytest.raises(ValueError):
        run_controller("other", scen, fleet, consts, 10)
    with pytest.raises(ValueError):
        run_controller("wmra", scen, fleet, consts, 0)
