"""
Per-slot controllers and the simulation loop.

``wmra_step`` is the queue-based welfare-maximizing allocation; ``greedy_step``
is the per-slot baseline that maximizes the current slot's welfare under hard
energy and degradation caps. ``run_controller`` drives either one against a
seeded scenario.

Order of events inside slot t:
availability transition -> returned EVs draw their energy and re-seed K ->
signal observed -> allocation -> energy update -> queue updates.
"""

from __future__ import annotations

import numpy as np

from .metrics import MetricsSeries, record_slot
from .model import (FEAS_TOL, Allocation, Fleet, FleetState, InvariantViolation,
                    NegUtilityCost, SlotSignal, UtilityModel, effective_bounds, external_cost)
from .queues import DerivedConstants, update_H, update_J, update_K
from .solvers import (CoupledProblem, build_regdown_problem, build_regup_problem,
                      solve_aux, solve_coupled)
from .stochastic import ScenarioConfig, ScenarioGenerator


def _physical_limit(fleet: Fleet, s, x_d, x_u):
    """Cap allocations at what the battery can physically absorb or supply.

    Never binds while the energy stays in its preferred range; it only matters
    for V above V_max, where the queue design no longer protects the range.
    """
    room_d = np.maximum(fleet.s_cap - s, 0.0)
    room_u = np.maximum(s, 0.0)
    clips = int(np.count_nonzero(x_d > room_d) + np.count_nonzero(x_u > room_u))
    if clips:
        x_d = np.minimum(x_d, room_d)
        x_u = np.minimum(x_u, room_u)
    return x_d, x_u, clips


def _check_allocation(fleet: Fleet, signal: SlotSignal, x_d, x_u, ub_d=None, ub_u=None):
    ub_d = fleet.x_max if ub_d is None else ub_d
    ub_u = fleet.x_max if ub_u is None else ub_u
    if np.any(x_d < -FEAS_TOL) or np.any(x_u < -FEAS_TOL):
        raise InvariantViolation("negative regulation amount")
    bad = np.flatnonzero((x_d > ub_d + FEAS_TOL) | (x_u > ub_u + FEAS_TOL)
                         | (~signal.avail & ((x_d > 0.0) | (x_u > 0.0))))
    if bad.size:
        raise InvariantViolation("allocation outside its box", ev=int(fleet.ids[bad[0]]))
    if np.any((x_d > 0.0) & (x_u > 0.0)):
        raise InvariantViolation("EV charged and discharged in the same slot")


def wmra_step(fleet: Fleet, state: FleetState, signal: SlotSignal, consts: DerivedConstants,
              util: UtilityModel) -> Allocation:
    """One slot of the queue-based allocation. Updates J, H and K in place.

    The caller applies the energy update s += b afterwards.
    """
    state.K = update_K(state.K, state.s, consts.c, 0.0, state.just_returned)
    z = solve_aux(state.H, fleet.weight, consts.V, util, fleet.x_max)
    n = len(fleet)
    x_d = np.zeros(n)
    x_u = np.zeros(n)
    if signal.G > 0.0:
        x_d = solve_coupled(build_regdown_problem(fleet, state, signal, consts.V))
    elif signal.G < 0.0:
        x_u = solve_coupled(build_regup_problem(fleet, state, signal, consts.V))
    x_d, x_u, clips = _physical_limit(fleet, state.s, x_d, x_u)
    _check_allocation(fleet, signal, x_d, x_u)
    e = external_cost(signal, x_d, x_u)
    b = x_d - x_u
    x = x_d + x_u
    state.J = update_J(state.J, fleet, x_d, x_u, signal.G)
    state.H = update_H(state.H, z, x)
    state.K = update_K(state.K, state.s, consts.c, b, False)
    return Allocation(x_d, x_u, b, e, z=z, wear=fleet.degradation.value(x),
                      physical_clips=clips)


def greedy_step(fleet: Fleet, state: FleetState, signal: SlotSignal,
                util: UtilityModel) -> Allocation:
    """Maximize this slot's sum_i w_i U(x_i) - e_t under the energy bounds,
    the request, and a per-slot degradation cap C_i(x_i) <= c_up."""
    n = len(fleet)
    x_d = np.zeros(n)
    x_u = np.zeros(n)
    ub_d = ub_u = np.zeros(n)
    if signal.G != 0.0:
        h_d, h_u = effective_bounds(fleet, state.s)
        cap = np.minimum(fleet.degradation.inverse(fleet.c_up), fleet.x_max)
        ub_d = np.where(signal.avail, np.minimum(h_d, cap), 0.0)
        ub_u = np.where(signal.avail, np.minimum(h_u, cap), 0.0)
        cost = NegUtilityCost(util, fleet.weight)
        if signal.G > 0.0:
            x_d = solve_coupled(CoupledProblem(-signal.e_s, 1.0, ub_d, signal.G, cost))
        else:
            x_u = solve_coupled(CoupledProblem(-signal.e_d, 1.0, ub_u, -signal.G, cost))
    _check_allocation(fleet, signal, x_d, x_u, ub_d, ub_u)
    e = external_cost(signal, x_d, x_u)
    x = x_d + x_u
    return Allocation(x_d, x_u, x_d - x_u, e, wear=fleet.degradation.value(x))


def run_controller(kind: str, scenario: ScenarioConfig, fleet: Fleet, consts: DerivedConstants,
                   T: int, util: UtilityModel | None = None, stride: int = 100,
                   strict: bool | None = None, trace_ev: int | None = None) -> MetricsSeries:
    """Simulate ``T`` slots of the chosen controller and collect metrics.

    ``strict`` (default: WMRA with V <= V_max) turns any energy-range, K-bound,
    K-shift or H-bound violation into an ``InvariantViolation``; otherwise the
    violations are only counted. ``trace_ev`` is a fleet index whose energy
    at the end of every slot is kept in ``series.trace``.
    """
    if kind not in ("wmra", "greedy"):
        raise ValueError(f"unknown controller {kind!r}")
    if T < 1:
        raise ValueError("T must be >= 1")
    util = UtilityModel() if util is None else util
    is_wmra = kind == "wmra"
    if strict is None:
        strict = is_wmra and consts.V <= consts.V_max * (1.0 + 1e-12)

    gen = ScenarioGenerator(scenario, fleet)
    state = FleetState(gen.initial_energy(), available=gen.initial_availability())
    state.K = state.s - consts.c
    series = MetricsSeries(fleet.weight, util, stride=stride)
    h_cap = consts.V * fleet.weight * consts.mu + fleet.x_max
    k_lo = fleet.s_min - consts.c - FEAS_TOL
    k_hi = fleet.s_max - consts.c + FEAS_TOL
    s_lo = fleet.s_min - FEAS_TOL
    s_hi = fleet.s_max + FEAS_TOL

    for t in range(T):
        if t > 0:
            prev = state.avail
            state.avail = gen.advance(prev)
            state.prev_avail = prev
            for i in np.flatnonzero(state.avail & ~prev):
                state.s[i] = gen.return_energy(i, state.s[i])
        signal = gen.signal(state.avail)
        try:
            if is_wmra:
                alloc = wmra_step(fleet, state, signal, consts, util)
            else:
                alloc = greedy_step(fleet, state, signal, util)
        except InvariantViolation as exc:
            raise InvariantViolation(str(exc), slot=t, ev=exc.ev) from exc
        state.s = state.s + alloc.b

        out = state.avail & ((state.s < s_lo) | (state.s > s_hi))
        n_out = int(np.count_nonzero(out))
        if n_out and strict:
            i = int(np.flatnonzero(out)[0])
            raise InvariantViolation(
                f"energy {state.s[i]:.12g} outside [{fleet.s_min[i]}, {fleet.s_max[i]}]",
                slot=t, ev=int(fleet.ids[i]))
        if is_wmra:
            _check_queues(series, fleet, state, consts, h_cap, k_lo, k_hi, strict, t)
        record_slot(series, alloc, state, violations=n_out)
        if trace_ev is not None:
            series.trace.append(float(state.s[trace_ev]))

    if series.slots % stride:
        series.samples.append((series.slots, series.welfare(), series.mean_external_cost))
    T_ = series.slots
    series.final = {
        "controller": kind,
        "V": consts.V if is_wmra else float("nan"),
        "max_wear_ratio": float(np.max(series.sum_wear / T_ / fleet.c_up)),
        "max_b_ratio": float(np.max(np.abs(series.sum_b) / T_ / fleet.x_max)),
        "max_J_over_T_ratio": float(np.max(state.J / T_ / fleet.c_up)) if is_wmra else 0.0,
        "max_zx_ratio": float(np.max(np.abs(series.sum_zx) / T_ / fleet.x_max)) if is_wmra else 0.0,
    }
    return series


def _check_queues(series, fleet, state, consts, h_cap, k_lo, k_hi, strict, t):
    resid = np.abs(state.K - (state.s - consts.c))
    series.max_shift_residual = max(series.max_shift_residual, float(np.max(resid)))
    h_excess = float(np.max(state.H - h_cap))
    series.max_h_excess = max(series.max_h_excess, h_excess)
    k_out = state.avail & ((state.K < k_lo) | (state.K > k_hi))
    n_k = int(np.count_nonzero(k_out))
    series.k_bound_violations += n_k
    if not strict:
        return
    if series.max_shift_residual > FEAS_TOL:
        i = int(np.argmax(resid))
        raise InvariantViolation(f"K drifted from s - c by {resid[i]:.3g}", slot=t,
                                 ev=int(fleet.ids[i]))
    if h_excess > FEAS_TOL:
        i = int(np.argmax(state.H - h_cap))
        raise InvariantViolation(f"H = {state.H[i]:.6g} above its bound", slot=t,
                                 ev=int(fleet.ids[i]))
    if n_k:
        i = int(np.flatnonzero(k_out)[0])
        raise InvariantViolation(f"K = {state.K[i]:.6g} outside its band", slot=t,
                                 ev=int(fleet.ids[i]))
