"""
Domain types and per-slot physics for the aggregator/EV regulation system.

Energies are in kWh, prices in dollars/kWh. A slot's regulation request G is
signed: G > 0 asks the fleet to absorb energy (regulation down), G < 0 asks
it to supply energy (regulation up).

Most functions accept scalars or numpy arrays; a ``Fleet`` exposes the same
attribute names as ``EVParams`` but holds one array entry per EV, so the
per-EV formulas vectorize without modification.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

# Slack for box and feasibility assertions (kWh).
FEAS_TOL = 1e-9


class InvariantViolation(RuntimeError):
    """A simulation invariant failed; carries the slot index and EV id when known."""

    def __init__(self, message: str, slot: int | None = None, ev: int | None = None):
        self.slot = slot
        self.ev = ev
        where = []
        if slot is not None:
            where.append(f"slot {slot}")
        if ev is not None:
            where.append(f"EV {ev}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


# --------------------------------------------------------------------------
# Separable convex cost pieces
# --------------------------------------------------------------------------

class QuadraticCost:
    """Degradation cost C(x) = coef * x**2.

    ``coef`` may be a scalar or a per-EV array.
    """

    kind = "quadratic"

    def __init__(self, coef=1.0):
        self.coef = np.asarray(coef, dtype=float)
        if np.any(self.coef <= 0):
            raise ValueError("quadratic degradation coefficient must be > 0")

    def __repr__(self) -> str:
        return f"QuadraticCost(coef={self.coef.tolist()!r})"

    @classmethod
    def stack(cls, models: Sequence["QuadraticCost"]) -> "QuadraticCost":
        return cls(np.array([float(m.coef) for m in models]))

    def take(self, k: int) -> "QuadraticCost":
        """The cost of item k alone."""
        return type(self)(self.coef[k] if self.coef.ndim else self.coef)

    def value(self, x):
        return self.coef * np.square(x)

    def derivative(self, x):
        return 2.0 * self.coef * np.asarray(x, dtype=float)

    def inverse(self, c):
        """Largest x with C(x) <= c."""
        return np.sqrt(np.maximum(c, 0.0) / self.coef)

    def argmin(self, lin, scale, ub):
        """Minimizer of lin*x + scale*C(x) over [0, ub], elementwise.

        With scale == 0 the problem is linear; the minimizer is ub when
        lin < 0 and 0 otherwise.
        """
        lin = np.asarray(lin, dtype=float)
        curv = 2.0 * np.asarray(scale, dtype=float) * self.coef
        pos = curv > 0.0
        with np.errstate(over="ignore"):
            interior = np.minimum(np.maximum(-lin / np.where(pos, curv, 1.0), 0.0), ub)
        return np.where(pos, interior, np.where(lin < 0.0, ub, 0.0))


    def response_fn(self, a, scale, ub):
        """Fast lam -> argmin(a + lam, scale, ub) for fixed a, scale, ub."""
        curv = 2.0 * scale * self.coef
        lin = curv <= 0.0
        with np.errstate(over="ignore"):
            inv = np.where(lin, 0.0, 1.0 / np.where(lin, 1.0, curv))
        lin_idx = np.flatnonzero(lin)
        a_lin, ub_lin = a[lin_idx], ub[lin_idx]

        def resp(lam):
            with np.errstate(invalid="ignore", over="ignore"):
                x = (a + lam) * -inv
            np.fmax(x, 0.0, out=x)      # 0 * inf is nan for a vanishing curvature
            np.minimum(x, ub, out=x)
            if lin_idx.size:
                x[lin_idx] = np.where(a_lin + lam < 0.0, ub_lin, 0.0)
            return x
        return resp


class PowerCost(QuadraticCost):
    """Degradation cost C(x) = coef * x**exponent with exponent > 1."""

    kind = "power"

    def __init__(self, coef=1.0, exponent: float = 2.0):
        super().__init__(coef)
        if exponent <= 1.0:
            raise ValueError("power degradation needs exponent > 1")
        self.exponent = float(exponent)

    def __repr__(self) -> str:
        return f"PowerCost(coef={self.coef.tolist()!r}, exponent={self.exponent})"

    @classmethod
    def stack(cls, models):
        exps = {m.exponent for m in models}
        if len(exps) != 1:
            raise ValueError("all EVs in a fleet must share the degradation exponent")
        return cls(np.array([float(m.coef) for m in models]), exps.pop())

    def response_fn(self, a, scale, ub):
        return lambda lam: self.argmin(a + lam, scale, ub)

    def take(self, k: int) -> "PowerCost":
        return type(self)(self.coef[k] if self.coef.ndim else self.coef, self.exponent)

    def value(self, x):
        return self.coef * np.power(np.asarray(x, dtype=float), self.exponent)

    def derivative(self, x):
        p = self.exponent
        return self.coef * p * np.power(np.asarray(x, dtype=float), p - 1.0)

    def inverse(self, c):
        return np.power(np.maximum(c, 0.0) / self.coef, 1.0 / self.exponent)

    def argmin(self, lin, scale, ub):
        lin = np.asarray(lin, dtype=float)
        scale = np.asarray(scale, dtype=float)
        p = self.exponent
        k = scale * self.coef * p
        with np.errstate(all="ignore"):
            interior = np.clip(np.power(np.maximum(-lin, 0.0) / k, 1.0 / (p - 1.0)), 0.0, ub)
        return np.where(k > 0.0, interior, np.where(lin < 0.0, ub, 0.0))


# --------------------------------------------------------------------------
# Utilities
# --------------------------------------------------------------------------

class LogUtility:
    """U(x) = log(1 + x); U'(0) = 1."""

    kind = "log"

    def value(self, x):
        return np.log1p(x)

    def derivative(self, x):
        return 1.0 / (1.0 + np.asarray(x, dtype=float))

    def inverse_derivative(self, y):
        """x with U'(x) = y, for y > 0."""
        return 1.0 / np.asarray(y, dtype=float) - 1.0

    @property
    def mu(self) -> float:
        return 1.0


class SaturatingUtility:
    """U(x) = (1 - exp(-k x)) / k. Concave, U'(0) = 1."""

    kind = "saturating"

    def __init__(self, k: float = 1.0):
        if k <= 0:
            raise ValueError("k must be > 0")
        self.k = float(k)

    def value(self, x):
        return -np.expm1(-self.k * np.asarray(x, dtype=float)) / self.k

    def derivative(self, x):
        return np.exp(-self.k * np.asarray(x, dtype=float))

    def inverse_derivative(self, y):
        return -np.log(np.asarray(y, dtype=float)) / self.k

    @property
    def mu(self) -> float:
        return 1.0


@dataclass(frozen=True)
class UtilityModel:
    """A concave, non-decreasing utility with U(0) = 0 and slope bound mu.

    mu is U'(0) for concave U, which gives U(x) <= mu * x on the whole box.
    """

    utility: object = field(default_factory=LogUtility)

    @property
    def kind(self) -> str:
        return self.utility.kind

    @property
    def mu(self) -> float:
        return float(self.utility.mu)

    def value(self, x):
        return self.utility.value(x)

    def derivative(self, x):
        return self.utility.derivative(x)

    def inverse_derivative(self, y):
        return self.utility.inverse_derivative(y)


class NegUtilityCost:
    """Convex piece f(x) = -weight * U(x), used to pose utility maximization
    as a separable minimization."""

    kind = "neg-utility"

    def __init__(self, utility: UtilityModel, weight=1.0):
        self.utility = utility
        self.weight = np.asarray(weight, dtype=float)

    def take(self, k: int) -> "NegUtilityCost":
        return NegUtilityCost(self.utility, self.weight[k] if self.weight.ndim else self.weight)

    def value(self, x):
        return -self.weight * self.utility.value(x)

    def derivative(self, x):
        return -self.weight * self.utility.derivative(x)

    def argmin(self, lin, scale, ub):
        """Minimizer of lin*x - scale*weight*U(x) over [0, ub], elementwise."""
        lin = np.asarray(lin, dtype=float)
        k = np.asarray(scale, dtype=float) * self.weight
        slope0 = float(self.utility.derivative(0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            # stationary point solves U'(x) = lin / k; U' is decreasing
            y = np.clip(lin / k, 1e-300, slope0)
            interior = np.clip(self.utility.inverse_derivative(y), 0.0, ub)
            flat = (k <= 0.0) | (lin >= k * slope0)
        return np.where(lin <= 0.0, ub, np.where(flat, 0.0, interior))


# --------------------------------------------------------------------------
# Domain types
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EVParams:
    """Static parameters of one EV."""

    id: int
    s_cap: float
    s_min: float
    s_max: float
    x_max: float
    c_up: float
    delta_max: float = 0.0
    weight: float = 1.0
    degradation: QuadraticCost = field(default_factory=QuadraticCost)

    def __post_init__(self):
        if not (0.0 <= self.s_min < self.s_max <= self.s_cap):
            raise ValueError(f"EV {self.id}: need 0 <= s_min < s_max <= s_cap")
        if self.x_max <= 0.0:
            raise ValueError(f"EV {self.id}: x_max must be > 0")
        if self.weight <= 0.0:
            raise ValueError(f"EV {self.id}: weight must be > 0")
        if self.delta_max < 0.0:
            raise ValueError(f"EV {self.id}: delta_max must be >= 0")
        if not (0.0 <= self.c_up <= self.c_max * (1 + 1e-12)):
            raise ValueError(f"EV {self.id}: need 0 <= c_up <= c_max")

    @property
    def c_max(self) -> float:
        return float(self.degradation.value(self.x_max))


class Fleet:
    """Column view of a list of ``EVParams``; attribute names mirror EVParams."""

    def __init__(self, evs: Sequence[EVParams]):
        if not evs:
            raise ValueError("fleet must contain at least one EV")
        self.evs = tuple(evs)
        self.ids = np.array([ev.id for ev in evs])
        self.id = self.ids
        for name in ("s_cap", "s_min", "s_max", "x_max", "c_up", "delta_max", "weight"):
            setattr(self, name, np.array([getattr(ev, name) for ev in evs], dtype=float))
        kinds = {type(ev.degradation) for ev in evs}
        if len(kinds) != 1:
            raise ValueError("all EVs in a fleet must share one degradation model kind")
        self.degradation = kinds.pop().stack([ev.degradation for ev in evs])
        self.c_max = self.degradation.value(self.x_max)

    def __len__(self) -> int:
        return len(self.evs)

    @property
    def size(self) -> int:
        return len(self.evs)


@dataclass
class EVState:
    """Mutable per-EV simulation state. K is frozen (k_locked) while away."""

    energy: float
    available: bool = True
    J: float = 0.0
    H: float = 0.0
    K: float = 0.0

    @property
    def k_locked(self) -> bool:
        return not self.available


class FleetState:
    """Array form of ``EVState`` for a whole fleet."""

    def __init__(self, energy, J=None, H=None, K=None, available=None):
        self.s = np.array(energy, dtype=float)
        n = self.s.shape[0]
        self.avail = np.ones(n, bool) if available is None else np.array(available, bool)
        self.prev_avail = self.avail.copy()
        self.J = np.zeros(n) if J is None else np.array(J, dtype=float)
        self.H = np.zeros(n) if H is None else np.array(H, dtype=float)
        self.K = np.zeros(n) if K is None else np.array(K, dtype=float)

    @property
    def just_returned(self) -> np.ndarray:
        return self.avail & ~self.prev_avail

    def ev_state(self, i: int) -> EVState:
        return EVState(float(self.s[i]), bool(self.avail[i]),
                       float(self.J[i]), float(self.H[i]), float(self.K[i]))

    def copy(self) -> "FleetState":
        out = FleetState(self.s, self.J, self.H, self.K, self.avail)
        out.prev_avail = self.prev_avail.copy()
        return out


@dataclass(frozen=True)
class SlotSignal:
    """One realization of the exogenous state: request, prices, availability."""

    G: float
    e_s: float
    e_d: float
    avail: np.ndarray

    @property
    def down(self) -> bool:
        return self.G > 0.0

    @property
    def up(self) -> bool:
        return self.G < 0.0


@dataclass
class Allocation:
    """Per-slot decision of a controller."""

    x_d: np.ndarray
    x_u: np.ndarray
    b: np.ndarray
    external_cost: float
    z: np.ndarray | None = None
    wear: np.ndarray | None = None   # degradation cost per EV this slot
    physical_clips: int = 0

    @property
    def x(self) -> np.ndarray:
        """Regulation amount per EV, whichever direction was served."""
        return self.x_d + self.x_u


# --------------------------------------------------------------------------
# Operations
# --------------------------------------------------------------------------

def slot_indicators(G: float) -> tuple[bool, bool]:
    """(regulation down, regulation up) indicators; both False when G == 0."""
    return G > 0.0, G < 0.0


def effective_bounds(ev, s):
    """Energy-feasible regulation bounds (h_down, h_up) at energy s."""
    s = np.asarray(s, dtype=float)
    if np.any(s < -FEAS_TOL) or np.any(s > np.asarray(ev.s_cap) + FEAS_TOL):
        raise InvariantViolation("energy state outside [0, s_cap]")
    h_d = np.clip(np.minimum(ev.x_max, ev.s_max - s), 0.0, ev.x_max)
    h_u = np.clip(np.minimum(ev.x_max, s - ev.s_min), 0.0, ev.x_max)
    if h_d.ndim == 0:
        return float(h_d), float(h_u)
    return h_d, h_u


def effective_charge(x_d, x_u, G: float, available=True):
    """Signed energy change b = 1_d*x_d - 1_u*x_u; zero when the EV is away."""
    d, u = slot_indicators(G)
    b = float(d) * np.asarray(x_d, dtype=float) - float(u) * np.asarray(x_u, dtype=float)
    return np.where(available, b, 0.0)


def apply_energy_update(state: EVState, x_id: float, x_iu: float, signal: SlotSignal,
                        ev: EVParams | None = None) -> tuple[EVState, float]:
    """Advance one EV's energy by one slot of regulation service.

    Returns the new state and b. When ``ev`` is given the new energy is
    checked against the preferred range.
    """
    if not state.available:
        return replace(state), 0.0
    b = float(effective_charge(x_id, x_iu, signal.G))
    new = replace(state, energy=state.energy + b)
    if ev is not None and not (ev.s_min - FEAS_TOL <= new.energy <= ev.s_max + FEAS_TOL):
        raise InvariantViolation(
            f"energy {new.energy:.12g} left preferred range [{ev.s_min}, {ev.s_max}]", ev=ev.id)
    return new, b


def external_cost(signal: SlotSignal, x_d, x_u) -> float:
    """Cost of clearing the unserved part of the request with external energy."""
    d, u = slot_indicators(signal.G)
    gap_d = signal.G - float(np.sum(x_d)) if d else 0.0
    gap_u = -signal.G - float(np.sum(x_u)) if u else 0.0
    if gap_d < -FEAS_TOL or gap_u < -FEAS_TOL:
        raise InvariantViolation(
            f"over-allocation: served more than requested (gap {min(gap_d, gap_u):.3g})")
    if not d and (np.any(np.asarray(x_d) > FEAS_TOL)):
        raise InvariantViolation("regulation-down amount allocated in a non-down slot")
    if not u and (np.any(np.asarray(x_u) > FEAS_TOL)):
        raise InvariantViolation("regulation-up amount allocated in a non-up slot")
    return max(gap_d, 0.0) * signal.e_s + max(gap_u, 0.0) * signal.e_d


def degradation_cost(ev, x):
    """C_i(x) for x in [0, x_max]."""
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr < -FEAS_TOL) or np.any(x_arr > np.asarray(ev.x_max) + FEAS_TOL):
        raise ValueError("regulation amount outside [0, x_max]")
    out = ev.degradation.value(np.clip(x_arr, 0.0, ev.x_max))
    return float(out) if np.ndim(out) == 0 else out


def rate_to_slot_energy(rate_kw: float, slot_seconds: float) -> float:
    """Maximum energy per slot (kWh) for a charging rate in kW."""
    return rate_kw * slot_seconds / 3600.0

