"""
Virtual queues and the constants that tie them to the battery limits.

J tracks excess degradation over c_up, H tracks the gap between the auxiliary
variable z and the served amount x, and K is the energy state shifted by c_i.
K is re-seeded from the measured energy each time an EV comes back and is
frozen while the EV is away.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Fleet, UtilityModel


@dataclass(frozen=True)
class DerivedConstants:
    mu: float
    V: float
    V_max: float
    c: np.ndarray          # per-EV shift c_i (kWh)
    B: float
    e_max: float
    limiting_ev: int       # id of the EV that sets V_max
    warnings: tuple[str, ...] = ()

    @property
    def v_mult(self) -> float:
        return self.V / self.V_max


def v_max(fleet: Fleet, mu: float, e_max: float) -> tuple[float, int]:
    """Largest V that keeps every EV inside its preferred range, and the id of
    the EV attaining it."""
    per_ev = (fleet.s_max - fleet.s_min - 4.0 * fleet.x_max) / (2.0 * (fleet.weight * mu + e_max))
    k = int(np.argmin(per_ev))
    return float(per_ev[k]), int(fleet.ids[k])


def shift_constants(fleet: Fleet, mu: float, e_max: float, V: float) -> np.ndarray:
    return fleet.s_min + 2.0 * fleet.x_max + V * (fleet.weight * mu + e_max)


def drift_constant(fleet: Fleet) -> float:
    """Constant term B of the per-slot drift-minus-welfare bound."""
    c_up, c_max = fleet.c_up, fleet.c_max
    terms = (2.0 * fleet.x_max ** 2 + fleet.delta_max ** 2
             + np.maximum(c_up ** 2, (c_max - c_up) ** 2))
    return 0.5 * float(np.sum(terms))


def derive_constants(fleet: Fleet, util: UtilityModel, e_max: float,
                     V_requested: float) -> DerivedConstants:
    if V_requested <= 0.0:
        raise ValueError("V must be > 0")
    mu = util.mu
    vmax, who = v_max(fleet, mu, e_max)
    if vmax <= 0.0:
        raise ValueError(f"V_max = {vmax:.6g} <= 0; EV {who} has too narrow a preferred range")
    notes = ()
    if V_requested > vmax * (1.0 + 1e-12):
        notes = (f"V = {V_requested:.6g} exceeds V_max = {vmax:.6g}; "
                 "energy bounds are no longer guaranteed",)
    return DerivedConstants(mu=mu, V=float(V_requested), V_max=vmax,
                            c=shift_constants(fleet, mu, e_max, V_requested),
                            B=drift_constant(fleet), e_max=float(e_max),
                            limiting_ev=who, warnings=notes)


def update_J(J, ev, x_id, x_iu, G: float):
    """J' = [J + 1_d C(x_d) + 1_u C(x_u) - c_up]^+."""
    wear = (G > 0.0) * ev.degradation.value(x_id) + (G < 0.0) * ev.degradation.value(x_iu)
    return np.maximum(J + wear - ev.c_up, 0.0)


def update_H(H, z, x):
    """H' = H + z - x (signed, no projection)."""
    return H + z - x


def update_K(K, s, c, b, just_returned):
    """Re-seed K = s - c for EVs that just returned, else K' = K + b.

    Away EVs have b = 0, so their K stays locked.
    """
    return np.where(just_returned, s - c, K + b)
