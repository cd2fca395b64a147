"""
Welfare accounting and run diagnostics.

The time-averaged social welfare at horizon T is

    sum_i w_i U( (1/T) sum_t x_it ) - (1/T) sum_t e_t,

i.e. the utility of each EV's average regulation amount, minus the average
external-energy cost.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import Allocation, FleetState, UtilityModel
from .queues import DerivedConstants


@dataclass
class MetricsSeries:
    weight: np.ndarray
    utility: UtilityModel
    stride: int = 100
    slots: int = 0
    sum_x: np.ndarray = None
    sum_e: float = 0.0
    sum_wear: np.ndarray = None
    sum_b: np.ndarray = None
    sum_zx: np.ndarray = None
    # (slot count, welfare, average external cost)
    samples: list = field(default_factory=list)
    energy_violations: int = 0
    k_bound_violations: int = 0
    max_shift_residual: float = 0.0
    max_h_excess: float = -np.inf
    physical_clips: int = 0
    trace: list = field(default_factory=list)
    final: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=float)
        n = self.weight.shape[0]
        for name in ("sum_x", "sum_wear", "sum_b", "sum_zx"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(n))
        if self.stride < 1:
            raise ValueError("stride must be >= 1")

    @property
    def mean_x(self) -> np.ndarray:
        return self.sum_x / max(self.slots, 1)

    @property
    def mean_external_cost(self) -> float:
        return self.sum_e / max(self.slots, 1)

    def welfare(self) -> float:
        if self.slots == 0:
            return 0.0
        return welfare_from_means(self.weight, self.utility, self.mean_x,
                                  self.mean_external_cost)

    def summary(self) -> dict:
        T = max(self.slots, 1)
        out = {
            "slots": self.slots,
            "welfare": self.welfare(),
            "external_cost_avg": self.mean_external_cost,
            "utility_avg": float(np.sum(self.weight * self.utility.value(self.mean_x))),
            "energy_violations": self.energy_violations,
            "k_bound_violations": self.k_bound_violations,
            "max_shift_residual": self.max_shift_residual,
            "max_h_excess": float(self.max_h_excess),
            "physical_clips": self.physical_clips,
            "max_mean_wear": float(np.max(self.sum_wear)) / T,
            "max_abs_mean_b": float(np.max(np.abs(self.sum_b)) / T),
            "max_abs_mean_z_minus_x": float(np.max(np.abs(self.sum_zx)) / T),
        }
        out.update(self.final)
        return out


def welfare_from_means(weight, utility: UtilityModel, mean_x, mean_e: float) -> float:
    return float(np.sum(weight * utility.value(mean_x)) - mean_e)


def record_slot(series: MetricsSeries, alloc: Allocation, state: FleetState | None = None,
                violations: int = 0) -> MetricsSeries:
    """Fold one slot into the running sums; sample the welfare every ``stride`` slots."""
    x = alloc.x
    series.slots += 1
    series.sum_x += x
    series.sum_e += alloc.external_cost
    series.sum_b += alloc.b
    if alloc.wear is not None:
        series.sum_wear += alloc.wear
    if alloc.z is not None:
        series.sum_zx += alloc.z - x
    series.energy_violations += violations
    series.physical_clips += alloc.physical_clips
    if series.slots % series.stride == 0:
        series.samples.append((series.slots, series.welfare(), series.mean_external_cost))
    return series


def theory_gap_report(consts: DerivedConstants) -> tuple[float, float]:
    """(B, B/V): the drift constant and the resulting welfare-gap bound."""
    if consts.V <= 0.0:
        raise ValueError("V must be > 0")
    return consts.B, consts.B / consts.V
