"""
Per-slot optimization kernels.

``solve_coupled`` minimizes a separable convex objective

    sum_i  a_i x_i + scale_i f_i(x_i),   0 <= x_i <= ub_i,   sum_i x_i <= R

by searching the multiplier lam >= 0 of the budget. For a fixed lam every
item decouples into a scalar box problem whose minimizer x_i(lam) is
non-increasing in lam; the search finds lam with sum_i x_i(lam) = R.

The search first brackets lam between two consecutive item breakpoints (the
lam values where an item leaves 0 or reaches its upper bound). Inside that
bracket each item's state is fixed and the budget sum is continuous, so a
safeguarded secant/bisection iteration finishes it; for quadratic costs the
sum is affine there and the first secant step is exact. Items with a linear
objective (scale == 0) jump from ub to 0 at a breakpoint; when the root sits
on such a jump the leftover budget goes to the tied items in order of
adjusted coefficient, then item index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Fleet, FleetState, NegUtilityCost, SlotSignal, UtilityModel

MAX_ITER = 200
LAM_RTOL = 1e-12
BUDGET_TOL = 1e-10
ORACLE_MAX_POINTS = 50_000_000


@dataclass
class CoupledProblem:
    """min sum a*x + scale*f(x) s.t. 0 <= x <= ub, sum x <= budget."""

    a: np.ndarray
    scale: np.ndarray
    ub: np.ndarray
    budget: float
    cost: object

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        scale = np.asarray(self.scale, dtype=float)
        ub = np.asarray(self.ub, dtype=float)
        n = max(a.size, scale.size, ub.size)
        self.a, self.scale, self.ub = (np.broadcast_to(v, (n,)).copy() for v in (a, scale, ub))
        if np.any(self.ub < 0.0):
            raise ValueError("upper bounds must be >= 0")
        if np.any(self.scale < 0.0):
            raise ValueError("cost scales must be >= 0")
        self._resp = None

    def __len__(self) -> int:
        return self.a.shape[0]

    def response(self, lam: float) -> np.ndarray:
        """Per-item minimizer of (a + lam) x + scale f(x) on the box."""
        if self._resp is None:
            fn = getattr(self.cost, "response_fn", None)
            self._resp = (fn(self.a, self.scale, self.ub) if fn is not None else
                          lambda lam: self.cost.argmin(self.a + lam, self.scale, self.ub))
        return self._resp(lam)

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(np.sum(self.a * x + self.scale * self.cost.value(x)))

    def breakpoints(self) -> tuple[np.ndarray, np.ndarray]:
        """(lam at which x_i reaches ub, lam at which x_i reaches 0)."""
        full = -self.a - self.scale * self.cost.derivative(self.ub)
        zero = -self.a - self.scale * self.cost.derivative(np.zeros_like(self.ub))
        return full, zero

    def lipschitz(self) -> float:
        """Sum over items of the objective's slope bound on each box; an
        l_inf perturbation of size h moves the objective by at most this * h."""
        d0 = self.a + self.scale * self.cost.derivative(np.zeros_like(self.ub))
        d1 = self.a + self.scale * self.cost.derivative(self.ub)
        return float(np.sum(np.maximum(np.abs(d0), np.abs(d1))))


class SolverError(RuntimeError):
    pass


def _fill(x_base, room, amount, order_key):
    """Hand out ``amount`` over items in ``order_key`` order, each up to room."""
    order = np.lexsort((np.arange(room.size), order_key))
    r = room[order]
    before = np.cumsum(r) - r
    take = np.zeros_like(room)
    take[order] = np.clip(amount - before, 0.0, r)
    return x_base + take


def solve_coupled(problem: CoupledProblem, full_output: bool = False):
    """Minimize the coupled separable problem by dual bisection.

    Returns x, or (x, info) with the multiplier and iteration count when
    ``full_output`` is set.
    """
    R = float(problem.budget)
    if R < 0.0:
        raise ValueError(f"budget must be >= 0, got {R}")
    n = len(problem)

    def done(x, lam, iters):
        x = np.clip(x, 0.0, problem.ub)
        if full_output:
            return x, {"lam": lam, "iterations": iters, "slack": R - float(x.sum())}
        return x

    if R == 0.0 or not np.any(problem.ub > 0.0):
        return done(np.zeros(n), 0.0, 0)

    x0 = problem.response(0.0)
    s0 = float(x0.sum())
    if s0 <= R:
        return done(x0, 0.0, 0)

    full, zero = problem.breakpoints()
    lam_top = max(float(np.max(zero)), 0.0) + 1.0
    cands = np.concatenate(([0.0], full, zero, [lam_top]))
    cands = np.unique(cands[(cands >= 0.0) & (cands <= lam_top) & np.isfinite(cands)])

    def total(lam):
        return float(problem.response(lam).sum())

    # bracket between consecutive breakpoints: total(cands[i]) > R >= total(cands[j])
    i, j = 0, cands.size - 1
    s_lo, s_hi = s0, total(cands[j])
    if s_hi > R:
        raise SolverError(f"budget sum {s_hi:.6g} > {R:.6g} at lam={cands[j]:.6g}")
    iters = 0
    while j - i > 1:
        m = (i + j) // 2
        s = total(cands[m])
        iters += 1
        if s > R:
            i, s_lo = m, s
        else:
            j, s_hi = m, s
    lo, hi = float(cands[i]), float(cands[j])

    # sum just left of hi; differs from s_hi only when linear items jump at hi
    hi_left = float(np.nextafter(hi, -np.inf))
    x_left = problem.response(hi_left)
    s_left = float(x_left.sum())
    if s_left > R:
        x_hi = problem.response(hi)
        room = np.maximum(x_left - x_hi, 0.0)
        return done(_fill(x_hi, room, R - float(x_hi.sum()), problem.a + hi), hi, iters)

    # continuous on (lo, hi): safeguarded secant / bisection
    f_lo, f_hi = s_lo - R, s_left - R
    use_secant = True
    for _ in range(MAX_ITER):
        width = hi - lo
        if width <= LAM_RTOL * (1.0 + abs(hi)) or -f_hi <= BUDGET_TOL:
            break
        mid = 0.5 * (lo + hi)
        m = lo + f_lo * width / (f_lo - f_hi) if use_secant and f_lo != f_hi else mid
        if not lo < m < hi:
            m = mid
        use_secant = not use_secant
        s = total(m)
        iters += 1
        if s > f_lo + R + BUDGET_TOL or s < f_hi + R - BUDGET_TOL:
            raise SolverError(f"budget sum not monotone in lam at lam={m:.6g}")
        if s > R:
            lo, f_lo = m, s - R
        else:
            hi, f_hi = m, s - R
    else:
        raise SolverError(f"dual search did not converge; residual {min(f_lo, -f_hi):.3g}")

    x_a = problem.response(lo)
    x_b = problem.response(hi) if hi != float(cands[j]) else x_left
    s_a, s_b = float(x_a.sum()), float(x_b.sum())
    theta = 0.0 if s_a <= s_b else (R - s_b) / (s_a - s_b)
    x = x_b + min(max(theta, 0.0), 1.0) * (x_a - x_b)
    return done(x, hi, iters)


def oracle_grid(problem: CoupledProblem, step: float) -> np.ndarray:
    """Exhaustive search over the per-item grids {0, step, ..., ub_i}."""
    n = len(problem)
    if n > 4:
        raise ValueError(f"oracle_grid handles at most 4 items, got {n}")
    if step <= 0.0:
        raise ValueError("step must be > 0")
    grids = []
    for u in problem.ub:
        g = np.arange(0.0, u, step)
        grids.append(np.append(g, u) if u > 0.0 else np.zeros(1))
    npts = int(np.prod([g.size for g in grids]))
    if npts > ORACLE_MAX_POINTS:
        raise ValueError(f"oracle grid too large ({npts} points)")
    mesh = np.meshgrid(*grids, indexing="ij", sparse=True)
    obj = 0.0
    load = 0.0
    for k, g in enumerate(mesh):
        obj = obj + problem.a[k] * g + problem.scale[k] * problem.cost.take(k).value(g)
        load = load + g
    obj = np.where(load <= problem.budget + 1e-12, obj, np.inf)
    idx = np.unravel_index(int(np.argmin(obj)), np.shape(obj))
    return np.array([grids[k][idx[k]] for k in range(n)])


def solve_aux(H, weight, V: float, util: UtilityModel, x_max, method: str = "auto"):
    """Minimize H z - weight V U(z) over [0, x_max], elementwise.

    ``method="bisect"`` forces bisection on the derivative even when the
    utility has a closed-form inverse slope.
    """
    if method not in ("auto", "bisect"):
        raise ValueError(f"unknown method {method!r}")
    H = np.asarray(H, dtype=float)
    if method == "auto" and hasattr(util, "inverse_derivative"):
        return NegUtilityCost(util, weight).argmin(H, V, x_max)
    k = np.asarray(weight, dtype=float) * V
    x_max = np.broadcast_to(np.asarray(x_max, dtype=float), np.broadcast(H, k).shape)
    grad0 = H - k * util.derivative(0.0)
    grad1 = H - k * util.derivative(x_max)
    lo = np.zeros_like(x_max, dtype=float)
    hi = np.array(x_max, dtype=float)
    while np.any(hi - lo > 1e-12):
        mid = 0.5 * (lo + hi)
        pos = H - k * util.derivative(mid) > 0.0
        lo = np.where(pos, lo, mid)
        hi = np.where(pos, mid, hi)
    z = 0.5 * (lo + hi)
    return np.where(grad0 >= 0.0, 0.0, np.where(grad1 <= 0.0, x_max, z))


def build_regdown_problem(fleet: Fleet, state: FleetState, signal: SlotSignal,
                          V: float) -> CoupledProblem:
    if not signal.G > 0.0:
        raise ValueError("regulation-down problem needs G > 0")
    return CoupledProblem(a=state.K - state.H - V * signal.e_s, scale=state.J,
                          ub=np.where(signal.avail, fleet.x_max, 0.0),
                          budget=signal.G, cost=fleet.degradation)


def build_regup_problem(fleet: Fleet, state: FleetState, signal: SlotSignal,
                        V: float) -> CoupledProblem:
    if not signal.G < 0.0:
        raise ValueError("regulation-up problem needs G < 0")
    return CoupledProblem(a=-state.K - state.H - V * signal.e_d, scale=state.J,
                          ub=np.where(signal.avail, fleet.x_max, 0.0),
                          budget=-signal.G, cost=fleet.degradation)

