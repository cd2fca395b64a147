"""
Seedable generator of the exogenous system state: regulation request,
external-energy prices, and per-EV availability.

Random streams are numpy PCG64 generators keyed off one master seed with
``SeedSequence(seed, spawn_key=...)``:

    (0,)         regulation signal and prices
    (1, id, 0)   availability chain of EV ``id``
    (1, id, 1)   return-energy draws of EV ``id``
    (1, id, 2)   initial energy of EV ``id``

Per-EV keys depend only on the EV id, so an EV's availability trace does not
change when other EVs are added to or removed from the fleet. Uniforms are
drawn in fixed-size blocks for speed; the block size is part of the stream
definition and must not change between releases.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .model import EVParams, Fleet, SlotSignal

log = logging.getLogger(__name__)

BLOCK = 1024
MAX_RETURN_TRIES = 10_000


@dataclass(frozen=True)
class ScenarioConfig:
    G_lo: float | None = None     # default -G_hi
    G_hi: float | None = None     # default: sum of x_max over the fleet
    G_levels: int = 200
    price_lo: float = 0.10
    price_hi: float = 0.12
    price_levels: int = 200
    p_return: float = 0.95
    p_leave: float | None = None  # default 1 - p_return
    return_jitter: float = 0.05   # fraction of s_cap
    initial_energy: str = "uniform"  # or "midpoint"
    seed: int = 0

    def __post_init__(self):
        for name in ("p_return", "p_leave"):
            p = getattr(self, name)
            if p is not None and not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be a probability, got {p}")
        if self.G_levels < 2 or self.price_levels < 1:
            raise ValueError("need G_levels >= 2 and price_levels >= 1")
        if not 0.0 <= self.price_lo <= self.price_hi:
            raise ValueError("need 0 <= price_lo <= price_hi")
        if self.return_jitter < 0.0:
            raise ValueError("return_jitter must be >= 0")
        if self.initial_energy not in ("uniform", "midpoint"):
            raise ValueError("initial_energy must be 'uniform' or 'midpoint'")

    def resolve(self, fleet: Fleet) -> "ScenarioConfig":
        """Fill the fleet-dependent defaults."""
        g_hi = float(np.sum(fleet.x_max)) if self.G_hi is None else self.G_hi
        g_lo = -g_hi if self.G_lo is None else self.G_lo
        if g_lo > g_hi:
            raise ValueError("G_lo must not exceed G_hi")
        p_leave = 1.0 - self.p_return if self.p_leave is None else self.p_leave
        return replace(self, G_lo=g_lo, G_hi=g_hi, p_leave=p_leave)

    @property
    def e_max(self) -> float:
        return self.price_hi


def grid_step(lo: float, hi: float, levels: int) -> float:
    return 0.0 if levels <= 1 else (hi - lo) / (levels - 1)


def grid_value(lo: float, hi: float, levels: int, k):
    """k-th point of the uniform grid of ``levels`` points on [lo, hi]."""
    if levels <= 1:
        return lo + 0.0 * np.asarray(k, dtype=float)
    val = lo + np.asarray(k, dtype=float) * grid_step(lo, hi, levels)
    # pin the top endpoint exactly
    return np.where(np.asarray(k) == levels - 1, hi, val)


def advance_availability(avail, u, p_return: float, p_leave: float) -> np.ndarray:
    """One step of the two-state presence chain per EV, given uniforms u.

    An away EV returns when u < p_return; a present EV leaves when u < p_leave.
    """
    avail = np.asarray(avail, dtype=bool)
    u = np.asarray(u, dtype=float)
    return np.where(avail, u >= p_leave, u < p_return)


def draw_signal_and_prices(cfg: ScenarioConfig, rng: np.random.Generator):
    """Draw (G, e_s, e_d) uniformly from their grids."""
    if cfg.G_hi is None or cfg.G_lo is None:
        raise ValueError("scenario config is unresolved; call cfg.resolve(fleet)")
    kg, ks, kd = rng.integers(0, [cfg.G_levels, cfg.price_levels, cfg.price_levels])
    return (float(grid_value(cfg.G_lo, cfg.G_hi, cfg.G_levels, kg)),
            float(grid_value(cfg.price_lo, cfg.price_hi, cfg.price_levels, ks)),
            float(grid_value(cfg.price_lo, cfg.price_hi, cfg.price_levels, kd)))


class UniformStream:
    """Uniform [0, 1) draws from ``rng``, generated ``block`` at a time."""

    def __init__(self, rng: np.random.Generator, block: int = BLOCK):
        self.rng = rng
        self.block = block
        self._buf = []

    def next(self) -> float:
        if not self._buf:
            self._buf = self.rng.random(self.block).tolist()[::-1]
        return self._buf.pop()


def draw_return_energy(ev: EVParams, s_leave: float, jitter: float, stream) -> float:
    """Energy on return: uniform on s_leave +- jitter*s_cap, resampled until it
    lands in the preferred range.

    ``stream`` is a ``UniformStream`` or a numpy Generator.
    """
    if isinstance(stream, np.random.Generator):
        stream = UniformStream(stream, 16)
    width = jitter * ev.s_cap
    if width == 0.0:
        return float(s_leave)
    lo = s_leave - width
    for _ in range(MAX_RETURN_TRIES):
        s = lo + 2.0 * width * stream.next()
        if ev.s_min <= s <= ev.s_max:
            return s
    clamped = float(np.clip(s_leave, ev.s_min, ev.s_max))
    log.warning("EV %s: return-energy rejection gave up after %d tries; clamped to %g",
                ev.id, MAX_RETURN_TRIES, clamped)
    return clamped


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


class ScenarioGenerator:
    """Owns all random streams of one simulation replica."""

    def __init__(self, cfg: ScenarioConfig, fleet: Fleet):
        self.cfg = cfg.resolve(fleet)
        self.fleet = fleet
        seed = self.cfg.seed
        self._signal_rng = _stream(seed, 0)
        ids = [int(i) for i in fleet.ids]
        self._avail_rngs = [_stream(seed, 1, i, 0) for i in ids]
        self._return_streams = [UniformStream(_stream(seed, 1, i, 1)) for i in ids]
        self._init_rngs = [_stream(seed, 1, i, 2) for i in ids]
        self._u_block = np.empty((len(ids), 0))
        self._u_pos = 0
        self._sig_block = np.empty((0, 3), dtype=np.int64)
        self._sig_pos = 0
        c = self.cfg
        self._G_grid = grid_value(c.G_lo, c.G_hi, c.G_levels, np.arange(c.G_levels))
        self._p_grid = grid_value(c.price_lo, c.price_hi, c.price_levels,
                                  np.arange(c.price_levels))

    def initial_energy(self) -> np.ndarray:
        f = self.fleet
        if self.cfg.initial_energy == "midpoint":
            return 0.5 * (f.s_min + f.s_max)
        return np.array([rng.uniform(lo, hi) for rng, lo, hi
                         in zip(self._init_rngs, f.s_min, f.s_max)])

    def initial_availability(self) -> np.ndarray:
        return np.ones(len(self.fleet), dtype=bool)

    def _next_uniforms(self) -> np.ndarray:
        if self._u_pos >= self._u_block.shape[1]:
            self._u_block = np.stack([rng.random(BLOCK) for rng in self._avail_rngs])
            self._u_pos = 0
        u = self._u_block[:, self._u_pos]
        self._u_pos += 1
        return u

    def advance(self, avail) -> np.ndarray:
        return advance_availability(avail, self._next_uniforms(),
                                    self.cfg.p_return, self.cfg.p_leave)

    def signal(self, avail) -> SlotSignal:
        if self._sig_pos >= self._sig_block.shape[0]:
            c = self.cfg
            self._sig_block = self._signal_rng.integers(
                0, [c.G_levels, c.price_levels, c.price_levels], size=(BLOCK, 3))
            self._sig_pos = 0
        kg, ks, kd = self._sig_block[self._sig_pos]
        self._sig_pos += 1
        return SlotSignal(float(self._G_grid[kg]), float(self._p_grid[ks]),
                          float(self._p_grid[kd]), np.asarray(avail, dtype=bool))

    def return_energy(self, i: int, s_leave: float) -> float:
        return draw_return_energy(self.fleet.evs[i], s_leave, self.cfg.return_jitter,
                                  self._return_streams[i])
