"""
Named experiments and their CSV output.

Each experiment is a list of independent replicas (one controller, one
parameter point, one seed). Replicas may run in worker processes; results
are merged in submission order, so the CSV does not depend on scheduling.

fig2    welfare over time, WMRA at V = v_mult * V_max vs greedy, first seed
fig3    final welfare vs s_max / s_cap for p_return in {0.95, 0.05}
fig4    final welfare vs V / V_max, greedy as a reference column
fig5    energy sample path of one EV for V in {1, 2, 5} * V_max
custom  per-seed summary of both controllers at the configured v_mult
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .config import ExperimentConfig
from .queues import derive_constants

EXPERIMENTS = ("fig2", "fig3", "fig4", "fig5", "custom")
FIG3_S_MAX = (0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
FIG3_P = (0.95, 0.05)
FIG4_V_MULT = (0.2, 0.4, 0.6, 0.8, 1.0, 2.0, 3.0, 4.0, 5.0)
FIG5_V_MULT = (1.0, 2.0, 5.0)


@dataclass(frozen=True)
class Replica:
    cfg: ExperimentConfig
    kind: str
    v_mult: float
    seed: int
    slots: int
    stride: int
    trace_ev: int | None = None
    strict: bool | None = None


def run_replica(rep: Replica) -> dict:
    """Run one replica and return its summary (plus samples and trace)."""
    from .wmra import run_controller

    fleet = rep.cfg.build_fleet()
    util = rep.cfg.utility_model()
    scen = replace(rep.cfg.scenario, seed=rep.seed).resolve(fleet)
    base = derive_constants(fleet, util, scen.e_max, 1.0)
    consts = derive_constants(fleet, util, scen.e_max, rep.v_mult * base.V_max)
    series = run_controller(rep.kind, scen, fleet, consts, rep.slots, util=util,
                            stride=rep.stride, strict=rep.strict, trace_ev=rep.trace_ev)
    out = series.summary()
    out.update(V=consts.V, V_max=consts.V_max, seed=rep.seed, samples=series.samples,
               trace=series.trace)
    if rep.trace_ev is not None:
        out["trace_s_min"] = float(fleet.s_min[rep.trace_ev])
        out["trace_s_max"] = float(fleet.s_max[rep.trace_ev])
    return out


def run_all(replicas: list[Replica], threads: int = 1) -> list[dict]:
    if threads <= 1 or len(replicas) <= 1:
        return [run_replica(r) for r in replicas]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run_replica, replicas))


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _seeds(cfg: ExperimentConfig) -> list[int]:
    return [cfg.scenario.seed + k for k in range(cfg.run.seeds)]


def _mean(results, key):
    return float(np.mean([r[key] for r in results]))


def fig2(cfg: ExperimentConfig, threads: int = 1) -> tuple[list[str], list[list]]:
    T, stride, seed = cfg.run.slots, cfg.run.stride, cfg.scenario.seed
    w, g = run_all([Replica(cfg, "wmra", cfg.run.v_mult, seed, T, stride),
                    Replica(cfg, "greedy", cfg.run.v_mult, seed, T, stride)], threads)
    header = ["slot", "wmra_welfare", "greedy_welfare",
              "wmra_external_cost_usd", "greedy_external_cost_usd"]
    rows = [[sw, ww, gw, we, ge] for (sw, ww, we), (_, gw, ge)
            in zip(w["samples"], g["samples"])]
    return header, rows


def fig3(cfg: ExperimentConfig, threads: int = 1) -> tuple[list[str], list[list]]:
    points = [(p, f) for p in FIG3_P for f in FIG3_S_MAX]
    seeds = _seeds(cfg)
    reps = []
    for p, frac in points:
        c = cfg.with_fleet(s_max_frac=frac).with_scenario(p_return=p, p_leave=None)
        for kind in ("wmra", "greedy"):
            reps += [Replica(c, kind, cfg.run.v_mult, s, cfg.run.slots, cfg.run.slots)
                     for s in seeds]
    res = run_all(reps, threads)
    header = ["p_return", "s_max_frac", "V_max", "wmra_welfare", "greedy_welfare",
              "wmra_external_cost_usd", "greedy_external_cost_usd", "seeds"]
    rows = []
    k = len(seeds)
    for n, (p, frac) in enumerate(points):
        w = res[2 * n * k:(2 * n + 1) * k]
        g = res[(2 * n + 1) * k:(2 * n + 2) * k]
        rows.append([p, frac, w[0]["V_max"], _mean(w, "welfare"), _mean(g, "welfare"),
                     _mean(w, "external_cost_avg"), _mean(g, "external_cost_avg"), k])
    return header, rows


def fig4(cfg: ExperimentConfig, threads: int = 1) -> tuple[list[str], list[list]]:
    seeds = _seeds(cfg)
    T = cfg.run.slots
    reps = [Replica(cfg, "greedy", 1.0, s, T, T) for s in seeds]
    for m in FIG4_V_MULT:
        reps += [Replica(cfg, "wmra", m, s, T, T) for s in seeds]
    res = run_all(reps, threads)
    k = len(seeds)
    greedy = _mean(res[:k], "welfare")
    header = ["v_mult", "V", "wmra_welfare", "greedy_welfare", "wmra_external_cost_usd",
              "wmra_energy_violations", "seeds"]
    rows = []
    for n, m in enumerate(FIG4_V_MULT):
        w = res[(n + 1) * k:(n + 2) * k]
        rows.append([m, w[0]["V"], _mean(w, "welfare"), greedy, _mean(w, "external_cost_avg"),
                     _mean(w, "energy_violations"), k])
    return header, rows


def fig5(cfg: ExperimentConfig, threads: int = 1, trace_ev: int = 0):
    """Energy of fleet index ``trace_ev`` (a Type-I EV by default) sampled every
    ``stride`` slots; the full path is checked for range excursions."""
    T, stride, seed = cfg.run.slots, cfg.run.stride, cfg.scenario.seed
    res = run_all([Replica(cfg, "wmra", m, seed, T, 1, trace_ev=trace_ev)
                   for m in FIG5_V_MULT], threads)
    lo, hi = res[0]["trace_s_min"], res[0]["trace_s_max"]
    header = (["slot", "s_min_kwh", "s_max_kwh"]
              + [f"energy_kwh_v{m:g}" for m in FIG5_V_MULT])
    rows = []
    for t in range(stride - 1, T, stride):
        rows.append([t + 1, lo, hi] + [r["trace"][t] for r in res])
    summary_header = ["v_mult", "V", "traced_ev_excursions", "fleet_energy_violations",
                      "physical_clips"]
    summary = []
    for m, r in zip(FIG5_V_MULT, res):
        tr = np.asarray(r["trace"])
        exc = int(np.count_nonzero((tr < lo - 1e-9) | (tr > hi + 1e-9)))
        summary.append([m, r["V"], exc, r["energy_violations"], r["physical_clips"]])
    return header, rows, summary_header, summary


def custom(cfg: ExperimentConfig, threads: int = 1):
    seeds = _seeds(cfg)
    T = cfg.run.slots
    reps = [Replica(cfg, kind, cfg.run.v_mult, s, T, T)
            for s in seeds for kind in ("wmra", "greedy")]
    res = run_all(reps, threads)
    header = ["seed", "controller", "V", "welfare", "external_cost_usd", "energy_violations",
              "max_wear_ratio", "max_b_ratio", "max_J_over_T_ratio"]
    rows = [[r["seed"], r["controller"], r["V"] if r["controller"] == "wmra" else "",
             r["welfare"], r["external_cost_avg"], r["energy_violations"],
             r["max_wear_ratio"], r["max_b_ratio"], r["max_J_over_T_ratio"]] for r in res]
    return header, rows


def run_experiment(name: str, cfg: ExperimentConfig, out_dir, threads: int = 1) -> list[str]:
    """Run a named experiment and write its CSV file(s); returns the paths."""
    if name not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENTS)}")
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{name}.csv")
    if name == "fig5":
        header, rows, sh, srows = fig5(cfg, threads)
        write_csv(path, header, rows)
        spath = os.path.join(out_dir, "fig5_summary.csv")
        write_csv(spath, sh, srows)
        return [path, spath]
    header, rows = {"fig2": fig2, "fig3": fig3, "fig4": fig4, "custom": custom}[name](cfg, threads)
    write_csv(path, header, rows)
    return [path]
