"""Preset experiments and their reference checks (shared by the CLI and the
acceptance tests)."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import spearmanr

from .fluid import check_convergence, compare_scaled_simulation, integrate, matching_fluid
from .matching import lockstep, map_to_network, simulate
from .model import check_drift_condition, check_ncond, reduce_drift_subspace
from .oracle import solve_matching_lp
from .presets import EXP_C_ALPHA, bipartite_ncond_inputs, get_preset
from .report import RunReport, scenario_digest
from .sweep import beta_sweep, sweep_rows


@dataclass
class PresetRun:
    report: RunReport
    csvs: dict = field(default_factory=dict)  # file stem -> (header, rows)


def _start(name, s) -> RunReport:
    return RunReport(name, scenario_digest(s), int(s.seed), 0.0)


def run_lp(s) -> RunReport:
    t0 = time.perf_counter()
    rep = _start(f"lp:{s.name}", s)
    sol = solve_matching_lp(s)
    rep.values.update(
        value=sol.value,
        rates=sol.rates,
        duals={"items": sol.item_prices, "budget": sol.budget_price},
        residuals={
            "balance": float(np.abs(sol.rates @ s.mu - s.arrivals.mean).max()),
            "budget": float(sol.rates.sum() - s.m),
        },
    )
    rep.wall_time = time.perf_counter() - t0
    return rep


def run_expA(stride: int = 100) -> PresetRun:
    p = get_preset("expA")
    s = p.scenario
    t0 = time.perf_counter()
    rep = _start("expA", s)
    r = simulate(s)
    lp = solve_matching_lp(s)
    rates = r.completed_rates()[1:]
    ref = np.array(p.reference("egpd_rates"))
    rep.values.update(
        avg_reward=r.avg_reward,
        internal_avg_reward=s.m * float(r.sum_X[-1]),
        completed_rates=rates,
        virtual_rates=r.virtual_rates()[1:],
        lp_value=lp.value,
        lp_rates=lp.nonempty_rates(),
        table_egpd_rates=ref,
        mean_abs_Q=r.mean_abs_Q,
        slots=r.horizon,
        violations=r.violations,
    )
    rep.check("reward within 2% of 10.8", abs(r.avg_reward - 10.8) <= 0.02 * 10.8, f"{r.avg_reward:.4f}")
    dev = float(np.abs(rates - ref).max())
    rep.check("completed rates within 0.05 of published EGPD rates", dev <= 0.05, f"max deviation {dev:.4f}")
    rep.check("queue relations hold at every check", r.total_violations == 0, f"{r.total_violations} violations")
    rep.wall_time = time.perf_counter() - t0
    return PresetRun(rep, {"expA_metrics": r.metrics_rows(stride)})


def run_expB(workers: int = 1) -> PresetRun:
    p = get_preset("expB_beta_sweep")
    s = p.scenario
    t0 = time.perf_counter()
    rep = _start("expB_beta_sweep", s)
    rows = beta_sweep(s, p.betas, workers=workers)
    by = {r.value: r for r in rows}
    rep.values.update(
        betas=[r.value for r in rows],
        avg_reward=[r.avg_reward for r in rows],
        mean_abs_Q=[r.mean_abs_Q for r in rows],
        slots=len(rows) * s.horizon,
        violations=sum(r.violations for r in rows),
    )
    small = [r for r in rows if r.value <= 1.0]
    large = [r for r in rows if r.value >= 10.0]
    worst_small = min(r.avg_reward for r in small)
    rep.check(
        "reward >= 0.95 x 10.8 for beta <= 1",
        worst_small >= 0.95 * 10.8,
        ", ".join(f"beta={r.value:g}: {r.avg_reward:.3f}" for r in small),
    )
    ref = by[0.01].avg_reward
    rep.check(
        "reward for beta >= 10 at least 0.5 below beta = 0.01",
        all(r.avg_reward <= ref - 0.5 for r in large),
        ", ".join(f"beta={r.value:g}: {r.avg_reward:.3f}" for r in large),
    )
    ratio = by[0.01].mean_abs_Q / by[0.1].mean_abs_Q
    rep.check("mean |Q| ratio beta 0.01 vs 0.1 in [3, 30]", 3 <= ratio <= 30, f"{ratio:.2f}")
    rep.check("queue relations hold at every check", rep.values["violations"] == 0, f"{rep.values['violations']}")
    rep.wall_time = time.perf_counter() - t0
    return PresetRun(rep, {"expB_sweep": sweep_rows(rows)})


def run_expC(stride: int = 10) -> PresetRun:
    s = get_preset("expC_rate_change").scenario
    t0 = time.perf_counter()
    rep = _start("expC_rate_change", s)
    r = simulate(s)
    lp = solve_matching_lp(s, np.array(EXP_C_ALPHA))
    late = r.completed_rates(6000, 10000)
    dev = float(np.abs(late - lp.rates)[1:].max())
    rep.values.update(
        completed_rates_6000_10000=late[1:],
        post_change_lp_rates=lp.nonempty_rates(),
        post_change_lp_value=lp.value,
        avg_reward_6000_10000=float((r.reward[10000] - r.reward[6000]) / 4000),
        slots=r.horizon,
        violations=r.violations,
    )
    rep.check("late rates within 0.1 of post-change LP", dev <= 0.1, f"max deviation {dev:.4f}")
    rep.check("queue relations hold at every check", r.total_violations == 0, f"{r.total_violations} violations")
    rep.wall_time = time.perf_counter() - t0
    return PresetRun(rep, {"expC_metrics": r.metrics_rows(stride)})


def run_bipartite(workers: int = 1) -> PresetRun:
    p = get_preset("bipartite_profit")
    s = p.scenario
    t0 = time.perf_counter()
    rep = _start("bipartite_profit", s)
    rows = beta_sweep(s, p.betas, workers=workers)
    betas = np.array([r.value for r in rows])
    reward = np.array([r.avg_reward for r in rows])
    hold = np.array([r.avg_holding_cost for r in rows])
    profit = reward - hold
    rho = float(spearmanr(betas, hold)[0])
    k = int(np.argmax(profit))
    nc = check_ncond(*bipartite_ncond_inputs())
    net = map_to_network(s).net
    raw = check_drift_condition(net)
    red = reduce_drift_subspace(net)
    reduced = check_drift_condition(red.reduced)
    rep.values.update(
        betas=betas, avg_reward=reward, avg_holding_cost=hold, avg_profit=profit,
        lp_value=solve_matching_lp(s).value,
        slots=len(rows) * s.horizon,
        violations=sum(r.violations for r in rows),
        reduced_dimension=red.dim,
    )
    rep.check("holding cost decreasing in beta (Spearman <= -0.9)", rho <= -0.9, f"rho={rho:.3f}")
    rep.check("reward non-increasing in beta", bool(np.all(np.diff(reward) <= 0)), np.array2string(reward, precision=3))
    rep.check("profit maximised at an interior beta", 0 < k < len(rows) - 1, f"argmax beta={betas[k]:g}")
    rep.check("NCond holds", nc.stabilizable)
    rep.check("Drift condition fails in raw coordinates", not raw.holds, f"margin {raw.margin:.3g}")
    rep.check("Drift condition holds after subspace reduction", reduced.holds, f"margin {reduced.margin:.3g}")
    rep.check("queue relations hold at every check", rep.values["violations"] == 0, f"{rep.values['violations']}")
    rep.wall_time = time.perf_counter() - t0
    return PresetRun(rep, {"bipartite_sweep": sweep_rows(rows)})


def run_fluid_expA(t_end: float = 50.0, h: float = 1e-3, rho_every: int = 500) -> PresetRun:
    s = get_preset("expA").scenario
    t0 = time.perf_counter()
    rep = _start("fluid:expA", s)
    mf = matching_fluid(s)
    N = mf.region.dim
    tr = integrate(mf.region, mf.mapped.utility, np.zeros(N), np.zeros(N), t_end, h, solution=mf.solution, rho_every=rho_every)
    conv = check_convergence(tr, mf.mapped.net, mf.mapped.utility, mf.solution)
    m = s.m
    entry = tr.entry_time()
    fmin = tr.fstar_min_increment(entry) if entry is not None else float("nan")
    rep.values.update(
        per_slot_value=m * mf.mapped.utility.value(tr.x[-1]),
        lp_per_slot_value=mf.per_slot_value,
        terminal_rho_Vstar_per_slot=m * conv.terminal_rho,
        sup_q=conv.sup_q,
        q_growth_last_half=conv.q_growth,
        price_gap=conv.dual_gap,
        entry_time=entry,
        fstar_min_increment=fmin,
        start_distance_to_V=tr.rho_V[0],
        contraction_constant=tr.contraction_constant(),
    )
    rep.check("terminal distance to optimal face < 0.05", m * conv.terminal_rho < 0.05, f"{m * conv.terminal_rho:.4g}")
    rep.check("q bounded with no growth over the last half", conv.q_growth <= 1e-2 * max(1.0, conv.sup_q), f"{conv.q_growth:.3g}")
    rep.check("F* non-decreasing within 10h once x in V", entry is not None and fmin >= -10 * h, f"{fmin:.3g}")
    C = tr.contraction_constant()
    rep.check("distance to V contracts like exp(-t) within C h, C <= 10", C <= 10, f"C={C:.3g}, start distance {tr.rho_V[0]:.4g}")
    rep.wall_time = time.perf_counter() - t0
    rvs = np.full(len(tr), np.nan)
    rvs[tr.rho_index] = conv.rho_Vstar
    return PresetRun(rep, {"fluid_expA": tr.rows(stride=rho_every, rho_Vstar=rvs)})


def run_scaling(betas=(0.1, 0.03, 0.01), t_end: float = 10.0) -> PresetRun:
    s = get_preset("expA").scenario
    t0 = time.perf_counter()
    rep = _start("scaling:expA", s)
    rows = compare_scaled_simulation(s, betas, t_end)
    dev = [r.mean_deviation for r in rows]
    rep.values.update(betas=list(betas), mean_deviation=dev, sup_deviation=[r.sup_deviation for r in rows])
    ok = all(b <= 0.9 * a for a, b in zip(dev, dev[1:]))
    rep.check("mean deviation drops >= 10% at each smaller beta", ok, ", ".join(f"{d:.4f}" for d in dev))
    rep.wall_time = time.perf_counter() - t0
    return PresetRun(rep)


def run_equivalence(seeds=range(10), cs=(8.0, 20.0), slots: int = 1000) -> PresetRun:
    s = get_preset("expA").scenario
    t0 = time.perf_counter()
    rep = _start("equivalence:expA", s)
    mismatches = []
    qmax = 0.0
    for c in cs:
        for seed in seeds:
            r = lockstep(s, c, slots, seed)
            qmax = max(qmax, r.max_constrained_queue)
            if not r.identical:
                mismatches.append((c, seed, r.first_mismatch))
    rep.values.update(c_values=list(cs), seeds=list(seeds), slots=slots, mismatches=mismatches, max_constrained_queue=qmax)
    rep.check("identical decision sequences", not mismatches, f"{len(mismatches)} mismatching runs")
    rep.check("mapped constrained queues stay at 0", qmax == 0.0, f"{qmax}")
    rep.wall_time = time.perf_counter() - t0
    return PresetRun(rep)


PRESET_RUNNERS = {
    "expA": lambda workers=1: run_expA(),
    "expB_beta_sweep": lambda workers=1: run_expB(workers),
    "expC_rate_change": lambda workers=1: run_expC(),
    "bipartite_profit": lambda workers=1: run_bipartite(workers),
}
