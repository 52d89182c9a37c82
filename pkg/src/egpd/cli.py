"""Command line interface.

Scenario arguments are YAML files (see ``egpd.scenario_io``) or ``preset:NAME``.
Exit codes: 0 pass, 1 usage error, 2 scenario/schema/infeasibility error,
3 a reported check failed.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .experiments import PRESET_RUNNERS, run_fluid_expA, run_lp
from .fluid import check_convergence, integrate, matching_fluid
from .matching import MatchingError, map_to_network, simulate
from .model import ModelError, check_drift_condition, check_ncond, reduce_drift_subspace
from .oracle import LPError, OracleError, solve_matching_lp
from .presets import BIPARTITE_ITEMS, PRESET_NAMES, get_preset
from .report import RunReport, SchemaError, output_dir, scenario_digest, write_csv
from .scenario_io import ScenarioFile, ScenarioFileError, load_scenario, scenario_to_yaml
from .sweep import SWEEP_PARAMS, sweep, sweep_rows

EXIT_OK, EXIT_USAGE, EXIT_SCHEMA, EXIT_CHECK = 0, 1, 2, 3
STABLE_SLOPE = 0.01  # queue growth over the second half, as a fraction of the arrival rate


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class _Fail(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def resolve_scenario(arg: str) -> ScenarioFile:
    if arg.startswith("preset:"):
        name = arg.split(":", 1)[1]
        if name not in PRESET_NAMES:
            raise _Fail(EXIT_SCHEMA, f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}")
        s = get_preset(name).scenario
        top = BIPARTITE_ITEMS[:4] if name == "bipartite_profit" else None
        return ScenarioFile(s, top, arg)
    try:
        return load_scenario(arg)
    except FileNotFoundError as exc:
        raise _Fail(EXIT_SCHEMA, str(exc))
    except (ScenarioFileError, ModelError) as exc:
        raise _Fail(EXIT_SCHEMA, f"{arg}: {exc}")


def _overrides(s, args):
    changes = {k: getattr(args, k) for k in ("beta", "m", "horizon", "seed") if getattr(args, k, None) is not None}
    if getattr(args, "policy", None):
        changes["completion_policy"] = args.policy
    return s.with_(**changes) if changes else s


def _emit(rep: RunReport, out: Path, stem: str, csvs: dict, quiet: bool = False) -> None:
    for name, (header, rows) in csvs.items():
        write_csv(out / f"{name}.csv", header, rows)
    rep.write(out / f"{stem}_report.yaml")
    if not quiet:
        for c in rep.checks:
            print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}  {c.detail}")
        print(f"wrote {out / (stem + '_report.yaml')}")


def queue_growth(r) -> float:
    """Slope of the total physical queue over the second half of the run,
    normalised by the total mean arrival rate (about 1 with no service)."""
    T = r.horizon
    if T < 4:
        return float("nan")
    t = np.arange(T // 2, T + 1)
    slope = np.polyfit(t, r.Qhat[T // 2 :].sum(axis=1), 1)[0]
    lam = r.scenario.arrivals.mean.sum()
    return float(slope / lam) if lam > 0 else float(slope)


def cmd_simulate(args) -> int:
    sf = resolve_scenario(args.scenario)
    s = _overrides(sf.scenario, args)
    t0 = time.perf_counter()
    try:
        r = simulate(s, exhaustive=not args.single_completion)
    except MatchingError as exc:
        raise _Fail(EXIT_SCHEMA, str(exc))
    rep = RunReport(f"simulate:{s.name}", scenario_digest(s), s.seed, 0.0)
    labels = s.matching_labels()
    growth = queue_growth(r)
    rep.values.update(
        slots=r.horizon,
        beta=s.beta,
        m=s.m,
        avg_reward=r.avg_reward,
        internal_avg_reward=s.m * float(r.sum_X[-1]),
        avg_holding_cost=r.avg_holding_cost,
        avg_profit=r.avg_profit,
        completed_rates=dict(zip(labels, r.completed_rates())),
        virtual_rates=dict(zip(labels, r.virtual_rates())),
        mean_abs_Q=r.mean_abs_Q,
        queue_growth=growth,
        stable=bool(growth < STABLE_SLOPE),
        violations=r.violations,
    )
    try:
        lp = solve_matching_lp(s)
        rep.values.update(lp_value=lp.value, lp_rates=dict(zip(labels, lp.rates)))
    except OracleError as exc:
        rep.values["lp_value"] = f"unavailable ({exc})"
    rep.check("queue relations hold at every check", r.total_violations == 0, f"{r.total_violations} violations")
    rep.wall_time = time.perf_counter() - t0
    out = output_dir(args.out)
    print(f"{s.name}: {r.horizon} slots, avg reward {r.avg_reward:.4f}, profit {r.avg_profit:.4f}, "
          f"mean |Q| {r.mean_abs_Q:.2f}, stable {rep.values['stable']}")
    _emit(rep, out, s.name, {f"{s.name}_metrics": r.metrics_rows(args.stride)})
    return EXIT_OK if rep.passed else EXIT_CHECK


def cmd_lp(args) -> int:
    sf = resolve_scenario(args.scenario)
    s = _overrides(sf.scenario, args)
    try:
        rep = run_lp(s)
    except (OracleError, LPError) as exc:
        raise _Fail(EXIT_SCHEMA, f"LP infeasible or unsolvable: {exc}")
    v = rep.values
    print(f"{'matching':<16}{'rate':>12}{'reward':>10}")
    for label, rate, w in zip(s.matching_labels(), v["rates"], s.rewards):
        print(f"{label:<16}{rate:>12.6f}{w:>10g}")
    print(f"value {v['value']:.9g}")
    print("item prices " + " ".join(f"{p:.6g}" for p in v["duals"]["items"]) + f"  budget price {v['duals']['budget']:.6g}")
    rep.write(output_dir(args.out) / f"{s.name}_lp.yaml")
    return EXIT_OK


def cmd_fluid(args) -> int:
    sf = resolve_scenario(args.scenario)
    s = _overrides(sf.scenario, args)
    t0 = time.perf_counter()
    try:
        mf = matching_fluid(s, args.c)
    except (OracleError, LPError, MatchingError) as exc:
        raise _Fail(EXIT_SCHEMA, str(exc))
    N = mf.region.dim
    if args.start == "zero-state":
        x0, q0 = mf.zero_state()
    else:
        x0, q0 = np.zeros(N), np.zeros(N)
    tr = integrate(mf.region, mf.mapped.utility, x0, q0, args.t_end, args.h, args.mode, mf.solution, args.rho_every)
    conv = check_convergence(tr, mf.mapped.net, mf.mapped.utility, mf.solution)
    rep = RunReport(f"fluid:{s.name}", scenario_digest(s), s.seed, 0.0)
    rep.values.update(
        t_end=args.t_end,
        h=args.h,
        per_slot_value=s.m * mf.mapped.utility.value(tr.x[-1]),
        lp_per_slot_value=mf.per_slot_value,
        terminal_rho_Vstar_per_slot=s.m * conv.terminal_rho,
        sup_q=conv.sup_q,
        q_growth_last_half=conv.q_growth,
        price_gap=conv.dual_gap,
        comp_slackness=conv.comp_slackness,
        entry_time=tr.entry_time(),
    )
    rep.check("terminal distance to optimal face < 0.05", s.m * conv.terminal_rho < 0.05, f"{s.m * conv.terminal_rho:.4g}")
    rep.check("q bounded with no growth over the last half", conv.q_growth <= 1e-2 * max(1.0, conv.sup_q), f"{conv.q_growth:.3g}")
    rep.wall_time = time.perf_counter() - t0
    rvs = np.full(len(tr), np.nan)
    rvs[tr.rho_index] = conv.rho_Vstar
    _emit(rep, output_dir(args.out), f"{s.name}_fluid", {f"{s.name}_fluid": tr.rows(args.rho_every, rvs)})
    return EXIT_OK if rep.passed else EXIT_CHECK


def bipartite_inputs(sf: ScenarioFile):
    """NCond inputs from a scenario whose matchings each pair one top item with one bottom item."""
    s = sf.scenario
    labels = list(s.item_labels)
    top = [labels.index(t) for t in sf.bipartite_top]
    bottom = [i for i in range(len(labels)) if i not in top]
    edges = []
    for mt in s.matchings[1:]:
        used = np.flatnonzero(mt.mu)
        tops = [i for i in used if i in top]
        bots = [i for i in used if i in bottom]
        if len(tops) != 1 or len(bots) != 1:
            raise _Fail(EXIT_SCHEMA, f"matching {mt.label or mt.id} is not a top-bottom pair")
        edges.append((top.index(tops[0]), bottom.index(bots[0])))
    lam = s.arrivals.mean
    return lam[top], lam[bottom], edges


def cmd_check(args) -> int:
    sf = resolve_scenario(args.scenario)
    s = sf.scenario
    rep = RunReport(f"check:{s.name}", scenario_digest(s), s.seed, 0.0)
    t0 = time.perf_counter()
    net = map_to_network(s).net
    raw = check_drift_condition(net)
    rep.values["drift_condition_raw_margin"] = raw.margin
    holds = raw.holds
    detail = f"raw margin {raw.margin:.3g}"
    if not raw.holds:
        red = reduce_drift_subspace(net)
        after = check_drift_condition(red.reduced)
        rep.values.update(reduced_dimension=red.dim, drift_condition_reduced_margin=after.margin)
        holds = after.holds
        detail += f"; after reduction to {red.dim} free dims margin {after.margin:.3g}"
    rep.check("Drift condition (after subspace reduction if needed)", holds, detail)
    if sf.bipartite_top:
        try:
            nc = check_ncond(*bipartite_inputs(sf))
        except ModelError as exc:
            raise _Fail(EXIT_SCHEMA, str(exc))
        viol = None if nc.violating_subset is None else sorted(sf.bipartite_top[i] for i in nc.violating_subset)
        rep.values["ncond_violating_subset"] = viol
        rep.check("NCond", nc.stabilizable, "" if viol is None else f"violated by T={viol}")
    rep.wall_time = time.perf_counter() - t0
    _emit(rep, output_dir(args.out), f"{s.name}_check", {})
    return EXIT_OK if rep.passed else EXIT_CHECK


def cmd_sweep(args) -> int:
    sf = resolve_scenario(args.scenario)
    s = _overrides(sf.scenario, args)
    t0 = time.perf_counter()
    try:
        rows = sweep(s, args.param, args.values, args.replicates, args.workers)
    except (ValueError, MatchingError) as exc:
        raise _Fail(EXIT_USAGE if isinstance(exc, ValueError) else EXIT_SCHEMA, str(exc))
    rep = RunReport(f"sweep:{s.name}:{args.param}", scenario_digest(s), s.seed, time.perf_counter() - t0)
    header, body = sweep_rows(rows, args.param)
    rep.values["rows"] = [dict(zip(header, r)) for r in body]
    total = sum(r.violations for r in rows)
    rep.check("queue relations hold at every check", total == 0, f"{total} violations")
    print(f"{args.param:>10} {'reward':>10} {'holding':>10} {'profit':>10} {'mean|Q|':>10}")
    for r in rows:
        print(f"{r.value:>10g} {r.avg_reward:>10.4f} {r.avg_holding_cost:>10.4f} {r.avg_profit:>10.4f} {r.mean_abs_Q:>10.2f}")
    _emit(rep, output_dir(args.out), f"{s.name}_sweep_{args.param}", {f"{s.name}_sweep_{args.param}": (header, body)})
    return EXIT_OK if rep.passed else EXIT_CHECK


def cmd_preset(args) -> int:
    names = PRESET_NAMES if args.name == "all" else (args.name,)
    if args.name == "fluid_expA":
        names = ()
        runs = [("fluid_expA", run_fluid_expA())]
    else:
        runs = []
    for n in names:
        if n not in PRESET_RUNNERS:
            raise _Fail(EXIT_USAGE, f"unknown preset {n!r}; choose from {', '.join(PRESET_NAMES)}, fluid_expA, all")
        runs.append((n, PRESET_RUNNERS[n](workers=args.workers)))
    out = output_dir(args.out)
    ok = True
    for n, run in runs:
        print(f"== {n} ({run.report.wall_time:.1f} s)")
        _emit(run.report, out, n, run.csvs)
        ok &= run.report.passed
    return EXIT_OK if ok else EXIT_CHECK


def cmd_export(args) -> int:
    out = Path(args.dir)
    out.mkdir(parents=True, exist_ok=True)
    for n in PRESET_NAMES:
        top = BIPARTITE_ITEMS[:4] if n == "bipartite_profit" else None
        path = out / f"{n}.yaml"
        path.write_text(scenario_to_yaml(get_preset(n).scenario, top))
        print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="egpd", description="Greedy primal-dual matching control: simulation, LP and fluid tools.")
    p.add_argument("--version", action="version", version=f"egpd {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, overrides=True):
        sp.add_argument("scenario", help="YAML scenario file or preset:NAME")
        sp.add_argument("--out", help="output directory (default $EGPD_OUTPUT_DIR or ./egpd_out)")
        if overrides:
            sp.add_argument("--beta", type=float)
            sp.add_argument("--m", type=int)
            sp.add_argument("--horizon", type=int)
            sp.add_argument("--seed", type=int)

    sp = sub.add_parser("simulate", help="run the virtual/physical scheme")
    common(sp)
    sp.add_argument("--policy", choices=("fcfs", "cost-priority"))
    sp.add_argument("--stride", type=int, default=10, help="metrics CSV row spacing in slots")
    sp.add_argument("--single-completion", action="store_true", help="complete at most one matching per round")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("lp", help="solve the static matching LP")
    common(sp)
    sp.set_defaults(func=cmd_lp)

    sp = sub.add_parser("fluid", help="integrate the fluid trajectory of the mapped network")
    common(sp)
    sp.add_argument("--t-end", type=float, default=50.0)
    sp.add_argument("--h", type=float, default=1e-3)
    sp.add_argument("--mode", choices=("lowest", "averaged"), default="lowest")
    sp.add_argument("--rho-every", type=int, default=500)
    sp.add_argument("--c", type=float, help="mapping constant (default max reward + 1)")
    sp.add_argument("--start", choices=("origin", "zero-state"), default="origin")
    sp.set_defaults(func=cmd_fluid)

    sp = sub.add_parser("check", help="Drift condition and (for bipartite scenarios) NCond")
    common(sp, overrides=False)
    sp.set_defaults(func=cmd_check)

    sp = sub.add_parser("sweep", help="independent runs over a parameter grid")
    common(sp)
    sp.add_argument("--param", choices=SWEEP_PARAMS, default="beta")
    sp.add_argument("--values", type=float, nargs="+", required=True)
    sp.add_argument("--replicates", type=int, default=1)
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("preset", help="run a reference experiment and compare against its references")
    sp.add_argument("name", help=f"one of {', '.join(PRESET_NAMES)}, fluid_expA, all")
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_preset)

    sp = sub.add_parser("export-presets", help="write the preset scenarios as YAML files")
    sp.add_argument("dir")
    sp.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _Fail as exc:
        print(f"egpd: error: {exc}", file=sys.stderr)
        return exc.code
    except SchemaError as exc:
        print(f"egpd: output schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA


if __name__ == "__main__":
    sys.exit(main())
