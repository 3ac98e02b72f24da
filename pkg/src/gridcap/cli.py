"""Command-line entry point: ``gridcap {hc,doe,compare,validate,gen-network}``."""
import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .assignment import Binaries, Fixed, Scenario, assign_phases
from .errors import GridcapError
from .lindist import build_lin_problem
from .lp_core import write_mps
from .netmodel import (Direction, build_cigre_lv, build_synthetic_feeder, load_network,
                       load_profile, save_network, save_profile, worst_case_snapshot)
from .results import Formulation, SolveResult
from .scenarios import (FAILED, INFEASIBLE, ComparisonCell, ComparisonTable, base_case_report,
                        compare_scenarios, doe_solve, voltage_comparison)

log = logging.getLogger("gridcap")

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2
GAP_WARN = 0.05
BUILDERS = {"cigre": (build_cigre_lv, 1), "synthetic64": (build_synthetic_feeder, 7)}


class UsageError(Exception):
    def __init__(self, message, flag=None):
        super().__init__(message)
        self.flag = flag


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _csv_list(value):
    return [v.strip() for v in value.split(",") if v.strip()]


def build_parser():
    p = _Parser(prog="gridcap", description="DER hosting capacity and operating envelopes "
                "for unbalanced low-voltage feeders.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, many):
        sp.add_argument("--network", required=True, help="network JSON file")
        sp.add_argument("--profiles", required=True, help="demand CSV (node,phase,period,p_kw,q_kvar)")
        sp.add_argument("--direction", required=True, choices=[d.value for d in Direction])
        sp.add_argument("--scenario", default="S1" if not many else "S1,S2,S3,S4,S5",
                        help="scenario label" + (", comma separated" if many else ""))
        sp.add_argument("--formulation", default="lin" if not many else "lin,slp",
                        help="lin (LinDist3Flow) or slp (current-voltage)"
                        + (", comma separated" if many else ""))
        sp.add_argument("--gap", type=float, default=0.0, help="relative MILP gap")
        sp.add_argument("--seed", type=int, default=0, help="seed of the random scenarios")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--dump-lp", action="store_true",
                        help="also write the linearised programs in MPS format")

    common(sub.add_parser("hc", help="static hosting capacity on the worst-case snapshot"), False)
    doe = sub.add_parser("doe", help="per-period operating envelope")
    common(doe, False)
    doe.add_argument("--workers", type=int, default=1, help="worker processes")
    common(sub.add_parser("compare", help="scenario x formulation hosting-capacity table"), True)
    val = sub.add_parser("validate", help="parse inputs and check the no-DER base cases")
    val.add_argument("--network", required=True)
    val.add_argument("--profiles")
    val.add_argument("--out", default=None)
    gen = sub.add_parser("gen-network", help="write a built-in feeder and its demand profile")
    gen.add_argument("kind", choices=sorted(BUILDERS))
    gen.add_argument("--seed", type=int, default=None)
    gen.add_argument("--out", default=".", help="output directory")
    return p


# ------------------------------------------------------------------ helpers
def _seed(args):
    env = os.environ.get("GRIDCAP_SEED")
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"GRIDCAP_SEED must be an integer, got {env!r}", "GRIDCAP_SEED")
    return args.seed


def _check_common(args):
    if args.gap < 0:
        raise UsageError(f"gap must be non-negative, got {args.gap}", "--gap")
    if args.gap > GAP_WARN:
        log.warning("gap %.4g is above %.2g; the answer may be far from optimal", args.gap,
                    GAP_WARN)
    if getattr(args, "workers", 1) < 1:
        raise UsageError(f"workers must be at least 1, got {args.workers}", "--workers")
    try:
        forms = [Formulation.parse(f) for f in _csv_list(args.formulation)]
    except ValueError as exc:
        raise UsageError(str(exc), "--formulation")
    try:
        scens = [Scenario.parse(s, _seed(args)) for s in _csv_list(args.scenario)]
    except (ValueError, GridcapError) as exc:
        raise UsageError(str(exc), "--scenario")
    if not forms:
        raise UsageError("no formulation given", "--formulation")
    if not scens:
        raise UsageError("no scenario given", "--scenario")
    if args.command in ("hc", "doe") and (len(forms) > 1 or len(scens) > 1):
        raise UsageError(f"{args.command} takes one scenario and one formulation; use compare",
                         "--scenario" if len(scens) > 1 else "--formulation")
    return forms, scens


def _load_inputs(args):
    net = load_network(args.network)
    prof = load_profile(args.profiles, network=net)
    return net, prof


def _meta(args, seed):
    meta = {k: v for k, v in vars(args).items() if k not in ("workers", "out")}
    meta["seed"] = seed
    return meta


def _write_json(path, data):
    path.write_text(json.dumps(data, indent=1, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _write_voltages(path, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "phase", "u_pu_exact", "u_pu_lin"])
        for node, ph, ue, ul in rows:
            w.writerow([node, ph, repr(ue), repr(ul)])


def _zero_schedule(network, demand, direction):
    return SolveResult(Formulation.LINDIST, direction, network.der_nodes,
                       np.zeros((1, len(network.der_nodes), 3)), demand)


def _dump_lp(out, network, demand, direction, scenario, profile, tag):
    if scenario.kind.value == "S1":
        mode = Binaries()
    else:
        mode = Fixed(assign_phases(profile if scenario.kind.is_fixed else demand, scenario,
                                   direction, nodes=network.der_nodes).period(0))
    f = build_lin_problem(network, demand, direction, mode)
    bins = f.milp.binaries if f.milp is not None else ()
    path = out / f"lp_{tag}.mps"
    write_mps(f.lp, path, bins)
    return path


def _emit_infeasible(diags):
    """One JSON line per infeasible base case on stderr."""
    for d in diags:
        line = {"diagnostic": "infeasible base case", "period": d.get("period", 0),
                "min_voltage": d["min_voltage"], "violations": d["violations"]}
        if "direction" in d:
            line["direction"] = d["direction"]
        print(json.dumps(line, sort_keys=True), file=sys.stderr)


# ------------------------------------------------------------------ commands
def _run_table(args, forms, scens, seed):
    net, prof = _load_inputs(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    table = compare_scenarios(net, prof, args.direction, forms, scens, gap=args.gap, seed=seed)
    elapsed = time.perf_counter() - t0
    diags = [c.result.report.to_dict() for c in table.cells
             if c.status == INFEASIBLE and c.result is not None and c.result.report is not None]
    report = {"meta": _meta(args, seed), "results": table.to_dict(timing=False),
              "per_period": None, "diagnostics": diags}
    _write_json(out / "report.json", report)
    (out / "table.csv").write_text(table.to_csv())
    _write_json(out / "timing.json", {"total_s": elapsed,
                                      "cells": [c.row() for c in table.cells]})
    snap = worst_case_snapshot(prof, args.direction)
    chosen = next((c.result.solution for c in table.cells
                   if c.result is not None and c.result.solution is not None), None)
    if chosen is None:
        chosen = _zero_schedule(net, snap, Direction(args.direction))
    _write_voltages(out / "voltages.csv", voltage_comparison(net, chosen))
    if args.dump_lp:
        for sc in scens:
            _dump_lp(out, net, snap, Direction(args.direction), sc, prof, sc.label)
    for c in table.cells:
        print(f"{c.scenario:<12} {c.formulation:<18} {c.status:<14} {c.objective_kw:12.3f} kW")
    if diags:
        _emit_infeasible(diags)
        return EXIT_INFEASIBLE
    return EXIT_OK


def _run_doe(args, forms, scens, seed):
    net, prof = _load_inputs(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    direction = Direction(args.direction)
    t0 = time.perf_counter()
    res = doe_solve(net, prof, direction, scens[0], forms[0], gap=args.gap, workers=args.workers)
    elapsed = time.perf_counter() - t0
    bad = res.failed_periods
    status = "Optimal" if not bad else (INFEASIBLE if len(bad) == res.horizon else "Partial")
    cell = ComparisonCell(str(res.scenario), res.formulation, status, res.aggregate_kw,
                          float(res.times.sum()), args.gap, float(res.violations.max(initial=0.0)),
                          f"{len(bad)} of {res.horizon} periods without a solution" if bad else "")
    table = ComparisonTable(direction, [cell])
    diags = []
    for t in bad:
        if res.status[t] == INFEASIBLE:
            rep = base_case_report(net, prof.period(t), direction)
            d = rep.to_dict()
            d["period"] = t
            diags.append(d)
    report = {"meta": _meta(args, seed), "results": table.to_dict(timing=False),
              "per_period": res.to_dict(timing=False), "diagnostics": diags}
    _write_json(out / "report.json", report)
    (out / "table.csv").write_text(table.to_csv())
    (out / "schedule.csv").write_text(res.schedule_csv())
    _write_json(out / "timing.json", {"total_s": elapsed, "workers": args.workers,
                                      "period_s": res.times.tolist()})
    t_peak = int(np.argmax(res.per_period_kw)) if res.horizon else 0
    sched = SolveResult(res.formulation, direction, res.der_nodes, res.der_kw[t_peak:t_peak + 1],
                        prof.period(t_peak))
    _write_voltages(out / "voltages.csv", voltage_comparison(net, sched))
    if args.dump_lp:
        _dump_lp(out, net, prof.period(0), direction, scens[0], prof, f"{scens[0].label}_t0")
    print(f"{cell.scenario:<12} {cell.formulation:<18} {status:<10} aggregate "
          f"{res.aggregate_kw:.3f} kW over {res.horizon} periods")
    if diags:
        _emit_infeasible(diags)
        return EXIT_INFEASIBLE
    return EXIT_OK


def _run_validate(args):
    net = load_network(args.network)
    summary = {"network": {"nodes": len(net.nodes), "branches": len(net.branches),
                           "slack": net.slack, "der_nodes": list(net.der_nodes)}}
    diags = []
    if args.profiles:
        prof = load_profile(args.profiles, network=net)
        summary["profile"] = {"nodes": len(prof.nodes), "periods": prof.horizon}
        for d in Direction:
            rep = base_case_report(net, worst_case_snapshot(prof, d), d)
            summary[f"base_{d.value}_ok"] = rep.ok
            diags.append({"direction": d.value, **rep.to_dict()})
    summary["diagnostics"] = diags
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "report.json", summary)
    print(json.dumps({k: v for k, v in summary.items() if k != "diagnostics"}, sort_keys=True))
    return EXIT_OK


def _run_gen(args):
    builder, default_seed = BUILDERS[args.kind]
    seed = default_seed if args.seed is None else args.seed
    env = os.environ.get("GRIDCAP_SEED")
    if env is not None and env.strip():
        seed = int(env)
    net, prof = builder(seed=seed)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        save_network(net, out / f"{args.kind}.json")
        save_profile(prof, out / f"{args.kind}_day.csv")
    except OSError as exc:
        raise GridcapError(f"cannot write to {out}: {exc.strerror or exc}") from exc
    print(f"wrote {out / (args.kind + '.json')} and {out / (args.kind + '_day.csv')}")
    return EXIT_OK


def run(argv=None):
    """Parse ``argv`` and execute; returns the process exit code."""
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "gen-network":
            return _run_gen(args)
        if args.command == "validate":
            return _run_validate(args)
        forms, scens = _check_common(args)
        seed = _seed(args)
        if args.command == "doe":
            return _run_doe(args, forms, scens, seed)
        return _run_table(args, forms, scens, seed)
    except UsageError as exc:
        flag = f" ({exc.flag})" if exc.flag else ""
        print(f"gridcap: usage error: {exc}{flag}", file=sys.stderr)
        return EXIT_ERROR
    except (GridcapError, OSError) as exc:
        print(f"gridcap: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
