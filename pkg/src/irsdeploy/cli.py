"""Command-line entry point: ``irsdeploy {compare,scaling,partition,allocate}``.

Every subcommand writes CSV to ``--out`` (or stdout) and is deterministic for
a fixed ``--seed``.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from dataclasses import replace

from .association import (AllocationPlan, allocate_elements, allocation_objective,
                          build_association, evaluation_sets)
from .harness import (REFERENCE_ALLOCATIONS, Strategy, compare_strategies, rate_rows, RATE_COLUMNS,
                      scaling_study, write_trials_csv)
from .scenario import Side, default_scenario, read_scenario


def _counts(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return value


def _scenario(args):
    scenario = read_scenario(args.scenario) if args.scenario else default_scenario()
    opts = scenario.optimizer
    if args.tol is not None:
        opts = replace(opts, tol=args.tol)
    if args.max_iters is not None:
        opts = replace(opts, max_iters=args.max_iters)
    return replace(scenario, optimizer=opts)


def _emit(args, columns, rows) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            fh.write(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())


def cmd_compare(args) -> None:
    scenario = _scenario(args)
    allocations = dict(REFERENCE_ALLOCATIONS)
    for strategy, counts in (("user-side", args.user_side), ("bs-side", args.bs_side),
                             ("hybrid", args.hybrid)):
        if counts is not None:
            allocations[Strategy(strategy)] = counts
    reports = compare_strategies(scenario, args.trials, args.seed, allocations,
                                 args.subsurfaces, args.eval_seeds, args.partition_method)
    _emit(args, RATE_COLUMNS, rate_rows(reports))
    if args.trials_out:
        write_trials_csv(reports, args.trials_out)


def cmd_scaling(args) -> None:
    kinds = ["single", "double"] if args.kind == "both" else [args.kind]
    rows = []
    for kind in kinds:
        r = scaling_study(args.n, kind)
        rows += [{"link_kind": kind, "n_elements": n, "received_power_mw": repr(p),
                  "slope": repr(r.slope), "seed": args.seed}
                 for n, p in zip(r.n_list, r.powers)]
    _emit(args, ("link_kind", "n_elements", "received_power_mw", "slope", "seed"), rows)


def cmd_partition(args) -> None:
    scenario = _scenario(args)
    counts = args.allocation or REFERENCE_ALLOCATIONS[Strategy.HYBRID]
    alloc = AllocationPlan(counts)
    scenario = scenario.with_element_counts(counts)
    needs_search = args.method == "exhaustive" and any(
        irs.side is Side.BS and n for irs, n in zip(scenario.irs_list, counts))
    sets = evaluation_sets(scenario, args.seed, args.eval_seeds) if needs_search else []
    plan = build_association(scenario, alloc, sets, args.subsurfaces, args.method,
                             scenario.optimizer)
    rows = []
    for i, part in sorted(plan.partitions.items()):
        for s, user in enumerate(part.assignment):
            rows.append({"irs": scenario.irs_list[i].id, "subsurface": s + 1,
                         "first_element": s * part.size, "elements": part.size,
                         "user": "" if user is None else user + 1,
                         "objective": "" if part.objective is None else repr(part.objective),
                         "method": args.method, "seed": args.seed})
    _emit(args, ("irs", "subsurface", "first_element", "elements", "user", "objective",
                 "method", "seed"), rows)


def cmd_allocate(args) -> None:
    scenario = _scenario(args)
    scored = []

    def objective(counts):
        value = allocation_objective(scenario, counts, args.subsurfaces, args.eval_seeds,
                                     args.seed, args.partition_method)
        scored.append((counts, value))
        return value

    best = allocate_elements(scenario, args.total, args.granularity, args.method,
                             args.subsurfaces, args.eval_seeds, args.seed,
                             args.partition_method, objective)
    rows = [{"allocation": "/".join(map(str, counts)), "min_rate": repr(value),
             "selected": int(counts == best.counts), "method": args.method, "seed": args.seed}
            for counts, value in scored]
    _emit(args, ("allocation", "min_rate", "selected", "method", "seed"), rows)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="irsdeploy",
                                     description="IRS deployment link-level simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenario=True):
        p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
        p.add_argument("--out", help="CSV output path (default stdout)")
        if scenario:
            p.add_argument("--scenario", help="scenario YAML file (default: bundled cell)")
            p.add_argument("--subsurfaces", type=_positive, default=10,
                           help="subsurfaces per BS-side IRS (default 10)")
            p.add_argument("--eval-seeds", type=_positive, default=10,
                           help="fading realizations scoring each search candidate")
            p.add_argument("--tol", type=float, help="optimizer relative tolerance")
            p.add_argument("--max-iters", type=_positive, help="optimizer round limit")

    p = sub.add_parser("compare", help="min-rate of user-side, BS-side and hybrid deployments")
    common(p)
    p.add_argument("--trials", type=_positive, default=500)
    p.add_argument("--partition-method", choices=("exhaustive", "statistical"),
                   default="exhaustive")
    p.add_argument("--user-side", type=_counts, help="element split, e.g. 0,200,200")
    p.add_argument("--bs-side", type=_counts, help="element split, e.g. 400,0,0")
    p.add_argument("--hybrid", type=_counts, help="element split, e.g. 300,50,50")
    p.add_argument("--trials-out", help="per-trial rate dump (CSV)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("scaling", help="received power versus element count")
    common(p, scenario=False)
    p.add_argument("--n", type=_counts, default=(64, 128, 256, 512, 1024),
                   help="element counts (default 64,128,256,512,1024)")
    p.add_argument("--kind", choices=("single", "double", "both"), default="both")
    p.set_defaults(func=cmd_scaling)

    p = sub.add_parser("partition", help="subsurface-to-user assignment of BS-side IRSs")
    common(p)
    p.add_argument("--allocation", type=_counts, help="element split (default 300,50,50)")
    p.add_argument("--method", choices=("exhaustive", "statistical"), default="exhaustive")
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("allocate", help="split an element budget across IRS sites")
    common(p)
    p.add_argument("--total", type=_positive, default=400)
    p.add_argument("--granularity", type=_positive, default=50)
    p.add_argument("--method", choices=("sweep", "relax"), default="sweep")
    p.add_argument("--partition-method", choices=("exhaustive", "statistical"),
                   default="exhaustive")
    p.set_defaults(func=cmd_allocate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except Exception as exc:
        print(f"irsdeploy {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
