"""Command-line planner pipeline.

Subcommands mirror the planning stages: ``transform`` emits a placed plan,
``estimate`` the closed-form transfer report, ``simulate`` one simulated
iteration plus the steady-state mean, ``tune`` the partition-count search, and
``compare`` all four architectures side by side.

Exit codes: 0 success, 1 validation error, 2 usage error.  Reports go to
stdout (JSON with sorted keys, or CSV); diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys

from .model import ClusterSpec, GraphSpec, SpecError, load_cluster_spec, load_graph_spec
from .placement import MechanismPolicy, plan_to_dict, validate_plan
from .simulate import ComputeProfile, simulate_iteration, simulate_training
from .transfer import ARCHITECTURES, build_plan_for, compare_architectures, transfer_model
from .tuning import TuningError, tune

# Server-side aggregation cost knobs used by all simulation commands.
DEFAULT_AGG_US_PER_MB = 20.0
DEFAULT_PARTITION_OVERHEAD_US = 25.0

_ARCH_FLAG = {"ar": "ar", "ps-naive": "ps_naive", "ps-opt": "ps_opt", "hybrid": "hybrid"}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparseplan",
        description="Plan, cost, simulate, and tune sparsity-aware data-parallel training.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("transform", "emit the placed distributed plan"),
        ("estimate", "emit the closed-form per-machine transfer report"),
        ("simulate", "simulate iterations and report times"),
        ("tune", "search the partition count and report the fitted model"),
        ("compare", "compare all architectures analytically and by simulation"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--graph", required=True, help="graph spec JSON file")
        cmd.add_argument("--cluster", required=True, help="cluster spec JSON file")
        cmd.add_argument(
            "--architecture",
            choices=sorted(_ARCH_FLAG),
            default="hybrid",
            help="architecture to plan (default: hybrid)",
        )
        cmd.add_argument(
            "--local-agg",
            dest="local_agg",
            action=argparse.BooleanOptionalAction,
            default=None,
            help="force local aggregation on or off for PS plans",
        )
        cmd.add_argument("--partitions", type=int, default=None,
                         help="partition count shared by partitionable sparse variables")
        cmd.add_argument("--threshold", type=float, default=0.10,
                         help="relative-improvement stop threshold for tuning")
        cmd.add_argument("--seed", type=int, default=0)
        cmd.add_argument("--iterations", type=int, default=100,
                         help="simulated training iterations (warmup half discarded)")
        cmd.add_argument("--output", choices=("json", "csv"), default="json")
        cmd.add_argument("--trace", default=None, metavar="PATH",
                         help="write the message trace as JSON lines to PATH")
    return parser


def _load_inputs(args) -> tuple[GraphSpec, ClusterSpec]:
    for path in (args.graph, args.cluster):
        try:
            with open(path):
                pass
        except OSError as exc:
            raise UsageError(f"cannot read {path}: {exc}") from exc
    with open(args.graph) as fh:
        graph = load_graph_spec(fh.read())
    with open(args.cluster) as fh:
        cluster = load_cluster_spec(fh.read())
    return graph, cluster


class UsageError(Exception):
    pass


def _partition_map(graph: GraphSpec, count: int | None) -> dict[str, int] | None:
    if count is None:
        return None
    if count < 1:
        raise SpecError(f"--partitions must be >= 1, got {count}")
    return {
        v.name: min(count, v.elements)
        for v in graph.variables
        if v.kind == "sparse" and v.partitionable
    }


def _build_plan(args, graph: GraphSpec, cluster: ClusterSpec):
    arch = _ARCH_FLAG[args.architecture]
    if args.local_agg is not None and arch in ("ps_naive", "ps_opt"):
        arch = "ps_opt" if args.local_agg else "ps_naive"
    plan = build_plan_for(
        arch, graph, cluster, MechanismPolicy(), _partition_map(graph, args.partitions)
    )
    problems = validate_plan(plan, graph, cluster)
    if problems:
        raise SpecError("invalid plan: " + "; ".join(problems))
    return plan


def _profile(graph: GraphSpec) -> ComputeProfile:
    return ComputeProfile(
        compute_us_per_gpu=graph.compute_us_per_gpu,
        partition_overhead_us=DEFAULT_PARTITION_OVERHEAD_US,
        agg_us_per_mb=DEFAULT_AGG_US_PER_MB,
    )


def _throughput(graph: GraphSpec, cluster: ClusterSpec, iter_time_us: float) -> float:
    items = graph.batch_per_gpu * cluster.total_gpus
    return items / (iter_time_us / 1e6)


def _write_trace(path: str, trace) -> None:
    with open(path, "w") as fh:
        for msg in trace:
            fh.write(json.dumps(msg.to_dict(), sort_keys=True) + "\n")


def _cmd_transform(args, graph, cluster) -> dict:
    plan = _build_plan(args, graph, cluster)
    return plan_to_dict(plan)


def _cmd_estimate(args, graph, cluster) -> dict:
    plan = _build_plan(args, graph, cluster)
    report = transfer_model(graph, plan, cluster)
    return {
        "architecture": plan.architecture,
        "per_machine": report.to_rows(),
        "bottleneck_machine": report.bottleneck_machine,
        "bottleneck_bytes": report.bottleneck_bytes,
        "total_bytes": report.total_bytes,
    }


def _cmd_simulate(args, graph, cluster) -> dict:
    plan = _build_plan(args, graph, cluster)
    profile = _profile(graph)
    stats = simulate_iteration(plan, graph, cluster, profile)
    mean = simulate_training(
        plan, graph, cluster, profile, iterations=args.iterations, seed=args.seed
    )
    if args.trace:
        _write_trace(args.trace, stats.trace)
    return {
        "architecture": plan.architecture,
        "iter_time_us": stats.iter_time_us,
        "mean_iter_time_us": mean,
        "phase_times_us": stats.phase_times,
        "per_machine": stats.per_machine_bytes.to_rows(),
        "throughput_items_per_sec": _throughput(graph, cluster, mean),
    }


def _cmd_tune(args, graph, cluster) -> dict:
    profile = _profile(graph)

    def plan_builder(p: int):
        return build_plan_for(
            "hybrid", graph, cluster, MechanismPolicy(), _partition_map(graph, p)
        )

    result = tune(
        graph,
        cluster,
        plan_builder,
        profile,
        threshold=args.threshold,
        iterations=args.iterations,
        seed=args.seed,
    )
    final = simulate_training(
        plan_builder(result.best_p),
        graph,
        cluster,
        profile,
        iterations=args.iterations,
        seed=args.seed,
    )
    doc = result.to_dict()
    doc["final_mean_iter_time_us"] = final
    doc["final_throughput_items_per_sec"] = _throughput(graph, cluster, final)
    return doc


def _cmd_compare(args, graph, cluster) -> dict:
    profile = _profile(graph)
    partitions = _partition_map(graph, args.partitions or cluster.machines)
    rows = compare_architectures(graph, cluster, MechanismPolicy(), partitions)
    for row in rows:
        plan = build_plan_for(
            row["architecture"], graph, cluster, MechanismPolicy(), partitions
        )
        mean = simulate_training(
            plan, graph, cluster, profile, iterations=args.iterations, seed=args.seed
        )
        row["simulated_time_us"] = mean
        row["throughput_items_per_sec"] = _throughput(graph, cluster, mean)
    return {"graph": graph.name, "rows": rows}


_COMMANDS = {
    "transform": _cmd_transform,
    "estimate": _cmd_estimate,
    "simulate": _cmd_simulate,
    "tune": _cmd_tune,
    "compare": _cmd_compare,
}


def _emit_csv(report: dict) -> str:
    """Flatten the report's row list (or the report itself) into CSV."""
    rows = report.get("rows") or report.get("per_machine")
    if rows is None:
        rows = [
            {k: v for k, v in report.items() if not isinstance(v, (list, dict))}
        ]
    buf = io.StringIO()
    fields = sorted({k for row in rows for k in row})
    writer = csv.DictWriter(buf, fieldnames=fields)
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row.get(k) for k in fields})
    return buf.getvalue()


def emit_report(report: dict, output: str = "json") -> str:
    """Render a report deterministically as JSON (sorted keys) or CSV."""
    if output == "csv":
        return _emit_csv(report)
    return json.dumps(report, sort_keys=True, indent=2)


def run(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        graph, cluster = _load_inputs(args)
        report = _COMMANDS[args.command](args, graph, cluster)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SpecError, TuningError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    sys.stdout.write(emit_report(report, args.output) + "\n")
    return 0


def main() -> None:
    raise SystemExit(run())


if __name__ == "__main__":
    main()
