"""Closed-form per-machine network transfer per training iteration.

Per-variable transfer, with w the gradient payload in bytes and N the machine
count (one worker per machine assumed):

    dense  PS: owner machine 2w(N-1) total, every other machine 2w
    dense  AR: every machine 4w(N-1)/N  (ring allreduce)
    sparse PS: as dense PS with w scaled by the touched fraction
    sparse AR: every machine 2w(N-1)   (allgatherv; no reduction possible)

Multi-GPU effects (local aggregation, per-GPU pushes, per-GPU allgatherv
blocks) are applied by :func:`transfer_model` based on the plan; the
single-variable formulas stay in the one-worker-per-machine regime.
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import ClusterSpec, GraphSpec, SpecError, VariableSpec, partition_variable
from .placement import (
    DistributedPlan,
    Mechanism,
    MechanismPolicy,
    transform_ar,
    transform_hybrid,
    transform_ps,
)


@dataclass(frozen=True)
class TransferReport:
    """Per-machine (egress, ingress) bytes for one iteration."""

    per_machine: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "per_machine", tuple(tuple(p) for p in self.per_machine))

    @property
    def bottleneck_machine(self) -> int:
        return max(
            range(len(self.per_machine)),
            key=lambda i: max(self.per_machine[i]),
        )

    @property
    def bottleneck_bytes(self) -> float:
        return max(max(eg, ing) for eg, ing in self.per_machine)

    @property
    def total_bytes(self) -> float:
        return sum(eg + ing for eg, ing in self.per_machine)

    def machine_total(self, i: int) -> float:
        eg, ing = self.per_machine[i]
        return eg + ing

    def __add__(self, other: "TransferReport") -> "TransferReport":
        if len(self.per_machine) != len(other.per_machine):
            raise ValueError("machine counts differ")
        return TransferReport(
            tuple(
                (a[0] + b[0], a[1] + b[1])
                for a, b in zip(self.per_machine, other.per_machine)
            )
        )

    def to_rows(self) -> list[dict]:
        return [
            {"machine": i, "egress_bytes": eg, "ingress_bytes": ing}
            for i, (eg, ing) in enumerate(self.per_machine)
        ]


def _zeros(n: int) -> list[list[float]]:
    return [[0.0, 0.0] for _ in range(n)]


def _payload_transfer(
    payload: float,
    mech: Mechanism,
    cluster: ClusterSpec,
    owner: int | None,
    push_multiplier: int = 1,
    gather_blocks_per_machine: int = 1,
) -> list[list[float]]:
    """Per-machine [egress, ingress] for one gradient payload.

    ``push_multiplier`` models per-GPU pushes when local aggregation is off;
    ``gather_blocks_per_machine`` models per-GPU allgatherv contributions.
    Both are 1 in the analytic one-worker-per-machine regime.
    """
    n = cluster.machines
    bytes_pm = _zeros(n)
    if n == 1:
        return bytes_pm
    if mech == Mechanism.PS:
        if owner is None or not (0 <= owner < n):
            raise SpecError(f"PS transfer requires an owner machine in [0, {n}), got {owner}")
        for m in range(n):
            if m == owner:
                # Pull: serve payload to every other machine. Push: receive one
                # (aggregated) or G (per-GPU) gradients back from each.
                bytes_pm[m][0] += payload * (n - 1)
                bytes_pm[m][1] += payload * (n - 1) * push_multiplier
            else:
                bytes_pm[m][1] += payload
                bytes_pm[m][0] += payload * push_multiplier
    else:
        g = gather_blocks_per_machine
        if g == 1:
            # Ring allreduce and one-block-per-machine allgatherv both move
            # payload*(N-1)/N or payload*(N-1) per direction.
            per_dir = payload * (n - 1)
            for m in range(n):
                bytes_pm[m][0] += per_dir
                bytes_pm[m][1] += per_dir
        else:
            # Direct-exchange allgatherv over N*G participants: each of the G
            # local blocks goes to every remote GPU.
            remote = n * g - g
            for m in range(n):
                bytes_pm[m][0] += payload * g * remote
                bytes_pm[m][1] += payload * g * remote
    return bytes_pm


def transfer_one_variable(
    var: VariableSpec,
    mech: Mechanism,
    cluster: ClusterSpec,
    owner: int | None = None,
) -> TransferReport:
    """Per-machine transfer for a single variable (one worker per machine)."""
    n = cluster.machines
    if mech == Mechanism.AR:
        if owner is not None:
            raise SpecError("owner is only meaningful for the PS mechanism")
        if var.kind == "dense":
            per_dir = 2.0 * var.payload_bytes * (n - 1) / n
            return TransferReport(tuple((per_dir, per_dir) for _ in range(n)))
        bytes_pm = _payload_transfer(var.payload_bytes, mech, cluster, None)
    else:
        bytes_pm = _payload_transfer(var.payload_bytes, mech, cluster, owner)
    return TransferReport(tuple((eg, ing) for eg, ing in bytes_pm))


def transfer_model(
    graph: GraphSpec, plan: DistributedPlan, cluster: ClusterSpec
) -> TransferReport:
    """Per-machine transfer for all variables under a validated plan.

    Accounts for GPUs per machine: without local aggregation each GPU pushes
    its own gradient, and allgatherv exchanges one block per GPU.
    """
    n = cluster.machines
    g = cluster.gpus_per_machine
    bytes_pm = _zeros(n)
    push_multiplier = 1 if plan.local_agg_enabled else g
    for var in graph.variables:
        mech = plan.mech_of[var.name]
        if mech == Mechanism.AR:
            if var.kind == "dense":
                per_dir = 2.0 * var.payload_bytes * (n - 1) / n
                for m in range(n):
                    bytes_pm[m][0] += per_dir
                    bytes_pm[m][1] += per_dir
            else:
                part = _payload_transfer(
                    var.payload_bytes, mech, cluster, None, gather_blocks_per_machine=g
                )
                for m in range(n):
                    bytes_pm[m][0] += part[m][0]
                    bytes_pm[m][1] += part[m][1]
        else:
            pset = partition_variable(var, plan.partitions_of[var.name])
            for p, elems in pset.partitions:
                payload = var.partition_payload_bytes(elems)
                part = _payload_transfer(
                    payload, mech, cluster, plan.owner_of(var.name, p), push_multiplier
                )
                for m in range(n):
                    bytes_pm[m][0] += part[m][0]
                    bytes_pm[m][1] += part[m][1]
    return TransferReport(tuple((eg, ing) for eg, ing in bytes_pm))


def build_plan_for(
    architecture: str,
    graph: GraphSpec,
    cluster: ClusterSpec,
    policy: MechanismPolicy | None = None,
    partitions: dict[str, int] | None = None,
) -> DistributedPlan:
    """Build the plan for one of the four architecture labels."""
    if architecture == "ar":
        return transform_ar(graph, cluster)
    if architecture == "ps_naive":
        return transform_ps(graph, cluster, local_agg=False, partitions=partitions)
    if architecture == "ps_opt":
        return transform_ps(graph, cluster, local_agg=True, partitions=partitions)
    if architecture == "hybrid":
        return transform_hybrid(graph, cluster, policy=policy, partitions=partitions)
    raise SpecError(f"unknown architecture {architecture!r}")


ARCHITECTURES = ("ar", "ps_naive", "ps_opt", "hybrid")


def compare_architectures(
    graph: GraphSpec,
    cluster: ClusterSpec,
    policy: MechanismPolicy | None = None,
    partitions: dict[str, int] | None = None,
) -> list[dict]:
    """Analytic comparison rows for all four architectures.

    The analytic iteration time is a lower bound: bottleneck-machine bytes over
    NIC bandwidth, plus compute.
    """
    rows = []
    for arch in ARCHITECTURES:
        plan = build_plan_for(arch, graph, cluster, policy, partitions)
        report = transfer_model(graph, plan, cluster)
        analytic_us = report.bottleneck_bytes / cluster.nic_bytes_per_us + graph.compute_us_per_gpu
        rows.append(
            {
                "architecture": arch,
                "bottleneck_bytes": report.bottleneck_bytes,
                "bottleneck_machine": report.bottleneck_machine,
                "total_bytes": report.total_bytes,
                "analytic_time_us": analytic_us,
            }
        )
    return rows
