"""Graph transformation: single-device graph -> placed distributed plan.

Three transformations are supported: allreduce-style replication (every GPU
holds a variable replica and collectives combine gradients), parameter-server
placement (one server per machine homes variables and their update chain), and
a hybrid that picks a mechanism per variable.
"""

from __future__ import annotations

import enum
import zlib
from dataclasses import dataclass, field

from .model import ClusterSpec, GraphSpec, PartitionSet, SpecError, VariableSpec, partition_variable


class Mechanism(enum.Enum):
    AR = "ar"
    PS = "ps"


# Roles a placed node can take.
ROLES = (
    "model_replica",
    "grad_producer",
    "allreduce",
    "allgatherv",
    "local_agg",
    "global_agg",
    "accumulator",
    "update",
    "variable_home",
    "replica_variable",
)

SERVER = "server"


@dataclass(frozen=True)
class MechanismPolicy:
    """Implementation-efficiency multipliers for the per-variable mechanism choice.

    With the defaults the comparison is a pure byte count, so every sparse
    variable resolves to the parameter-server mechanism.  Raising ``eff_ps``
    models a slower PS implementation and lets nearly-dense variables flip to
    allreduce.
    """

    eff_ar: float = 1.0
    eff_ps: float = 1.0


@dataclass(frozen=True)
class PlacedNode:
    id: str
    role: str
    machine: int
    device: str  # "gpu<k>" or "server"
    variable: str | None = None
    partition: int | None = None

    def key(self) -> tuple:
        """Identity modulo the node id, for isomorphism checks."""
        return (self.role, self.machine, self.device, self.variable, self.partition)


@dataclass(frozen=True)
class DistributedPlan:
    architecture: str  # "ar" | "ps_naive" | "ps_opt" | "hybrid"
    nodes: tuple[PlacedNode, ...]
    mech_of: dict[str, Mechanism]
    partitions_of: dict[str, int]
    chief: tuple[int, int]
    local_agg_enabled: bool

    def nodes_with(self, role: str, variable: str | None = None) -> list[PlacedNode]:
        return [
            n
            for n in self.nodes
            if n.role == role and (variable is None or n.variable == variable)
        ]

    def owner_of(self, variable: str, partition: int = 0) -> int:
        """Machine index homing a (variable, partition) under PS."""
        for n in self.nodes:
            if n.role == "variable_home" and n.variable == variable and n.partition == partition:
                return n.machine
        raise KeyError((variable, partition))

    def node_multiset(self) -> list[tuple]:
        return sorted(n.key() for n in self.nodes)


def _hash_start(name: str, machines: int) -> int:
    # Deterministic across processes, unlike builtin hash().
    return zlib.crc32(name.encode()) % machines


def assign_mechanism(
    var: VariableSpec, cluster: ClusterSpec, policy: MechanismPolicy | None = None
) -> Mechanism:
    """Pick allreduce or parameter-server for one variable.

    Dense variables always use allreduce.  A sparse variable uses PS unless
    treating it as dense is cheaper under the policy multipliers, i.e.
    eff_ar * 4w(N-1)/N < eff_ps * 4aw(N-1)/N, which reduces to
    eff_ar < eff_ps * alpha.
    """
    policy = policy or MechanismPolicy()
    if var.kind == "dense" or cluster.machines == 1:
        return Mechanism.AR
    if policy.eff_ar < policy.eff_ps * var.alpha:
        return Mechanism.AR
    return Mechanism.PS


def _worker_nodes(cluster: ClusterSpec) -> list[PlacedNode]:
    nodes = []
    for m in range(cluster.machines):
        for g in range(cluster.gpus_per_machine):
            dev = f"gpu{g}"
            nodes.append(PlacedNode(f"replica/{m}/{g}", "model_replica", m, dev))
            nodes.append(PlacedNode(f"grads/{m}/{g}", "grad_producer", m, dev))
    return nodes


def _ar_variable_nodes(var: VariableSpec, cluster: ClusterSpec) -> list[PlacedNode]:
    collective = "allreduce" if var.kind == "dense" else "allgatherv"
    nodes = []
    for m in range(cluster.machines):
        for g in range(cluster.gpus_per_machine):
            dev = f"gpu{g}"
            nodes.append(
                PlacedNode(f"var/{var.name}/{m}/{g}", "replica_variable", m, dev, var.name)
            )
            nodes.append(
                PlacedNode(f"{collective}/{var.name}/{m}/{g}", collective, m, dev, var.name)
            )
    return nodes


def _ps_variable_nodes(
    var: VariableSpec,
    owner_of_partition: dict[int, int],
    cluster: ClusterSpec,
    local_agg: bool,
) -> list[PlacedNode]:
    nodes = []
    for p, owner in owner_of_partition.items():
        for role in ("variable_home", "accumulator", "global_agg", "update"):
            nodes.append(
                PlacedNode(f"{role}/{var.name}/{p}", role, owner, SERVER, var.name, p)
            )
        if local_agg:
            for m in range(cluster.machines):
                nodes.append(
                    PlacedNode(
                        f"local_agg/{var.name}/{p}/{m}", "local_agg", m, "gpu0", var.name, p
                    )
                )
    return nodes


def _place_ps_variables(
    graph: GraphSpec,
    cluster: ClusterSpec,
    ps_vars: list[VariableSpec],
    partitions: dict[str, int] | None,
) -> dict[str, dict[int, int]]:
    """Home each (variable, partition) on a server machine.

    Unpartitioned variables go greedy largest-first onto the least-loaded
    server (ties by machine index); partitioned variables round-robin over
    servers starting at a hash of the variable name, so one variable's pieces
    spread across machines.
    """
    partitions = partitions or {}
    load = [0] * cluster.machines
    placement: dict[str, dict[int, int]] = {}

    partitioned = [v for v in ps_vars if partitions.get(v.name, 1) > 1]
    whole = [v for v in ps_vars if partitions.get(v.name, 1) <= 1]

    for var in sorted(partitioned, key=lambda v: v.name):
        pset = partition_variable(var, partitions[var.name])
        start = _hash_start(var.name, cluster.machines)
        owners = {}
        for p, elems in pset.partitions:
            m = (start + p) % cluster.machines
            owners[p] = m
            load[m] += elems * var.elem_bytes
        placement[var.name] = owners

    for var in sorted(whole, key=lambda v: (-v.size_bytes, v.name)):
        m = min(range(cluster.machines), key=lambda i: (load[i], i))
        placement[var.name] = {0: m}
        load[m] += var.size_bytes
    return placement


def _build_plan(
    architecture: str,
    graph: GraphSpec,
    cluster: ClusterSpec,
    mech_of: dict[str, Mechanism],
    partitions: dict[str, int] | None,
    local_agg: bool,
) -> DistributedPlan:
    partitions = dict(partitions or {})
    nodes = _worker_nodes(cluster)
    ps_vars = [v for v in graph.variables if mech_of[v.name] == Mechanism.PS]
    placement = _place_ps_variables(graph, cluster, ps_vars, partitions)

    partitions_of = {}
    for var in graph.variables:
        if mech_of[var.name] == Mechanism.AR:
            partitions_of[var.name] = 1
            nodes.extend(_ar_variable_nodes(var, cluster))
        else:
            partitions_of[var.name] = len(placement[var.name])
            nodes.extend(
                _ps_variable_nodes(var, placement[var.name], cluster, local_agg)
            )
    return DistributedPlan(
        architecture=architecture,
        nodes=tuple(nodes),
        mech_of=mech_of,
        partitions_of=partitions_of,
        chief=(0, 0),
        local_agg_enabled=local_agg,
    )


def transform_ar(graph: GraphSpec, cluster: ClusterSpec) -> DistributedPlan:
    """Replicate the graph on every GPU; collectives combine gradients."""
    mech_of = {v.name: Mechanism.AR for v in graph.variables}
    return _build_plan("ar", graph, cluster, mech_of, None, local_agg=False)


def transform_ps(
    graph: GraphSpec,
    cluster: ClusterSpec,
    local_agg: bool = True,
    partitions: dict[str, int] | None = None,
) -> DistributedPlan:
    """One server per machine homes variables; workers pull and push.

    ``local_agg=False`` is the naive mode: every GPU pushes its gradient
    across the network instead of one pre-summed push per machine.
    """
    _check_partitions(graph, partitions)
    mech_of = {v.name: Mechanism.PS for v in graph.variables}
    architecture = "ps_opt" if local_agg else "ps_naive"
    return _build_plan(architecture, graph, cluster, mech_of, partitions, local_agg)


def transform_hybrid(
    graph: GraphSpec,
    cluster: ClusterSpec,
    policy: MechanismPolicy | None = None,
    partitions: dict[str, int] | None = None,
) -> DistributedPlan:
    """Per-variable mechanism: allreduce for dense, PS for sparse variables.

    If every variable resolves to allreduce the result is node-for-node
    isomorphic to :func:`transform_ar`.
    """
    _check_partitions(graph, partitions)
    mech_of = {v.name: assign_mechanism(v, cluster, policy) for v in graph.variables}
    if partitions:
        partitions = {
            name: p for name, p in partitions.items() if mech_of.get(name) == Mechanism.PS
        }
    return _build_plan("hybrid", graph, cluster, mech_of, partitions, local_agg=True)


def _check_partitions(graph: GraphSpec, partitions: dict[str, int] | None) -> None:
    for name, p in (partitions or {}).items():
        var = graph.variable(name)
        if p > 1 and not var.partitionable:
            raise SpecError(f"variable {name!r} is not partitionable")
        if not (1 <= p <= var.elements):
            raise SpecError(f"variable {name!r}: partition count {p} out of range")


def validate_plan(
    plan: DistributedPlan, graph: GraphSpec, cluster: ClusterSpec
) -> list[str]:
    """Check all structural plan invariants; returns a list of violations."""
    problems: list[str] = []
    n_gpus = cluster.total_gpus

    for role in ("model_replica", "grad_producer"):
        count = len(plan.nodes_with(role))
        if count != n_gpus:
            problems.append(f"expected {n_gpus} {role} nodes, found {count}")

    chief = plan.chief
    if not (
        isinstance(chief, tuple)
        and len(chief) == 2
        and all(isinstance(c, int) for c in chief)
    ):
        problems.append("exactly one chief (machine, gpu) is required")
    elif not (0 <= chief[0] < cluster.machines and 0 <= chief[1] < cluster.gpus_per_machine):
        problems.append(f"chief {chief} outside the cluster")

    for node in plan.nodes:
        if not (0 <= node.machine < cluster.machines):
            problems.append(f"node {node.id} placed on nonexistent machine {node.machine}")
        if node.role in ("update", "global_agg", "accumulator", "variable_home") and node.variable is None:
            problems.append(f"node {node.id} ({node.role}) lacks a variable")

    for var in graph.variables:
        mech = plan.mech_of.get(var.name)
        if mech is None:
            problems.append(f"variable {var.name!r} has no mechanism")
            continue
        if mech == Mechanism.AR:
            collective = "allreduce" if var.kind == "dense" else "allgatherv"
            count = len(plan.nodes_with(collective, var.name))
            if count != n_gpus:
                problems.append(
                    f"variable {var.name!r}: expected {n_gpus} {collective} nodes, found {count}"
                )
            for role in ("variable_home", "global_agg", "accumulator", "update", "local_agg"):
                if plan.nodes_with(role, var.name):
                    problems.append(f"AR variable {var.name!r} has server-side {role} nodes")
        else:
            p_count = plan.partitions_of.get(var.name, 0)
            for p in range(p_count):
                chain = {}
                for role in ("variable_home", "global_agg", "accumulator", "update"):
                    found = [
                        n
                        for n in plan.nodes_with(role, var.name)
                        if n.partition == p
                    ]
                    if len(found) != 1:
                        problems.append(
                            f"variable {var.name!r} partition {p}: expected one {role}, found {len(found)}"
                        )
                        continue
                    chain[role] = found[0]
                machines = {n.machine for n in chain.values()}
                if len(machines) > 1:
                    problems.append(
                        f"variable {var.name!r} partition {p}: update chain not colocated "
                        f"(machines {sorted(machines)})"
                    )
                if plan.local_agg_enabled:
                    local = [
                        n for n in plan.nodes_with("local_agg", var.name) if n.partition == p
                    ]
                    if len(local) != cluster.machines:
                        problems.append(
                            f"variable {var.name!r} partition {p}: expected "
                            f"{cluster.machines} local_agg nodes, found {len(local)}"
                        )
            for coll in ("allreduce", "allgatherv"):
                if plan.nodes_with(coll, var.name):
                    problems.append(f"PS variable {var.name!r} has {coll} nodes")
    return problems


def plan_to_dict(plan: DistributedPlan) -> dict:
    """JSON-ready representation of a plan."""
    return {
        "architecture": plan.architecture,
        "local_agg_enabled": plan.local_agg_enabled,
        "chief": list(plan.chief),
        "mechanisms": {name: mech.value for name, mech in sorted(plan.mech_of.items())},
        "partitions": {name: p for name, p in sorted(plan.partitions_of.items())},
        "nodes": [
            {
                "id": n.id,
                "role": n.role,
                "machine": n.machine,
                "device": n.device,
                "variable": n.variable,
                "partition": n.partition,
            }
            for n in plan.nodes
        ],
    }


def plan_from_dict(doc: dict) -> DistributedPlan:
    """Inverse of :func:`plan_to_dict`."""
    nodes = tuple(
        PlacedNode(
            id=n["id"],
            role=n["role"],
            machine=n["machine"],
            device=n["device"],
            variable=n.get("variable"),
            partition=n.get("partition"),
        )
        for n in doc["nodes"]
    )
    return DistributedPlan(
        architecture=doc["architecture"],
        nodes=nodes,
        mech_of={name: Mechanism(v) for name, v in doc["mechanisms"].items()},
        partitions_of=dict(doc["partitions"]),
        chief=tuple(doc["chief"]),
        local_agg_enabled=doc["local_agg_enabled"],
    )
