"""Deterministic message-level simulation of synchronous training iterations.

Every message carries a (variable, partition, phase) tag, so byte totals can
be audited per machine and cross-checked against the closed-form transfer
model.  Phases are serialized: compute, cross-machine network transfer,
intra-machine transfer, then aggregation/update.  There is no randomness; a
seed parameter is accepted for interface stability and recorded only.

Collective models:

  * dense allreduce runs hierarchically: gradients are summed inside each
    machine first, a ring over machines moves the full payload in 2(N-1)
    chunk steps, and the result is broadcast locally.
  * sparse allgatherv cannot pre-reduce (concatenation, not summation), so it
    runs over every GPU: each GPU's block travels to every remote GPU.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .model import ClusterSpec, GraphSpec, PartitionSet, SpecError, even_split, partition_variable
from .placement import DistributedPlan, Mechanism
from .transfer import TransferReport

Endpoint = tuple[int, str]  # (machine, device)


@dataclass(frozen=True)
class Message:
    src: Endpoint
    dst: Endpoint
    nbytes: int
    variable: str
    partition: int
    phase: str

    def __post_init__(self) -> None:
        if self.nbytes < 0:
            raise SpecError("message size must be >= 0")

    @property
    def cross_machine(self) -> bool:
        return self.src[0] != self.dst[0]

    def to_dict(self) -> dict:
        return {
            "src": list(self.src),
            "dst": list(self.dst),
            "bytes": self.nbytes,
            "variable": self.variable,
            "partition": self.partition,
            "phase": self.phase,
        }


@dataclass(frozen=True)
class ComputeProfile:
    """Non-network costs of one iteration."""

    compute_us_per_gpu: float = 0.0
    partition_overhead_us: float = 0.0
    agg_us_per_mb: float = 0.0

    def __post_init__(self) -> None:
        if min(self.compute_us_per_gpu, self.partition_overhead_us, self.agg_us_per_mb) < 0:
            raise SpecError("compute profile fields must be >= 0")


@dataclass(frozen=True)
class IterationStats:
    iter_time_us: float
    per_machine_bytes: TransferReport
    phase_times: dict[str, float]
    trace: tuple[Message, ...]

    def update_events(self) -> list[Message]:
        return [m for m in self.trace if m.phase == "update"]


@dataclass(frozen=True)
class CollectiveResult:
    duration_us: float
    per_machine: tuple[tuple[int, int], ...]  # (egress, ingress) over the NIC
    trace: tuple[Message, ...]
    steps: int


def _accumulate(per_machine: list[list[int]], trace: list[Message]) -> None:
    for msg in trace:
        if msg.cross_machine:
            per_machine[msg.src[0]][0] += msg.nbytes
            per_machine[msg.dst[0]][1] += msg.nbytes


def _ring_allreduce_messages(
    nbytes: int, n: int, variable: str = "", partition: int = 0
) -> tuple[list[Message], list[int], int]:
    """Ring allreduce message list over ``n`` machine-level participants.

    The payload splits into ``n`` near-equal chunks that rotate around the
    ring: N-1 reduce-scatter steps followed by N-1 allgather steps.  Returns
    (messages, per-step max chunk sizes, steps).
    """
    if n <= 1 or nbytes == 0:
        return [], [], 0
    chunks = even_split(nbytes, n)
    messages: list[Message] = []
    step_max: list[int] = []
    for phase, offset in (("reduce_scatter", 0), ("allgather", 1)):
        for s in range(n - 1):
            sizes = []
            for i in range(n):
                c = chunks[(i - s + offset) % n]
                messages.append(
                    Message((i, "gpu0"), ((i + 1) % n, "gpu0"), c, variable, partition, phase)
                )
                sizes.append(c)
            step_max.append(max(sizes))
    return messages, step_max, 2 * (n - 1)


def simulate_ring_allreduce(
    nbytes: int, n: int, cluster: ClusterSpec
) -> CollectiveResult:
    """Ring allreduce over ``n`` single-GPU machines."""
    messages, step_max, steps = _ring_allreduce_messages(nbytes, n)
    per_machine = [[0, 0] for _ in range(n)]
    _accumulate(per_machine, messages)
    bw = cluster.nic_bytes_per_us
    duration = sum(cluster.latency_us + c / bw for c in step_max)
    return CollectiveResult(
        duration, tuple(tuple(p) for p in per_machine), tuple(messages), steps
    )


def _allgatherv_messages(
    block_bytes: int,
    participants: list[Endpoint],
    variable: str = "",
    partition: int = 0,
) -> tuple[list[Message], int]:
    """Direct-exchange allgatherv: each participant's block goes to every other.

    Step s sends participant i's own block to participant i+s, so there are
    P-1 steps with every participant sending and receiving one block per step.
    """
    p = len(participants)
    if p <= 1:
        return [], 0
    messages = []
    for s in range(1, p):
        for i in range(p):
            messages.append(
                Message(
                    participants[i],
                    participants[(i + s) % p],
                    block_bytes,
                    variable,
                    partition,
                    "allgatherv",
                )
            )
    return messages, p - 1


def simulate_allgatherv(
    bytes_per_worker: int, n: int, cluster: ClusterSpec
) -> CollectiveResult:
    """Allgatherv over ``n`` single-GPU machines."""
    participants: list[Endpoint] = [(m, "gpu0") for m in range(n)]
    messages, steps = _allgatherv_messages(bytes_per_worker, participants)
    per_machine = [[0, 0] for _ in range(n)]
    _accumulate(per_machine, messages)
    bw = cluster.nic_bytes_per_us
    duration = steps * (cluster.latency_us + bytes_per_worker / bw)
    return CollectiveResult(
        duration, tuple(tuple(p) for p in per_machine), tuple(messages), steps
    )


def _ps_messages(
    variable: str,
    partition: int,
    payload: int,
    owner: int,
    cluster: ClusterSpec,
    local_agg: bool,
) -> list[Message]:
    """Pull/push messages for one (variable, partition) under PS."""
    n, g = cluster.machines, cluster.gpus_per_machine
    server = (owner, "server")
    messages = []
    # Pull: the owner serves the partition to every machine; its own worker
    # reads it locally.
    for m in range(n):
        dst: Endpoint = (m, "gpu0")
        messages.append(Message(server, dst, payload, variable, partition, "pull"))
    # Push: with local aggregation each machine pre-sums its GPUs' gradients
    # (intra traffic) and sends one payload; otherwise every GPU pushes.
    for m in range(n):
        if local_agg:
            for k in range(1, g):
                messages.append(
                    Message((m, f"gpu{k}"), (m, "gpu0"), payload, variable, partition, "local_agg")
                )
            messages.append(Message((m, "gpu0"), server, payload, variable, partition, "push"))
        else:
            for k in range(g):
                messages.append(
                    Message((m, f"gpu{k}"), server, payload, variable, partition, "push")
                )
    return messages


def simulate_ps_exchange(
    var,
    partition_set: PartitionSet,
    plan: DistributedPlan,
    cluster: ClusterSpec,
) -> CollectiveResult:
    """Pull and push traffic for one PS variable across all its partitions."""
    if plan.mech_of.get(var.name) != Mechanism.PS:
        raise SpecError(f"variable {var.name!r} is not under the PS mechanism in this plan")
    messages: list[Message] = []
    for p, elems in partition_set.partitions:
        payload = var.partition_payload_bytes(elems)
        owner = plan.owner_of(var.name, p)
        messages.extend(
            _ps_messages(var.name, p, payload, owner, cluster, plan.local_agg_enabled)
        )
    per_machine = [[0, 0] for _ in range(cluster.machines)]
    _accumulate(per_machine, messages)
    bw = cluster.nic_bytes_per_us
    bottleneck = max(max(eg, ing) for eg, ing in per_machine)
    duration = 2 * cluster.latency_us + bottleneck / bw
    return CollectiveResult(
        duration, tuple(tuple(p) for p in per_machine), tuple(messages), steps=2
    )


def _hierarchical_allreduce_messages(
    variable: str, payload: int, cluster: ClusterSpec
) -> tuple[list[Message], list[int], int]:
    """Local reduce, machine-level ring, local broadcast."""
    n, g = cluster.machines, cluster.gpus_per_machine
    messages = []
    for m in range(n):
        for k in range(1, g):
            messages.append(
                Message((m, f"gpu{k}"), (m, "gpu0"), payload, variable, 0, "local_agg")
            )
    ring, step_max, steps = _ring_allreduce_messages(payload, n, variable)
    messages.extend(ring)
    for m in range(n):
        for k in range(1, g):
            messages.append(
                Message((m, "gpu0"), (m, f"gpu{k}"), payload, variable, 0, "bcast")
            )
    return messages, step_max, steps


def _variable_messages(
    var, plan: DistributedPlan, cluster: ClusterSpec
) -> tuple[list[Message], int]:
    """All gradient-synchronization messages for one variable, plus its
    sequential step count."""
    mech = plan.mech_of[var.name]
    if mech == Mechanism.AR:
        if var.kind == "dense":
            messages, _, steps = _hierarchical_allreduce_messages(
                var.name, var.payload_bytes, cluster
            )
            return messages, steps
        participants: list[Endpoint] = [
            (m, f"gpu{k}")
            for m in range(cluster.machines)
            for k in range(cluster.gpus_per_machine)
        ]
        messages, steps = _allgatherv_messages(var.payload_bytes, participants, var.name)
        return messages, steps
    pset = partition_variable(var, plan.partitions_of[var.name])
    messages = []
    for p, elems in pset.partitions:
        payload = var.partition_payload_bytes(elems)
        owner = plan.owner_of(var.name, p)
        messages.extend(
            _ps_messages(var.name, p, payload, owner, cluster, plan.local_agg_enabled)
        )
    return messages, 2


def _update_time_us(
    var, plan: DistributedPlan, cluster: ClusterSpec, profile: ComputeProfile
) -> float:
    """Aggregation + update duration for one variable.

    PS variables aggregate per partition in parallel across owning servers;
    each partition adds a fixed management overhead and stitching the partial
    results back together is charged once.  AR variables combine locally;
    concatenated allgatherv results are applied by every GPU.
    """
    payload_mb = var.payload_bytes / 1e6
    mech = plan.mech_of[var.name]
    if mech == Mechanism.AR:
        if var.kind == "dense":
            return profile.agg_us_per_mb * payload_mb
        # Concatenated sparse gradients from every GPU are applied one nonzero
        # index at a time on each replica.
        return profile.agg_us_per_mb * payload_mb * cluster.total_gpus
    p = plan.partitions_of[var.name]
    if var.kind == "dense":
        # Dense server-side summation is vectorized; only the partition
        # management overhead scales with P.
        return profile.agg_us_per_mb * payload_mb + profile.partition_overhead_us * p
    # Sparse aggregation walks nonzero indices per contribution; partitions
    # divide that work but add management overhead, and the partial results
    # are stitched back into one tensor once.
    contributions = cluster.machines if plan.local_agg_enabled else cluster.total_gpus
    agg_total = profile.agg_us_per_mb * payload_mb * contributions
    stitch = profile.agg_us_per_mb * payload_mb
    return agg_total / p + profile.partition_overhead_us * p + stitch


def simulate_iteration(
    plan: DistributedPlan,
    graph: GraphSpec,
    cluster: ClusterSpec,
    profile: ComputeProfile,
) -> IterationStats:
    """One synchronous iteration: compute, communicate, aggregate, update."""
    trace: list[Message] = []
    max_steps = 0
    for var in graph.variables:
        messages, steps = _variable_messages(var, plan, cluster)
        trace.extend(messages)
        max_steps = max(max_steps, steps)

    cross = [[0, 0] for _ in range(cluster.machines)]
    intra = [0] * cluster.machines
    for msg in trace:
        if msg.cross_machine:
            cross[msg.src[0]][0] += msg.nbytes
            cross[msg.dst[0]][1] += msg.nbytes
        else:
            intra[msg.src[0]] += msg.nbytes

    network_bottleneck = max(max(eg, ing) for eg, ing in cross)
    network_us = 0.0
    if network_bottleneck or max_steps:
        network_us = (
            network_bottleneck / cluster.nic_bytes_per_us
            + cluster.latency_us * max_steps
        )
    intra_us = max(intra) / cluster.intra_bytes_per_us if max(intra) else 0.0

    update_us = 0.0
    chief = (plan.chief[0], f"gpu{plan.chief[1]}")
    for var in graph.variables:
        update_us = max(update_us, _update_time_us(var, plan, cluster, profile))
        if plan.mech_of[var.name] == Mechanism.PS:
            for p in range(plan.partitions_of[var.name]):
                owner = plan.owner_of(var.name, p)
                trace.append(Message(chief, (owner, "server"), 0, var.name, p, "update"))
        else:
            trace.append(Message(chief, chief, 0, var.name, 0, "update"))

    phase_times = {
        "compute": profile.compute_us_per_gpu,
        "network": network_us,
        "intra": intra_us,
        "update": update_us,
    }
    iter_time = sum(phase_times.values())
    report = TransferReport(tuple((float(eg), float(ing)) for eg, ing in cross))
    return IterationStats(iter_time, report, phase_times, tuple(trace))


def simulate_training(
    plan: DistributedPlan,
    graph: GraphSpec,
    cluster: ClusterSpec,
    profile: ComputeProfile,
    iterations: int = 100,
    warmup_inflation: float = 1.5,
    seed: int = 0,
) -> float:
    """Mean iteration time with the warmup half discarded.

    The first ``iterations // 2`` iterations are inflated by
    ``warmup_inflation`` to model startup cost, then discarded; the mean of
    the remainder is returned.  The simulation is deterministic, so the seed
    only pins the interface.
    """
    if iterations < 2:
        raise SpecError(f"iterations must be >= 2, got {iterations}")
    steady = simulate_iteration(plan, graph, cluster, profile).iter_time_us
    discard = iterations // 2
    times = [steady * warmup_inflation] * discard + [steady] * (iterations - discard)
    retained = times[discard:]
    return sum(retained) / len(retained)
