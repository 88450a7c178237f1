"""Domain types for model graphs, clusters, and partitioning.

Variables are described only by their element count, element width, and the
fraction of elements touched per iteration (``alpha``).  Gradients are modeled
as byte payloads; no tensor contents exist anywhere in this package.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence


class SpecError(ValueError):
    """A graph or cluster document failed validation.

    The message names the offending field.
    """


class SpecParseError(SpecError):
    """The document is not well-formed JSON or has the wrong shape."""


def _touched(alpha: float, elements: int) -> int:
    """Whole touched elements for a sparse fraction, rounding partial rows up.

    The epsilon keeps an exact integral product (e.g. alpha = k/elements) from
    ceiling up one element due to float noise.
    """
    return min(elements, math.ceil(alpha * elements - 1e-9))


def even_split(total: int, parts: int) -> list[int]:
    """Split ``total`` items into ``parts`` counts differing by at most one.

    The first ``total % parts`` entries receive the extra item.
    """
    if parts < 1:
        raise SpecError(f"parts must be >= 1, got {parts}")
    base, extra = divmod(total, parts)
    return [base + 1 if i < extra else base for i in range(parts)]


@dataclass(frozen=True)
class VariableSpec:
    """One model variable: size, element width, sparsity, partitionability."""

    name: str
    elements: int
    elem_bytes: int
    alpha: float
    kind: str  # "dense" or "sparse"
    partitionable: bool = False

    def __post_init__(self) -> None:
        if not self.name:
            raise SpecError("variable name must be non-empty")
        if self.elements < 1:
            raise SpecError(f"variable {self.name!r}: elements must be >= 1, got {self.elements}")
        if self.elem_bytes < 1:
            raise SpecError(f"variable {self.name!r}: elem_bytes must be >= 1, got {self.elem_bytes}")
        if self.kind not in ("dense", "sparse"):
            raise SpecError(f"variable {self.name!r}: kind must be 'dense' or 'sparse', got {self.kind!r}")
        if self.kind == "dense" and self.alpha != 1:
            raise SpecError(f"variable {self.name!r}: dense variables require alpha=1, got {self.alpha}")
        if not (0 < self.alpha <= 1):
            raise SpecError(f"variable {self.name!r}: alpha must be in (0, 1], got {self.alpha}")

    @property
    def size_bytes(self) -> int:
        return self.elements * self.elem_bytes

    @property
    def touched_elements(self) -> int:
        """Elements read/updated per worker per iteration (rounded up)."""
        if self.kind == "dense":
            return self.elements
        return _touched(self.alpha, self.elements)

    @property
    def payload_bytes(self) -> int:
        """Bytes exchanged per worker for this variable's gradient.

        For dense variables this is the full variable size; for sparse ones it
        is the touched fraction, quantized to whole elements.  Index arrays are
        not counted.
        """
        return self.touched_elements * self.elem_bytes

    def partition_payload_bytes(self, partition_elements: int) -> int:
        """Gradient payload for one partition holding ``partition_elements``."""
        if self.kind == "dense":
            return partition_elements * self.elem_bytes
        return _touched(self.alpha, partition_elements) * self.elem_bytes


@dataclass(frozen=True)
class GraphSpec:
    """A single-device model graph: variables plus per-iteration compute."""

    name: str
    variables: tuple[VariableSpec, ...]
    compute_us_per_gpu: float
    batch_per_gpu: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "variables", tuple(self.variables))
        if not self.variables:
            raise SpecError(f"graph {self.name!r}: variables must be non-empty")
        names = [v.name for v in self.variables]
        dupes = {n for n in names if names.count(n) > 1}
        if dupes:
            raise SpecError(f"graph {self.name!r}: duplicate variable names {sorted(dupes)}")
        if self.compute_us_per_gpu < 0:
            raise SpecError(f"graph {self.name!r}: compute_us_per_gpu must be >= 0")
        if self.batch_per_gpu < 1:
            raise SpecError(f"graph {self.name!r}: batch_per_gpu must be >= 1")

    def variable(self, name: str) -> VariableSpec:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)


@dataclass(frozen=True)
class ClusterSpec:
    """Machines, GPUs per machine, and interconnect characteristics."""

    machines: int
    gpus_per_machine: int
    nic_gbps: float
    latency_us: float = 0.0
    intra_gbps: float | None = None

    def __post_init__(self) -> None:
        if self.machines < 1:
            raise SpecError(f"machines must be >= 1, got {self.machines}")
        if self.gpus_per_machine < 1:
            raise SpecError(f"gpus_per_machine must be >= 1, got {self.gpus_per_machine}")
        if self.nic_gbps <= 0:
            raise SpecError(f"nic_gbps must be > 0, got {self.nic_gbps}")
        if self.latency_us < 0:
            raise SpecError(f"latency_us must be >= 0, got {self.latency_us}")
        if self.intra_gbps is None:
            object.__setattr__(self, "intra_gbps", 8.0 * self.nic_gbps)
        elif self.intra_gbps <= 0:
            raise SpecError(f"intra_gbps must be > 0, got {self.intra_gbps}")

    @property
    def total_gpus(self) -> int:
        return self.machines * self.gpus_per_machine

    @property
    def nic_bytes_per_us(self) -> float:
        # 1 Gbps = 125 bytes per microsecond.
        return self.nic_gbps * 125.0

    @property
    def intra_bytes_per_us(self) -> float:
        assert self.intra_gbps is not None
        return self.intra_gbps * 125.0


@dataclass(frozen=True)
class PartitionSet:
    """An even split of one variable into P pieces."""

    variable: str
    partitions: tuple[tuple[int, int], ...]  # (index, elements)

    def __post_init__(self) -> None:
        object.__setattr__(self, "partitions", tuple(tuple(p) for p in self.partitions))
        sizes = [e for _, e in self.partitions]
        if not sizes:
            raise SpecError(f"partition set for {self.variable!r} is empty")
        if max(sizes) - min(sizes) > 1:
            raise SpecError(f"partition set for {self.variable!r} is not an even split")

    @property
    def count(self) -> int:
        return len(self.partitions)

    @property
    def total_elements(self) -> int:
        return sum(e for _, e in self.partitions)


def partition_variable(var: VariableSpec, count: int) -> PartitionSet:
    """Split a variable into ``count`` near-equal pieces.

    The first ``elements % count`` partitions carry one extra element.
    """
    if not var.partitionable and count > 1:
        raise SpecError(f"variable {var.name!r} is not partitionable")
    if count < 1 or count > var.elements:
        raise SpecError(
            f"variable {var.name!r}: partition count must be in [1, {var.elements}], got {count}"
        )
    sizes = even_split(var.elements, count)
    return PartitionSet(variable=var.name, partitions=tuple(enumerate(sizes)))


def shard_count(total_items: int, workers: int) -> list[int]:
    """Per-worker item counts for an even data split."""
    if workers < 1:
        raise SpecError(f"workers must be >= 1, got {workers}")
    return even_split(total_items, workers)


def model_alpha(graph: GraphSpec) -> float:
    """Element-count-weighted mean of per-variable alpha."""
    total = sum(v.elements for v in graph.variables)
    return sum(v.elements * v.alpha for v in graph.variables) / total


_GRAPH_KEYS = {"name", "batch_per_gpu", "compute_us_per_gpu", "variables"}
_VARIABLE_KEYS = {"name", "elements", "elem_bytes", "alpha", "kind", "partitionable"}
_CLUSTER_KEYS = {"machines", "gpus_per_machine", "nic_gbps", "latency_us", "intra_gbps"}


def _parse_document(text: str, what: str) -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecParseError(f"malformed {what} document: {exc}") from exc
    if not isinstance(doc, dict):
        raise SpecParseError(f"{what} document must be a JSON object")
    return doc


def _check_keys(doc: dict, allowed: set[str], context: str) -> None:
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise SpecError(f"{context}: unknown keys {unknown}")


def load_graph_spec(text: str) -> GraphSpec:
    """Parse and validate a graph spec JSON document."""
    doc = _parse_document(text, "graph")
    _check_keys(doc, _GRAPH_KEYS, "graph spec")
    raw_vars = doc.get("variables")
    if not isinstance(raw_vars, list):
        raise SpecError("graph spec: 'variables' must be a list")
    variables = []
    for i, raw in enumerate(raw_vars):
        if not isinstance(raw, dict):
            raise SpecError(f"graph spec: variables[{i}] must be an object")
        _check_keys(raw, _VARIABLE_KEYS, f"variables[{i}]")
        try:
            variables.append(
                VariableSpec(
                    name=raw.get("name", ""),
                    elements=raw.get("elements", 0),
                    elem_bytes=raw.get("elem_bytes", 4),
                    alpha=raw.get("alpha", 1.0),
                    kind=raw.get("kind", "dense"),
                    partitionable=raw.get("partitionable", False),
                )
            )
        except TypeError as exc:
            raise SpecError(f"graph spec: variables[{i}]: {exc}") from exc
    return GraphSpec(
        name=doc.get("name", "unnamed"),
        variables=tuple(variables),
        compute_us_per_gpu=doc.get("compute_us_per_gpu", 0.0),
        batch_per_gpu=doc.get("batch_per_gpu", 1),
    )


def load_cluster_spec(text: str) -> ClusterSpec:
    """Parse and validate a cluster spec JSON document.

    Omitted optional fields default to latency_us=0 and intra_gbps=8x nic_gbps.
    """
    doc = _parse_document(text, "cluster")
    _check_keys(doc, _CLUSTER_KEYS, "cluster spec")
    for key in ("machines", "gpus_per_machine", "nic_gbps"):
        if key not in doc:
            raise SpecError(f"cluster spec: missing required key {key!r}")
    return ClusterSpec(
        machines=doc["machines"],
        gpus_per_machine=doc["gpus_per_machine"],
        nic_gbps=doc["nic_gbps"],
        latency_us=doc.get("latency_us", 0.0),
        intra_gbps=doc.get("intra_gbps"),
    )
