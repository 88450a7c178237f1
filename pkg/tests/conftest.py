import json
from pathlib import Path

import pytest

from sparseplan import ClusterSpec, GraphSpec, VariableSpec, load_cluster_spec, load_graph_spec

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def load_fixture_graph(name: str) -> GraphSpec:
    return load_graph_spec((FIXTURES / f"{name}.json").read_text())


@pytest.fixture
def lm_graph() -> GraphSpec:
    return load_fixture_graph("lm")


@pytest.fixture
def nmt_graph() -> GraphSpec:
    return load_fixture_graph("nmt")


@pytest.fixture
def resnet_graph() -> GraphSpec:
    return load_fixture_graph("resnet50")


@pytest.fixture
def cluster8x6() -> ClusterSpec:
    return load_cluster_spec((FIXTURES / "cluster8x6.json").read_text())


def dense_var(name="w", elements=1000, elem_bytes=4, partitionable=False) -> VariableSpec:
    return VariableSpec(name, elements, elem_bytes, 1.0, "dense", partitionable)


def sparse_var(name="e", elements=1000, elem_bytes=4, alpha=0.1, partitionable=True) -> VariableSpec:
    return VariableSpec(name, elements, elem_bytes, alpha, "sparse", partitionable)
