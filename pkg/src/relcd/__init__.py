"""Relational causal discovery with kernel-based conditional independence tests."""

from .schema import Cardinality, Schema, random_schema, validate_schema
from .skeleton import AttrData, Skeleton, random_skeleton, terminal_items, validate_skeleton
from .rcm import (
    RCM,
    PRCM,
    Adjacency,
    CanonicalUnshieldedTriple,
    GroundGraph,
    RCIOracle,
    RelationalDependency,
    RelationalVariable,
    d_separated,
    enumerate_candidate_deps,
    enumerate_cuts,
    ground_graph,
    reverse_path,
    true_cprcm,
    valid_path,
)
from .datagen import LinearGaussianParams, generate_data, parametrize, random_rcm
from .citest import (
    FlatTable,
    KernelMatrix,
    TestResult,
    aggregate_column,
    conditional_test,
    flatten,
    marginal_test,
    rbf_gram,
)
from .rpcd import LearnerConfig, phase1, phase2_robust, rpcd_run, rpcd_run_oracle
from .bench import BenchConfig, Metrics, evaluate, run_benchmark

__all__ = [
    "Adjacency",
    "AttrData",
    "BenchConfig",
    "CanonicalUnshieldedTriple",
    "Cardinality",
    "FlatTable",
    "GroundGraph",
    "KernelMatrix",
    "LearnerConfig",
    "LinearGaussianParams",
    "Metrics",
    "PRCM",
    "RCIOracle",
    "RCM",
    "RelationalDependency",
    "RelationalVariable",
    "Schema",
    "Skeleton",
    "TestResult",
    "aggregate_column",
    "conditional_test",
    "d_separated",
    "enumerate_candidate_deps",
    "enumerate_cuts",
    "evaluate",
    "flatten",
    "generate_data",
    "ground_graph",
    "marginal_test",
    "parametrize",
    "phase1",
    "phase2_robust",
    "random_rcm",
    "random_schema",
    "random_skeleton",
    "rbf_gram",
    "reverse_path",
    "rpcd_run",
    "rpcd_run_oracle",
    "run_benchmark",
    "terminal_items",
    "true_cprcm",
    "valid_path",
    "validate_schema",
    "validate_skeleton",
]
