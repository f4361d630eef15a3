"""Simulation and analysis toolkit for heterogeneous federated optimization.

Implements a family of aggregation schemes (plain delta-averaging, proximal
closed forms, normalized averaging), five local solvers with closed-form
gradient accumulation vectors, analytic quadratic fixed-point oracles, client
sampling, and a deterministic experiment harness with a CLI.
"""

from fedsim.objectives import (
    GlobalObjective,
    LogisticObjective,
    QuadraticObjective,
    SyntheticDataset,
    generate_synthetic,
)
from fedsim.solvers import (
    AccumulationVector,
    DivergenceError,
    LocalRunResult,
    SolverSpec,
    accumulation_vector,
    run_local,
    vr_correction,
)
from fedsim.aggregation import (
    AggregationRule,
    ServerOptimizer,
    aggregate,
    fedprox_closed_form,
    implicit_decomposition,
)
from fedsim.sampling import ParticipationDraw, SamplingScheme, select_clients
from fedsim import analysis
from fedsim.analysis import quadratic_fixed_point
from fedsim.harness import ExperimentConfig, RoundMetrics, emit_metrics, run_experiment

__all__ = [
    "AccumulationVector",
    "AggregationRule",
    "DivergenceError",
    "ExperimentConfig",
    "GlobalObjective",
    "LocalRunResult",
    "LogisticObjective",
    "ParticipationDraw",
    "QuadraticObjective",
    "RoundMetrics",
    "SamplingScheme",
    "ServerOptimizer",
    "SolverSpec",
    "SyntheticDataset",
    "accumulation_vector",
    "aggregate",
    "analysis",
    "emit_metrics",
    "fedprox_closed_form",
    "generate_synthetic",
    "implicit_decomposition",
    "quadratic_fixed_point",
    "run_experiment",
    "run_local",
    "select_clients",
    "vr_correction",
]
