"""Desk-scale simulator of a federated-learning protocol with inequitable
teacher/student aggregation, self-knowledge distillation, and conditional
feature generation.

The student model averages each round's participating clients; the teacher
model is a weighted aggregate over *all* clients driven by three
participation frequencies. A server-side conditional generator synthesizes
near-uniform class features that clients use as auxiliary training data.
"""

from .config import (
    ExperimentConfig,
    heterogeneity_benchmark_config,
    parse_config,
)
from .orchestrator import (
    FedState,
    RoundMetrics,
    build_state,
    fedavg_reference,
    run_experiment,
    run_round,
    sample_clients,
)

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig",
    "FedState",
    "RoundMetrics",
    "build_state",
    "fedavg_reference",
    "heterogeneity_benchmark_config",
    "parse_config",
    "run_experiment",
    "run_round",
    "sample_clients",
]
