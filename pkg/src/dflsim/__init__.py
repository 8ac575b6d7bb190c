"""Deterministic simulator for Byzantine-robust decentralized federated learning."""

from .aggregation import (
    AggregationContext,
    AggregatorSpec,
    aggregate,
    aggregate_self_inclusive,
    balance_accepts,
)
from .attacks import AttackContext, AttackSpec, asr, craft_models, poison_data
from .backend import backend_name
from .config import ConfigError, ExperimentConfig, parse_config
from .data import (
    Dataset,
    PartitionPlan,
    gen_synthetic_classification,
    gen_synthetic_regression,
    partition_iid,
    partition_noniid_grouped,
    partition_noniid_slices,
)
from .graph import (
    ConnectivityMask,
    Topology,
    benign_subgraph_connected,
    femb,
    gen_complete,
    gen_erdos_renyi,
    gen_regular,
    gen_ring,
    gen_small_world,
    sample_mask,
)
from .metrics import MetricRecord, comm_cost, consensus_error, max_mse, max_ter
from .model import ModelSpec, gradient, loss, predict
from .protocol import (
    ExperimentResult,
    RoundReport,
    Simulation,
    local_training,
    run_experiment,
    run_learn_round,
    run_round,
)

__version__ = "0.1.0"
