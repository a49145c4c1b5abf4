"""Distributed dense matrix multiplication: Cannon's algorithm on a TCP gang.

Square matrices are cut into a q×q grid of tiles, one worker per tile.  After
an initial skew, q rounds of multiply-accumulate and unit circular shifts
produce the product with constant per-worker memory.  Workers talk over a
self-contained asynchronous message-passing layer (fixed-buffer channels,
send-receive-replace) and run under gang scheduling with collective restart.
"""

from .analysis import (
    ScalingModel,
    communication_volume,
    fit_and_compare,
    memory_per_processor_at_isoefficiency,
    min_scaling_order,
    problem_size,
    sequential_time_units,
)
from .barrier import (
    BarrierClient,
    BarrierCoordinator,
    BarrierOutcome,
    GangRun,
    WorkerContext,
    WorkerRuntime,
    run_gang,
)
from .cannon import (
    CannonPlan,
    cannon_step,
    dot_product,
    restore_inputs,
    skew,
    unskew,
)
from .driver import (
    RunConfig,
    RunReport,
    gathered_product,
    generate_matrix,
    reduce_avg,
    run_baseline_allgather,
    run_distributed,
)
from .errors import (
    AnalysisError,
    CannonError,
    ConfigError,
    ContractViolation,
    GangAborted,
    GangFailure,
    GridIncompatibility,
    ProtocolError,
    TransportError,
    VerificationError,
)
from .tile import (
    DenseTile,
    ElementType,
    assemble_from_blocks,
    local_dot_accumulate,
    oracle_multiply,
    split_into_blocks,
)
from .topology import ShiftDim, TorusTopology, grid_side
from .transport import Endpoint, HostMap, PeerChannel, exchange, sendrecv_replace

__all__ = [
    "AnalysisError",
    "BarrierClient",
    "BarrierCoordinator",
    "BarrierOutcome",
    "CannonError",
    "CannonPlan",
    "ConfigError",
    "ContractViolation",
    "DenseTile",
    "ElementType",
    "Endpoint",
    "GangAborted",
    "GangFailure",
    "GangRun",
    "GridIncompatibility",
    "HostMap",
    "PeerChannel",
    "ProtocolError",
    "RunConfig",
    "RunReport",
    "ScalingModel",
    "ShiftDim",
    "TorusTopology",
    "TransportError",
    "VerificationError",
    "WorkerContext",
    "WorkerRuntime",
    "assemble_from_blocks",
    "cannon_step",
    "communication_volume",
    "dot_product",
    "exchange",
    "fit_and_compare",
    "gathered_product",
    "generate_matrix",
    "grid_side",
    "local_dot_accumulate",
    "memory_per_processor_at_isoefficiency",
    "min_scaling_order",
    "oracle_multiply",
    "problem_size",
    "reduce_avg",
    "run_baseline_allgather",
    "run_distributed",
    "run_gang",
    "sendrecv_replace",
    "sequential_time_units",
    "restore_inputs",
    "skew",
    "split_into_blocks",
    "unskew",
]

__version__ = "0.1.0"
