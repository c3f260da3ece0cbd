"""rillflow: a miniature unified batch/streaming incremental dataflow engine.

Pipelines are defined once against a typed Table API and run unchanged in
batch, streaming (commit-driven minibatch) and backfilling modes, with
deterministic, per-epoch-consistent outputs across any worker count.
"""

from .core import (
    Epoch,
    Key,
    Schema,
    Update,
    ValueType,
    accumulate,
    consolidate,
    hash_key,
    schema,
    worker_of,
)
from .exprs import (
    RowError,
    TypecheckError,
    col,
    const,
    evaluate,
    if_else,
    key_of,
    this_id,
    typecheck,
)
from .graph import (
    BuildError,
    GraphBuilder,
    SinkSpec,
    concat,
    count,
    int_sum,
    update_rows,
)
from .ops import Arrangement, EngineError, WorkerPlan, exchange
from .engine import (
    EpochResult,
    Frontier,
    RunMode,
    Runtime,
    accumulate_sink,
    run,
    run_to_results,
)
from . import connectors

INT = ValueType.INT
FLOAT = ValueType.FLOAT
STR = ValueType.STR
BOOL = ValueType.BOOL
KEY = ValueType.KEY

__version__ = "0.1.0"

__all__ = [
    "Arrangement",
    "BuildError",
    "BOOL",
    "EngineError",
    "Epoch",
    "EpochResult",
    "FLOAT",
    "Frontier",
    "GraphBuilder",
    "INT",
    "KEY",
    "Key",
    "RowError",
    "RunMode",
    "Runtime",
    "Schema",
    "SinkSpec",
    "STR",
    "TypecheckError",
    "Update",
    "ValueType",
    "WorkerPlan",
    "accumulate",
    "accumulate_sink",
    "col",
    "concat",
    "connectors",
    "consolidate",
    "const",
    "count",
    "evaluate",
    "exchange",
    "hash_key",
    "if_else",
    "int_sum",
    "key_of",
    "run",
    "run_to_results",
    "schema",
    "this_id",
    "typecheck",
    "update_rows",
    "worker_of",
]
