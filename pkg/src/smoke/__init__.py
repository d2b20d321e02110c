"""In-memory query engine with operator-integrated fine-grained lineage capture."""

from .lineage import (
    MISS,
    GrowthCounter,
    LineageBundle,
    PartitionedRidIndex,
    RidArray,
    RidIndex,
    partition_index,
    rid_array_new,
    rid_index_new,
)
from .lineage_query import (
    RidSet,
    backward,
    derive_provenance,
    forward,
    lazy_backward_rids,
    lazy_rewrite,
    run_consuming,
)
from .operators import CaptureMode, OperatorOutput
from .planner.parser import parse_sql
from .planner.physical import QueryResult, lower
from .planner.session import NoIndexError, Session
from .relstore import Relation, Schema, gen_flights, gen_zipf, load_csv
from .workload import WorkloadSpec

__all__ = [
    "CaptureMode",
    "GrowthCounter",
    "LineageBundle",
    "MISS",
    "NoIndexError",
    "OperatorOutput",
    "PartitionedRidIndex",
    "QueryResult",
    "Relation",
    "RidArray",
    "RidIndex",
    "RidSet",
    "Schema",
    "Session",
    "WorkloadSpec",
    "backward",
    "derive_provenance",
    "forward",
    "gen_flights",
    "gen_zipf",
    "lazy_backward_rids",
    "lazy_rewrite",
    "load_csv",
    "lower",
    "parse_sql",
    "partition_index",
    "rid_array_new",
    "rid_index_new",
    "run_consuming",
]
