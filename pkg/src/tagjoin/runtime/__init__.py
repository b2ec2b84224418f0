"""Vertex programs that evaluate joins over a tuple-attribute graph."""
from .acyclic import AcyclicJob, AggregationPlan, acyclic_join
from .cartesian import cartesian_a, cartesian_b
from .common import HeavyLightConfig, JoinResult, ReductionTrace
from .cycle import CycleStats, cycle_join, cycle_shape, triangle_join
from .eager import eager_aggregate
from .tagjoin import BagRecord, BinaryView, TagJoinStats, default_ghd, reduce_to_binary, tag_join
from .twoway import Side, anti_join, binary_join, multi_attr_join, outer_join, semi_join, two_way_join

__all__ = [
    "AcyclicJob", "AggregationPlan", "BagRecord", "BinaryView", "CycleStats", "HeavyLightConfig",
    "JoinResult", "ReductionTrace", "Side", "TagJoinStats", "acyclic_join", "anti_join", "binary_join",
    "cartesian_a", "cartesian_b", "cycle_join", "cycle_shape", "default_ghd", "eager_aggregate",
    "multi_attr_join", "outer_join", "reduce_to_binary", "semi_join", "tag_join", "triangle_join",
    "two_way_join",
]
