"""Smoothed p-values and structured multiple testing on directed acyclic graphs."""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .graph import Dag, TruthAssignment, build_dag, depth_partition, descendant_closure, topological_sort
from .selection import (
    SelectionResult,
    run_selector,
    select_bh,
    select_fdr_dagger,
    select_fdx,
    select_fwer_mg,
    water_fill_weights,
)
from .simulation import AlternativeScheme, BenchmarkConfig, GraphRecipe, gen_graph, run_benchmark
from .smoothing import SmoothingSpec, smooth

__all__ = [
    "Dag",
    "TruthAssignment",
    "build_dag",
    "depth_partition",
    "descendant_closure",
    "topological_sort",
    "SelectionResult",
    "run_selector",
    "select_bh",
    "select_fdr_dagger",
    "select_fdx",
    "select_fwer_mg",
    "water_fill_weights",
    "AlternativeScheme",
    "BenchmarkConfig",
    "GraphRecipe",
    "gen_graph",
    "run_benchmark",
    "SmoothingSpec",
    "smooth",
]
