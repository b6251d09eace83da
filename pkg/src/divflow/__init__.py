"""Exact maximum flow via a weighted-barrier interior point method."""

from .errors import DivflowError
from .graph import Graph, parse_dimacs, precondition, random_instance, reduce_directed_to_undirected

__version__ = "0.1.0"

__all__ = [
    "DivflowError",
    "Graph",
    "parse_dimacs",
    "precondition",
    "random_instance",
    "reduce_directed_to_undirected",
]
