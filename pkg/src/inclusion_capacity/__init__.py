"""Capacities and metastable time scales of the condensing inclusion process."""

from .config_space import enumerate_space, stationary_measure
from .graph_model import build_site_graph, contract_graph, load_site_graph, metastable_hierarchy
from .ladder_resolvent import compute_Kxy
from .test_objects import capacity_sandwich

__all__ = [
    "build_site_graph", "load_site_graph", "metastable_hierarchy", "contract_graph",
    "enumerate_space", "stationary_measure", "compute_Kxy", "capacity_sandwich",
]
