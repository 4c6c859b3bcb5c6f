"""Distributed spiking network simulation on a single machine."""

from .decomposition import (AreaSpec, PartitionPlan, area_processes_plan, dump_plan, load_plan,
                            map_areas_to_processes, multisection_divide, random_equivalent_map)
from .dynamics import NeuronParams, make_propagators, step_neuron
from .engine import AuditViolation, OverlapViolation, RankState, build_rank_state
from .exchange import ExchangeFabric, run_distributed
from .graph import (DirectedGraph, build_graph, indegree_subgraph, outdegree_subgraph,
                    spiking_subgraph, split_local_remote, subgraph_join, subgraph_meet)
from .netbuild import (NetworkConfig, build_network, dump_config, load_config,
                       load_connectome, make_balanced_random_net, parse_config)
from .plasticity import StdpParams
from .reference import run_reference

__all__ = [
    "AreaSpec", "PartitionPlan", "area_processes_plan", "dump_plan", "load_plan",
    "map_areas_to_processes", "multisection_divide", "random_equivalent_map",
    "NeuronParams", "make_propagators", "step_neuron",
    "AuditViolation", "OverlapViolation", "RankState", "build_rank_state",
    "ExchangeFabric", "run_distributed",
    "DirectedGraph", "build_graph", "indegree_subgraph", "outdegree_subgraph",
    "spiking_subgraph", "split_local_remote", "subgraph_join", "subgraph_meet",
    "NetworkConfig", "build_network", "dump_config", "load_config", "load_connectome",
    "make_balanced_random_net", "parse_config", "StdpParams", "run_reference",
]
