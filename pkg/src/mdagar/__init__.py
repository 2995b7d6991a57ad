"""Multivariate DAGAR models for areal disease mapping."""
__version__ = "0.1.0"

from .dagar import DagarPrecision, build_dagar  # noqa: E402
from .errors import MdagarError, NumericalError, ValidationError  # noqa: E402
from .graph import ArealGraph, directed_neighbor_sets, grid_graph, load_adjacency  # noqa: E402
from .joint import InteractionCoeffs, JointPrecision, build_joint  # noqa: E402
from .model import Dataset, ModelSpec, ParamState, PriorSpec, load_dataset  # noqa: E402
from .sampler import ChainConfig, PosteriorSamples, run_chain, run_chains  # noqa: E402
from .evidence import (  # noqa: E402
    BridgeConfig,
    compare_orderings,
    enumerate_orderings,
    model_log_evidence,
    posterior_model_probs,
)

__all__ = [
    "ArealGraph", "BridgeConfig", "ChainConfig", "DagarPrecision", "Dataset",
    "InteractionCoeffs", "JointPrecision", "MdagarError", "ModelSpec", "NumericalError",
    "ParamState", "PosteriorSamples", "PriorSpec", "ValidationError", "build_dagar",
    "build_joint", "compare_orderings", "directed_neighbor_sets", "enumerate_orderings",
    "grid_graph", "load_adjacency", "load_dataset", "model_log_evidence",
    "posterior_model_probs", "run_chain", "run_chains",
]
