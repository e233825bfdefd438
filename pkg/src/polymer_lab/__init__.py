"""Exact and Monte Carlo checks of lower-tail bounds for discrete directed polymers."""

__version__ = "0.1.0"

from .environment import Environment, distance, sample_environment, shift
from .lattice import BridgeSpec, admissible_endpoint, log_bridge_probability
from .polymer import (
    PolymerSpec,
    ScaledSpec,
    gibbs_marginals,
    log_normalized_partition,
    log_partition,
    quenched_overlap,
)
from .replica import (
    annealed_mgf_conditioned,
    annealed_tilted_mean_conditioned,
    pinning_partition,
)

__all__ = [
    "BridgeSpec", "Environment", "PolymerSpec", "ScaledSpec",
    "admissible_endpoint", "annealed_mgf_conditioned", "annealed_tilted_mean_conditioned",
    "distance", "gibbs_marginals", "log_bridge_probability", "log_normalized_partition",
    "log_partition", "pinning_partition", "quenched_overlap", "sample_environment", "shift",
]
