"""Full-duplex holographic MIMO near-field ISAC simulator.

Submodules: ``geometry`` (array layout and near-field channels), ``dma``
(microstrip propagation and Lorentzian weights), ``estimation`` (MUSIC),
``beamforming`` (analog/digital design), ``simulate`` (Monte Carlo) and
``cli`` (sweep runner).
"""

__version__ = "0.1.0"

from .errors import InfeasibleError
from .geometry import (ArrayLayout, Scenario, SphericalCoord, UeDescriptor,
                       dl_channel, radar_channel, si_channel, steering_vector)
from .dma import MicrostripParams, compensate_weights, lorentzian_map
from .estimation import SearchGrid, TargetEstimate, estimate_targets, match_estimates
from .beamforming import BeamformerSet, PhaseCodebook, design_isac, solve_op1, solve_op2
from .simulate import SimConfig, run_experiment, run_trial

__all__ = [
    "InfeasibleError", "ArrayLayout", "Scenario", "SphericalCoord", "UeDescriptor",
    "dl_channel", "radar_channel", "si_channel", "steering_vector",
    "MicrostripParams", "compensate_weights", "lorentzian_map", "SearchGrid",
    "TargetEstimate", "estimate_targets", "match_estimates", "BeamformerSet",
    "PhaseCodebook", "design_isac", "solve_op1", "solve_op2", "SimConfig",
    "run_experiment", "run_trial",
]
