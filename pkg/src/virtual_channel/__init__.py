"""Queueing and POMDP analysis of links with reconfigurable antennas over finite-state erasure channels."""
__version__ = "0.1.0"

from .channel_models import (
    FadingChannelModel,
    make_gilbert_elliott,
    make_rayleigh_fsmc,
    memory_coefficient,
    stationary_distribution,
)
from .code_performance import (
    decode_matrices,
    erasure_joint_distribution,
    gf2_failure_oracle,
    random_code_failure,
    segment_params,
)
from .errors import (
    ChannelModelError,
    ConfigError,
    ConvergenceError,
    NumericalError,
    UnstableQueueError,
    VirtualChannelError,
)
from .pomdp import build_pomdp, extract_thresholds, mean_value, value_iteration
from .qbd import SwitchingPolicy, analyze, optimize_K, throughput_curve

__all__ = [
    "ChannelModelError",
    "ConfigError",
    "ConvergenceError",
    "FadingChannelModel",
    "NumericalError",
    "SwitchingPolicy",
    "UnstableQueueError",
    "VirtualChannelError",
    "analyze",
    "build_pomdp",
    "decode_matrices",
    "erasure_joint_distribution",
    "extract_thresholds",
    "gf2_failure_oracle",
    "make_gilbert_elliott",
    "make_rayleigh_fsmc",
    "mean_value",
    "memory_coefficient",
    "optimize_K",
    "random_code_failure",
    "segment_params",
    "stationary_distribution",
    "throughput_curve",
    "value_iteration",
]
