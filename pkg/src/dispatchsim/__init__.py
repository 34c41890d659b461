"""Discrete-time simulator and policy library for distributed edge job
dispatching under outdated, partially observable state."""

__version__ = "0.1.0"

from .model import (GlobalState, Instance, InvariantViolation, ObservableState,
                    SystemConfig, Topology, load_instance, save_instance)
from .partition import SubsetPartition, greedy_partition, validate_partition
from .policy import MdpPolicy, Policy, make_policy
from .sim import MetricsRecord, discounted_cost, run
from .valuefn import ValueEstimate, approx_value

__all__ = [
    "GlobalState", "Instance", "InvariantViolation", "ObservableState",
    "SystemConfig", "Topology", "load_instance", "save_instance",
    "SubsetPartition", "greedy_partition", "validate_partition",
    "MdpPolicy", "Policy", "make_policy",
    "MetricsRecord", "discounted_cost", "run",
    "ValueEstimate", "approx_value",
    "__version__",
]
