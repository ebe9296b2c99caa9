"""Opportunistic mobile-cloud service provisioning: analytic model,
Monte-Carlo oracles, composition planning, and a discrete-event simulator."""

from .model import (
    LinkParams,
    PhaseEstimate,
    ProviderParams,
    TransferSizes,
    UnstableQueueError,
    estimate_composition,
    estimate_single,
)
from .oracle import OracleResult, mc_batch_queue, mc_single_service, mc_transfer_time

__version__ = "0.1.0"

__all__ = [
    "LinkParams",
    "ProviderParams",
    "TransferSizes",
    "PhaseEstimate",
    "UnstableQueueError",
    "estimate_single",
    "estimate_composition",
    "OracleResult",
    "mc_transfer_time",
    "mc_single_service",
    "mc_batch_queue",
    "__version__",
]
