"""Per-node knowledge base: monitored peer statistics and service catalogs.

Each node accumulates, per encountered peer, connectivity interval estimates
(contact and gap rates from lifetime arithmetic means of completed
intervals), smoothed link throughput, handoff transfer-queue time, observed
return-path backlog, and the peer's advertised service catalog with its
queueing load.  Snapshots are immutable: every update returns a new
KnowledgeBase carrying a bumped version counter, so planners can cache
derived structures keyed by version and readers never see partial updates.

Only direct pairwise observation and direct advertisement feed these stats;
nothing a peer says about third parties is stored.
"""

import logging
import math
from dataclasses import dataclass, field, replace

from .model import LinkParams, ProviderParams

__all__ = [
    "SMOOTHING_ALPHA",
    "ProtocolViolationError",
    "SampleCounts",
    "PeerStats",
    "ProviderServiceStats",
    "KnowledgeBase",
    "create_knowledge_base",
    "record_contact_event",
    "record_throughput_sample",
    "merge_peer_advertisement",
    "set_queued_bytes",
    "record_return_backlog_sample",
    "record_transfer_queue_sample",
    "usable",
    "link_params",
    "provider_params",
    "catalog_of",
]

log = logging.getLogger(__name__)

# classic smoothed-average constant for throughput, TQ and return-backlog
SMOOTHING_ALPHA = 0.125


class ProtocolViolationError(ValueError):
    """Contact events for a pair must alternate and move forward in time."""


@dataclass(frozen=True)
class SampleCounts:
    contacts: int = 0
    gaps: int = 0
    throughput: int = 0
    tq: int = 0
    return_backlog: int = 0


@dataclass(frozen=True)
class PeerStats:
    """Directly observed statistics about one peer.

    Rates are exposed as properties over lifetime accumulators; they are None
    until at least one interval of the kind has completed.  ``throughput``
    starts at a configured nominal value and is overwritten by the first
    real sample, then exponentially smoothed.
    """

    throughput: float
    k_queue: float = 0.0
    kprime_queue_avg: float = 0.0
    tq: float = 0.0
    in_contact: bool = False
    counts: SampleCounts = field(default_factory=SampleCounts)
    contact_sum: float = 0.0
    gap_sum: float = 0.0
    last_event_kind: str | None = None
    last_event_t: float = 0.0

    def __post_init__(self):
        if self.throughput <= 0:
            raise ValueError("throughput must be positive")
        if self.k_queue < 0 or self.kprime_queue_avg < 0 or self.tq < 0:
            raise ValueError("queued-data and queue-time stats must be non-negative")

    @property
    def delta(self) -> float | None:
        if self.counts.contacts == 0:
            return None
        return self.counts.contacts / self.contact_sum

    @property
    def delta_prime(self) -> float | None:
        if self.counts.gaps == 0:
            return None
        return self.counts.gaps / self.gap_sum

    @property
    def usable(self) -> bool:
        return self.counts.contacts > 0 and self.counts.gaps > 0


@dataclass(frozen=True)
class ProviderServiceStats:
    """One advertised service at one provider, with the provider's load."""

    service_id: object
    d: float
    d2: float
    lam: float
    l: float
    l2: float

    def __post_init__(self):
        if self.d <= 0:
            raise ValueError("mean execution time d must be positive")
        if self.d2 < self.d * self.d * (1.0 - 1e-12):
            raise ValueError("second moment d2 must be at least d^2")
        if self.lam < 0 or self.l < 0 or self.l2 < 0:
            raise ValueError("load statistics must be non-negative")
        if self.l2 < self.l * self.l * (1.0 - 1e-12):
            raise ValueError("second moment l2 must be at least l^2")


@dataclass(frozen=True)
class KnowledgeBase:
    """Immutable snapshot of everything one node knows about its peers."""

    self_id: object
    default_throughput: float
    peers: dict = field(default_factory=dict)
    services: dict = field(default_factory=dict)  # (peer, service_id) -> stats
    version: int = 0

    def peer(self, peer_id) -> PeerStats | None:
        return self.peers.get(peer_id)


def create_knowledge_base(self_id, default_throughput: float) -> KnowledgeBase:
    if default_throughput <= 0:
        raise ValueError("default_throughput must be positive")
    return KnowledgeBase(self_id=self_id, default_throughput=default_throughput)


def _updated(kb: KnowledgeBase, peer_id, stats: PeerStats,
             services: dict | None = None) -> KnowledgeBase:
    peers = dict(kb.peers)
    peers[peer_id] = stats
    return replace(
        kb,
        peers=peers,
        services=kb.services if services is None else services,
        version=kb.version + 1,
    )


def _row(kb: KnowledgeBase, peer_id) -> PeerStats:
    got = kb.peers.get(peer_id)
    if got is not None:
        return got
    return PeerStats(throughput=kb.default_throughput)


def record_contact_event(kb: KnowledgeBase, peer_id, kind: str, t: float) -> KnowledgeBase:
    """Fold one connectivity transition; completed intervals feed the rate
    estimators (a 'down' completes a contact, an 'up' completes a gap)."""
    if kind not in ("up", "down"):
        raise ValueError(f"unknown contact event kind: {kind!r}")
    row = _row(kb, peer_id)
    if row.last_event_kind is not None:
        if kind == row.last_event_kind:
            raise ProtocolViolationError(
                f"consecutive {kind!r} events for peer {peer_id!r}")
        if t <= row.last_event_t:
            raise ProtocolViolationError(
                f"event at t={t} does not advance past t={row.last_event_t}")

    counts = row.counts
    contact_sum, gap_sum = row.contact_sum, row.gap_sum
    if row.last_event_kind == "up" and kind == "down":
        contact_sum += t - row.last_event_t
        counts = replace(counts, contacts=counts.contacts + 1)
    elif row.last_event_kind == "down" and kind == "up":
        gap_sum += t - row.last_event_t
        counts = replace(counts, gaps=counts.gaps + 1)
    # a first event of either kind opens an interval but completes none

    row = replace(
        row,
        in_contact=(kind == "up"),
        counts=counts,
        contact_sum=contact_sum,
        gap_sum=gap_sum,
        last_event_kind=kind,
        last_event_t=t,
    )
    return _updated(kb, peer_id, row)


def _smooth(current: float, n_samples: int, sample: float) -> float:
    if n_samples == 0:
        return sample
    return (1.0 - SMOOTHING_ALPHA) * current + SMOOTHING_ALPHA * sample


def record_throughput_sample(kb: KnowledgeBase, peer_id, nbytes: float,
                             duration: float) -> KnowledgeBase:
    """Fold one measured transfer: V smoothed, first sample initializes."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    if nbytes < 0:
        raise ValueError("nbytes must be non-negative")
    row = _row(kb, peer_id)
    sample = nbytes / duration
    if sample <= 0:
        raise ValueError("throughput sample must be positive")
    row = replace(
        row,
        throughput=_smooth(row.throughput, row.counts.throughput, sample),
        counts=replace(row.counts, throughput=row.counts.throughput + 1),
    )
    return _updated(kb, peer_id, row)


def merge_peer_advertisement(kb: KnowledgeBase, peer_id, services,
                             load) -> KnowledgeBase:
    """Replace the peer's advertised catalog and load with this snapshot.

    Entries whose execution-time moments are inconsistent (d2 < d^2) are
    skipped and logged; the rest are merged.  Applying the same advertisement
    twice is a no-op beyond the version bump.
    """
    lam, l, l2 = load
    if lam < 0 or l < 0 or l2 < 0 or l2 < l * l * (1.0 - 1e-12):
        raise ValueError(f"inconsistent load statistics {load!r}")
    accepted = {}
    for service_id, d, d2 in services:
        if d <= 0 or d2 < d * d * (1.0 - 1e-12):
            log.warning(
                "dropping advertised service %r from peer %r: "
                "inconsistent moments d=%g d2=%g", service_id, peer_id, d, d2)
            continue
        accepted[(peer_id, service_id)] = ProviderServiceStats(
            service_id=service_id, d=d, d2=d2, lam=lam, l=l, l2=l2)

    new_services = {
        key: val for key, val in kb.services.items() if key[0] != peer_id
    }
    new_services.update(accepted)
    return _updated(kb, peer_id, _row(kb, peer_id), services=new_services)


def set_queued_bytes(kb: KnowledgeBase, peer_id, nbytes: float) -> KnowledgeBase:
    """Track the sender-side backlog currently queued toward the peer."""
    if nbytes < 0:
        raise ValueError("queued bytes must be non-negative")
    row = replace(_row(kb, peer_id), k_queue=float(nbytes))
    return _updated(kb, peer_id, row)


def record_return_backlog_sample(kb: KnowledgeBase, peer_id,
                                 nbytes: float) -> KnowledgeBase:
    """Fold the backlog observed queued at the peer toward us at a service
    completion (inflates the effective output size in estimates)."""
    if nbytes < 0:
        raise ValueError("backlog sample must be non-negative")
    row = _row(kb, peer_id)
    row = replace(
        row,
        kprime_queue_avg=_smooth(row.kprime_queue_avg,
                                 row.counts.return_backlog, float(nbytes)),
        counts=replace(row.counts, return_backlog=row.counts.return_backlog + 1),
    )
    return _updated(kb, peer_id, row)


def record_transfer_queue_sample(kb: KnowledgeBase, peer_id,
                                 seconds: float) -> KnowledgeBase:
    """Fold one observed handoff transfer-queue delay at the peer."""
    if seconds < 0:
        raise ValueError("transfer-queue sample must be non-negative")
    row = _row(kb, peer_id)
    row = replace(
        row,
        tq=_smooth(row.tq, row.counts.tq, float(seconds)),
        counts=replace(row.counts, tq=row.counts.tq + 1),
    )
    return _updated(kb, peer_id, row)


def usable(kb: KnowledgeBase, peer_id) -> bool:
    """A peer is a composition candidate only once both interval estimators
    have at least one completed sample."""
    row = kb.peers.get(peer_id)
    return row is not None and row.usable


def link_params(kb: KnowledgeBase, peer_id) -> LinkParams:
    """Model link parameters for the pair (requires a usable peer)."""
    row = kb.peers.get(peer_id)
    if row is None or not row.usable:
        raise ValueError(f"peer {peer_id!r} has no usable link statistics")
    return LinkParams(delta=row.delta, delta_prime=row.delta_prime,
                      V=row.throughput)


def provider_params(kb: KnowledgeBase, peer_id, service_id) -> ProviderParams:
    """Model provider parameters for one advertised service at a peer."""
    entry = kb.services.get((peer_id, service_id))
    if entry is None:
        raise KeyError(f"peer {peer_id!r} does not advertise {service_id!r}")
    l = max(entry.l, 1.0)  # real batches hold at least one request
    l2 = max(entry.l2, l * l)
    return ProviderParams.from_stats(lam=entry.lam, l=l, l2=l2,
                                     d=entry.d, d2=entry.d2)


def catalog_of(kb: KnowledgeBase, peer_id) -> dict:
    """The peer's advertised services, keyed by service id."""
    return {
        sid: stats for (pid, sid), stats in kb.services.items() if pid == peer_id
    }
