"""Deterministic discrete-event simulator for opportunistic provisioning.

Replays (or synthesizes) a contact trace among mobile nodes, generates
service requests, and drives each request through selection, input upload,
provider queueing, execution under CPU contention, interleg handoffs, and
final output return.  Transfers share per-node bandwidth, pause during
disconnections, and resume at the next contact.  Every node maintains its
own knowledge base from what it directly observes, so policies act on
honestly learned statistics, never on the generator's ground truth.

All randomness derives from one root seed through named substreams, so two
runs differing only in policy see identical contacts, request streams,
execution draws, and contention paths (common random numbers).
"""

from __future__ import annotations

import hashlib
import heapq
import itertools
import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import knowledge as kn
from .composition import (
    NoCandidateProvidersError,
    ServiceId,
    ServiceRequest,
    UnsatisfiableRequestError,
    build_composition_graph,
    build_service_graph,
    rank_compositions,
)
from .policies import (
    PolicyKind,
    SelectionContext,
    select_afir,
    select_ato,
    select_mev,
    select_ran,
)

CPU_QUANTUM = 0.1
CPU_FLIP_PROB = 0.001
# time constant for the provider's smoothed competing-process count; a few
# knowledge-refresh periods, well under the drift timescale of the count
CONTENTION_SMOOTHING_TAU = 500.0

# substream codes for the named RNG lanes hanging off the root seed
_TRACE, _REQUESTS, _EXECUTIONS, _CONTENTION, _POLICY, _SERVICES = range(6)

_EVENT_ORDER = {
    "transfer_complete": 0,
    "exec_complete": 1,
    "cpu_flip": 2,
    "contact_down": 3,
    "contact_up": 4,
    "stats_exchange": 5,
    "request_gen": 6,
}


def substream(seed: int, code: int, *extra: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(code, *extra))
    return np.random.Generator(np.random.SFC64(ss))


def trace_seed(seed: int) -> int:
    """Root of the synthetic-trace lane, shared by every policy run."""
    return int(substream(seed, _TRACE).integers(2**63))


def execution_draw(seed: int, request_id: int, leg_index: int, mean: float) -> float:
    """Nominal execution seconds for one leg, keyed by request and leg so the
    draw is identical whichever provider or policy runs the leg."""
    g = substream(seed, _EXECUTIONS, request_id, leg_index)
    return mean * float(g.standard_exponential())


@dataclass(frozen=True)
class SimConfig:
    """Scenario parameters; time in seconds, sizes in bytes."""

    n_nodes: int
    capacity: float
    duration: float
    warmup: float
    request_gap: tuple
    io_size_bytes: float
    service_kinds: tuple  # ((ServiceId, mean_exec_seconds), ...)
    service_density: float = 1.0
    assignments: tuple | None = None  # ((node, ServiceId), ...) overrides density
    request_input_type: int = 0
    request_output_type: int = 8
    cpu_m_max: int = 0

    def __post_init__(self):
        if self.n_nodes < 2:
            raise ValueError("n_nodes: need at least two nodes")
        if self.capacity <= 0:
            raise ValueError("capacity: must be positive")
        if self.duration < 0:
            raise ValueError("duration: must be non-negative")
        if not (0 <= self.warmup <= self.duration):
            raise ValueError("warmup: must lie in [0, duration]")
        lo, hi = self.request_gap
        if not (0 < lo <= hi):
            raise ValueError("request_gap: need 0 < lo <= hi")
        if self.io_size_bytes <= 0:
            raise ValueError("io_size_bytes: must be positive")
        if not self.service_kinds:
            raise ValueError("service_kinds: must name at least one service")
        for sid, mean in self.service_kinds:
            if not isinstance(sid, ServiceId):
                raise ValueError("service_kinds: entries are (ServiceId, mean)")
            if mean <= 0:
                raise ValueError("service_kinds: mean execution must be positive")
        if not (0.0 <= self.service_density <= 1.0):
            raise ValueError("service_density: must lie in [0, 1]")
        if self.cpu_m_max < 0:
            raise ValueError("cpu_m_max: must be non-negative")
        if self.assignments is not None:
            known = {sid for sid, _ in self.service_kinds}
            for node, sid in self.assignments:
                if not (0 <= node < self.n_nodes):
                    raise ValueError(f"assignments: node {node} out of range")
                if sid not in known:
                    raise ValueError(f"assignments: {sid} not in service_kinds")
        ServiceRequest(self.request_input_type, self.request_output_type)

    @property
    def request_template(self) -> ServiceRequest:
        return ServiceRequest(
            self.request_input_type,
            self.request_output_type,
            self.io_size_bytes,
            self.io_size_bytes,
        )


@dataclass(frozen=True)
class RequestRecord:
    """Final per-request outcome with its exact phase timeline.

    ``phase_marks`` is a (label, time) tuple sequence from generation to the
    last reached point; consecutive differences are the phase durations, so
    the durations telescope to completion - generation exactly.
    """

    request_id: int
    seeker: int
    policy: str
    gen_time: float
    completion_time: float | None
    status: str  # completed | pending
    plan: tuple | None
    plan_history: tuple
    model_estimate: float | None
    rank_available: int | None
    phase_marks: tuple
    wait: float
    transfer_in: float
    queue_total: float
    exec_total: float
    handoff_total: float

    def provisioning_time(self) -> float | None:
        if self.completion_time is None:
            return None
        return self.completion_time - self.gen_time


def assign_services(config: SimConfig, seed: int) -> dict:
    """Map node -> tuple of ServiceId advertised by that node.

    Uses the services substream, so the layout depends only on (config,
    seed), never on the policy being run.
    """
    if config.assignments is not None:
        out = {}
        for node, sid in config.assignments:
            out.setdefault(node, []).append(sid)
        return {node: tuple(sorted(sids)) for node, sids in out.items()}
    rng = substream(seed, _SERVICES)
    out = {}
    for node in range(config.n_nodes):
        sids = [
            sid for sid, _ in config.service_kinds
            if rng.random() < config.service_density
        ]
        if sids:
            out[node] = tuple(sorted(sids))
    return out


class _Job:
    """One queued transfer between a directed node pair."""

    __slots__ = (
        "jid", "src", "dst", "size", "remaining", "purpose", "request_id",
        "leg_index", "enqueue_t", "first_active_t", "active_seconds", "version",
    )

    def __init__(self, jid, src, dst, size, purpose, request_id, leg_index, t):
        self.jid = jid
        self.src = src
        self.dst = dst
        self.size = size
        self.remaining = float(size)
        self.purpose = purpose  # input | interleg | output
        self.request_id = request_id
        self.leg_index = leg_index
        self.enqueue_t = t
        self.first_active_t = None
        self.active_seconds = 0.0
        self.version = 0


class _ExecStats:
    """Lifetime moments of nominal (contention-free) work for one service.

    Nominal draws are stationary, so a lifetime mean is the lowest-variance
    estimate; the advertised execution moments rescale these by the
    provider's current smoothed competing-process count, which the provider
    observes continuously. Estimating from completed wall times instead
    would lag the contention regime by several rare samples and its draw
    noise would make the fleet-wide minimum systematically optimistic.
    """

    __slots__ = ("count", "total", "total_sq", "nominal")

    def __init__(self, nominal_mean: float):
        self.count = 0
        self.total = 0.0
        self.total_sq = 0.0
        self.nominal = nominal_mean

    def add(self, seconds: float):
        self.count += 1
        self.total += seconds
        self.total_sq += seconds * seconds

    def moments(self):
        if self.count == 0:
            # exponential prior around the configured nominal mean
            return self.nominal, 2.0 * self.nominal * self.nominal
        mean = self.total / self.count
        return mean, self.total_sq / self.count


class _Provider:
    """Execution queue, contention state, and advertised-stat trackers."""

    __slots__ = (
        "node", "queue", "current", "exec_version", "n_competing",
        "quantum_idx", "rng", "exec_stats", "batches", "batch_sizes_sum",
        "batch_sizes_sqsum", "batch_closed", "open_batch_key", "open_batch_size",
        "last_batch_t", "iat_avg", "n_avg", "n_avg_t",
    )

    def __init__(self, node: int, seed: int):
        self.node = node
        self.queue = deque()
        # current = (request_id, leg_index, sid, remaining_nominal, seg_start,
        #            nominal_draw)
        self.current = None
        self.exec_version = 0
        self.n_competing = 0
        self.quantum_idx = 0
        self.rng = substream(seed, _CONTENTION, node)
        self.exec_stats = {}
        self.batches = 0
        self.batch_sizes_sum = 0.0
        self.batch_sizes_sqsum = 0.0
        self.batch_closed = 0
        self.open_batch_key = None
        self.open_batch_size = 0
        self.last_batch_t = None
        self.iat_avg = None
        self.n_avg = 0.0
        self.n_avg_t = 0.0

    def settle_contention(self, t: float):
        """Fold the elapsed stretch of n_competing into its smoothed average.

        Call before n_competing changes and before reading n_avg.
        """
        dt = t - self.n_avg_t
        if dt > 0.0:
            w = math.exp(-dt / CONTENTION_SMOOTHING_TAU)
            self.n_avg = w * self.n_avg + (1.0 - w) * self.n_competing
            self.n_avg_t = t

    def note_arrival(self, src: int, session: int, t: float):
        key = (src, session)
        if key == self.open_batch_key:
            self.open_batch_size += 1
            return
        self.close_batch()
        self.open_batch_key = key
        self.open_batch_size = 1
        self.batches += 1
        if self.last_batch_t is not None:
            gap = t - self.last_batch_t
            if gap > 0.0:
                if self.iat_avg is None:
                    self.iat_avg = gap
                else:
                    self.iat_avg = (1.0 - kn.SMOOTHING_ALPHA) * self.iat_avg \
                        + kn.SMOOTHING_ALPHA * gap
        self.last_batch_t = t

    def close_batch(self):
        if self.open_batch_size:
            s = float(self.open_batch_size)
            self.batch_closed += 1
            self.batch_sizes_sum += s
            self.batch_sizes_sqsum += s * s
            self.open_batch_size = 0
            self.open_batch_key = None

    def load_stats(self, now: float):
        # smoothed batch interarrival drives the advertised rate so that it
        # tracks the current load rather than the lifetime average; the open
        # interval since the last batch is a censored sample and caps the rate,
        # otherwise a provider everyone avoids would stay busy-looking forever
        if self.iat_avg is not None:
            silence = now - self.last_batch_t
            lam = 1.0 / max(self.iat_avg, silence)
        else:
            lam = self.batches / now if now > 0 else 0.0
        if self.batch_closed == 0:
            return lam, 1.0, 1.0
        l = self.batch_sizes_sum / self.batch_closed
        l2 = self.batch_sizes_sqsum / self.batch_closed
        return lam, l, l2


class _RequestState:
    __slots__ = (
        "rid", "seeker", "request", "policy", "gen_t", "status", "plan",
        "plan_history", "model_estimate", "rank_available", "marks",
        "current_leg", "afir_frontier", "afir_holder", "afir_services",
        "tq_notes", "force_rank",
    )

    def __init__(self, rid, seeker, request, policy, gen_t, force_rank):
        self.rid = rid
        self.seeker = seeker
        self.request = request
        self.policy = policy
        self.gen_t = gen_t
        # parked: no viable choice yet; waiting: choice made, first provider
        # not met yet; from bound onward the legs run on physics alone
        self.status = "parked"
        self.plan = None
        self.plan_history = []
        self.model_estimate = None
        self.rank_available = None
        self.marks = [("gen", gen_t)]
        self.current_leg = 0
        self.afir_frontier = request.input_type
        self.afir_holder = seeker
        self.afir_services = []
        self.tq_notes = []
        self.force_rank = force_rank

    def mark(self, label: str, t: float):
        self.marks.append((label, t))


class Simulation:
    """One policy run over one trace with one seed.  Single-threaded."""

    def __init__(self, config: SimConfig, trace, policy, seed: int,
                 force_rank: int | None = None):
        if isinstance(policy, str):
            policy = PolicyKind(policy)
        if policy is PolicyKind.ORACLE_BEST:
            raise ValueError(
                "policy: oracle_best is a scoring rule, not a runnable policy")
        self.config = config
        self.policy = policy
        self.seed = seed
        self.force_rank = force_rank
        self.trace = list(trace)
        self.services = assign_services(config, seed)
        self.mean_exec = {sid: mean for sid, mean in config.service_kinds}

        self.events = []
        self.seq = itertools.count()
        self.digest = hashlib.sha256()
        self.contacts = set()
        self.sessions = {}
        self.contact_since = {}
        self.neighbors = {n: set() for n in range(config.n_nodes)}
        self.kbs = {
            n: kn.create_knowledge_base(n, config.capacity)
            for n in range(config.n_nodes)
        }
        self.providers = {n: _Provider(n, seed) for n in range(config.n_nodes)}
        for node, sids in self.services.items():
            prov = self.providers[node]
            for sid in sids:
                prov.exec_stats[sid] = _ExecStats(self.mean_exec[sid])

        self.pair_queues = {}
        self.active_rates = {}
        self.last_flow_t = 0.0
        self.job_counter = itertools.count()
        self.requests = {}
        self.by_seeker = {n: [] for n in range(config.n_nodes)}
        self.afir_seeking = {n: [] for n in range(config.n_nodes)}
        self.policy_rng = substream(seed, _POLICY)
        self._plan_cache = {}  # node -> (kb version, plan, rank count)

    # ------------------------------------------------------------------
    # event plumbing
    # ------------------------------------------------------------------

    def push(self, t: float, kind: str, payload: tuple):
        heapq.heappush(
            self.events, (t, _EVENT_ORDER[kind], next(self.seq), kind, payload)
        )

    def _seed_events(self):
        cfg = self.config
        # union per-pair spans so contact transitions strictly alternate even
        # when the caller hands over a raw (unnormalized) interval list
        spans = {}
        for iv in self.trace:
            spans.setdefault((iv.node_a, iv.node_b), []).append(
                (iv.t_start, iv.t_end))
        for (a, b), pair_spans in sorted(spans.items()):
            pair_spans.sort()
            merged = [list(pair_spans[0])]
            for t0, t1 in pair_spans[1:]:
                if t0 <= merged[-1][1]:
                    merged[-1][1] = max(merged[-1][1], t1)
                else:
                    merged.append([t0, t1])
            for t0, t1 in merged:
                if t0 >= cfg.duration:
                    continue
                self.push(t0, "contact_up", (a, b))
                self.push(min(t1, cfg.duration), "contact_down", (a, b))
        rng = substream(self.seed, _REQUESTS)
        lo, hi = cfg.request_gap
        t = cfg.warmup
        rid = 0
        while True:
            t = t + float(rng.uniform(lo, hi))
            if t >= cfg.duration:
                break
            seeker = int(rng.integers(cfg.n_nodes))
            self.push(t, "request_gen", (rid, seeker))
            rid += 1
        if cfg.cpu_m_max > 0:
            for node in sorted(self.providers):
                self._schedule_flip(self.providers[node])

    # ------------------------------------------------------------------
    # bandwidth and transfers
    # ------------------------------------------------------------------

    @staticmethod
    def _pair(a: int, b: int) -> tuple:
        return (a, b) if a < b else (b, a)

    def _queue(self, src: int, dst: int) -> deque:
        q = self.pair_queues.get((src, dst))
        if q is None:
            q = deque()
            self.pair_queues[(src, dst)] = q
        return q

    def _progress(self, t: float):
        """Advance every active transfer to time t at the current rates."""
        dt = t - self.last_flow_t
        if dt > 0 and self.active_rates:
            for job, rate in self.active_rates.items():
                job.remaining -= rate * dt
                if job.remaining < 1e-9:
                    job.remaining = 0.0
                job.active_seconds += dt
        self.last_flow_t = t

    def _recompute(self, t: float):
        """Rebuild the active set and rates, rescheduling completions.

        Each node's capacity splits equally among the neighbors it exchanges
        at least one active transfer with (either direction); a transfer runs
        at the smaller of its endpoints' allocations, halved when both
        directions of the pair are busy so the pair's channel is never
        counted twice.
        """
        for job in self.active_rates:
            job.version += 1  # deactivation invalidates scheduled completions
        heads = []
        busy = {}
        for (src, dst), q in self.pair_queues.items():
            if q and self._pair(src, dst) in self.contacts:
                heads.append(q[0])
                busy.setdefault(src, set()).add(dst)
                busy.setdefault(dst, set()).add(src)
        cap = self.config.capacity
        alloc = {node: cap / len(peers) for node, peers in busy.items()}
        self.active_rates = {}
        for job in heads:
            rate = min(alloc[job.src], alloc[job.dst])
            if self.pair_queues.get((job.dst, job.src)):
                rate *= 0.5
            if job.first_active_t is None:
                job.first_active_t = t
            job.version += 1
            self.active_rates[job] = rate
            self.push(t + job.remaining / rate, "transfer_complete",
                      (job, job.version))

    def _reflow(self, t: float):
        self._progress(t)
        self._recompute(t)

    def _enqueue_job(self, t, src, dst, size, purpose, request_id, leg_index):
        self._progress(t)
        job = _Job(next(self.job_counter), src, dst, size, purpose,
                   request_id, leg_index, t)
        self._queue(src, dst).append(job)
        self._recompute(t)
        self._sync_queued_bytes(src, dst, t)
        return job

    def _sync_queued_bytes(self, src: int, dst: int, t: float):
        q = self.pair_queues.get((src, dst), ())
        total = sum(j.remaining for j in q)
        self.kbs[src] = kn.set_queued_bytes(self.kbs[src], dst, total)
        self._kb_changed(src, t)

    def _outbound_backlog(self, node: int) -> float:
        return sum(
            j.remaining
            for (src, _), q in self.pair_queues.items() if src == node
            for j in q
        )

    # ------------------------------------------------------------------
    # provider execution and contention
    # ------------------------------------------------------------------

    def _schedule_flip(self, prov: _Provider):
        p = CPU_FLIP_PROB
        q = 1.0 - (1.0 - p) * (1.0 - p)  # either direction fires this quantum
        u = float(prov.rng.random())
        skip = int(math.floor(math.log1p(-u) / math.log1p(-q))) + 1
        prov.quantum_idx += skip
        self.push(prov.quantum_idx * CPU_QUANTUM, "cpu_flip", (prov.node,))

    def _handle_flip(self, t: float, node: int):
        prov = self.providers[node]
        p = CPU_FLIP_PROB
        q = 1.0 - (1.0 - p) * (1.0 - p)
        both = (p * p) / q
        r = float(prov.rng.random())
        if r < both:
            step = 0  # up and down fired in the same quantum and cancelled
        elif r < both + (1.0 - both) / 2.0:
            step = 1
        else:
            step = -1
        new_n = min(max(prov.n_competing + step, 0), self.config.cpu_m_max)
        if new_n != prov.n_competing:
            self._progress_exec(prov, t)
            prov.settle_contention(t)
            prov.n_competing = new_n
            self._reschedule_exec(prov, t)
        self._schedule_flip(prov)

    def _progress_exec(self, prov: _Provider, t: float):
        if prov.current is None:
            return
        rid, leg, sid, remaining, seg_start, nominal = prov.current
        remaining -= (t - seg_start) / (1.0 + prov.n_competing)
        prov.current = (rid, leg, sid, max(remaining, 0.0), t, nominal)

    def _reschedule_exec(self, prov: _Provider, t: float):
        if prov.current is None:
            return
        prov.exec_version += 1
        remaining = prov.current[3]
        done = t + remaining * (1.0 + prov.n_competing)
        self.push(done, "exec_complete", (prov.node, prov.exec_version))

    def _start_next_exec(self, prov: _Provider, t: float):
        if prov.current is not None or not prov.queue:
            return
        rid, leg, sid = prov.queue.popleft()
        nominal = execution_draw(self.seed, rid, leg, self.mean_exec[sid])
        prov.current = (rid, leg, sid, nominal, t, nominal)
        self.requests[rid].mark(f"exec_start:{leg}", t)
        self._reschedule_exec(prov, t)

    def _enqueue_exec(self, t, node, rid, leg, sid, arrived_from, session):
        prov = self.providers[node]
        prov.note_arrival(arrived_from, session, t)
        self.requests[rid].mark(f"arrive:{leg}", t)
        prov.queue.append((rid, leg, sid))
        self._start_next_exec(prov, t)

    # ------------------------------------------------------------------
    # knowledge upkeep and policy reactions
    # ------------------------------------------------------------------

    def _kb_changed(self, node: int, t: float):
        """Re-drive every undecided request seeked at this node."""
        for rid in self.by_seeker[node]:
            state = self.requests[rid]
            if state.status in ("parked", "waiting"):
                self._drive_selection(state, t)

    def _advert_for(self, node: int, t: float):
        prov = self.providers[node]
        prov.settle_contention(t)
        stretch = 1.0 + prov.n_avg
        entries = []
        for sid in self.services.get(node, ()):
            mean, second = prov.exec_stats[sid].moments()
            entries.append((sid, mean * stretch, second * stretch * stretch))
        return entries, prov.load_stats(t)

    def _exchange_stats(self, t: float, a: int, b: int):
        for src, dst in ((a, b), (b, a)):
            entries, load = self._advert_for(src, t)
            if entries:
                self.kbs[dst] = kn.merge_peer_advertisement(
                    self.kbs[dst], src, entries, load)
            self.kbs[dst] = kn.record_return_backlog_sample(
                self.kbs[dst], src, self._outbound_backlog(src))
        self._kb_changed(a, t)
        self._kb_changed(b, t)
        for node in (a, b):
            for rid in list(self.afir_seeking[node]):
                state = self.requests[rid]
                for peer in self._encounter_order(node):
                    if self._afir_try_bind(state, encountered=peer, t=t):
                        self.afir_seeking[node].remove(rid)
                        break

    # ------------------------------------------------------------------
    # request lifecycle
    # ------------------------------------------------------------------

    def _encounter_order(self, node: int):
        # current neighbors, earliest-met first: the literal first-encountered
        # candidate wins rather than the lowest node id
        return sorted(
            self.neighbors[node],
            key=lambda peer: (self.contact_since[self._pair(node, peer)], peer),
        )

    def _ctx(self, node: int) -> SelectionContext:
        return SelectionContext(
            kb=self.kbs[node],
            request=self.config.request_template,
            contacts=frozenset(self.neighbors[node]),
            rng=self.policy_rng,
        )

    def _drive_selection(self, state: _RequestState, t: float):
        policy = state.policy
        if policy is PolicyKind.AFIR:
            state.status = "waiting"
            for peer in self._encounter_order(state.seeker):
                if self._afir_try_bind(state, encountered=peer, t=t):
                    return
            return
        if policy in (PolicyKind.RAN, PolicyKind.ATO):
            if state.status == "parked":
                ctx = self._ctx(state.seeker)
                plan = (select_ran(ctx) if policy is PolicyKind.RAN
                        else select_ato(ctx))
                if plan is None:
                    return
                self._adopt_plan(state, plan)
            self._bind_if_met(state, t)
            return
        # MEV (optionally pinned to a fixed model rank) re-selects on every
        # knowledge change until its first provider is met
        plan, available = self._cached_selection(state.seeker)
        if plan is None:
            state.status = "parked"
            return
        state.rank_available = available
        self._adopt_plan(state, plan)
        self._bind_if_met(state, t)

    def _cached_selection(self, node: int):
        """Model selection for the node's current kb, cached per version.

        Every request in a run shares one (types, sizes) template, so the
        choice depends only on the seeker's knowledge snapshot.
        """
        version = self.kbs[node].version
        hit = self._plan_cache.get(node)
        if hit is not None and hit[0] == version:
            return hit[1], hit[2]
        ctx = self._ctx(node)
        if self.force_rank is None:
            plan = select_mev(ctx)
            available = None
        else:
            plan, available = self._rank_selection(ctx)
        self._plan_cache[node] = (version, plan, available)
        return plan, available

    def _rank_selection(self, ctx: SelectionContext):
        try:
            sg = build_service_graph(ctx.kb, ctx.request)
            cg = build_composition_graph(sg, ctx.kb)
        except (UnsatisfiableRequestError, NoCandidateProvidersError):
            return None, None
        ranked = rank_compositions(cg, self.force_rank + 1)
        if not ranked:
            return None, None
        pick = min(self.force_rank, len(ranked) - 1)
        return ranked[pick], len(ranked)

    def _adopt_plan(self, state: _RequestState, plan):
        state.status = "waiting"
        if state.plan is None or plan.legs != state.plan.legs:
            state.plan_history.append(plan.legs)
            if state.model_estimate is None:
                state.model_estimate = plan.total
        state.plan = plan

    def _bind_if_met(self, state: _RequestState, t: float):
        if state.status != "waiting" or state.plan is None:
            return
        if state.plan.first_provider in self.neighbors[state.seeker]:
            self._bind(state, t)

    def _bind(self, state: _RequestState, t: float):
        state.status = "bound"
        state.mark("bind", t)
        self._enqueue_job(
            t, state.seeker, state.plan.first_provider,
            self.config.io_size_bytes, "input", state.rid, 0)

    def _afir_try_bind(self, state, encountered: int, t: float) -> bool:
        if encountered == state.seeker:
            return False  # the requester consumes the chain, it never runs a leg
        holder = state.afir_holder
        remaining = ServiceRequest(
            state.afir_frontier,
            state.request.output_type,
            self.config.io_size_bytes,
            self.config.io_size_bytes,
        )
        ctx = SelectionContext(
            kb=self.kbs[holder], request=remaining,
            contacts=frozenset(self.neighbors[holder]), rng=self.policy_rng)
        sid = select_afir(ctx, encountered)
        if sid is None:
            return False
        leg = state.current_leg
        state.afir_services.append(sid)
        previous = state.plan_history[-1] if state.plan_history else ()
        state.plan_history.append(previous + ((sid, encountered),))
        state.status = "bound"
        if leg == 0:
            state.mark("bind", t)
        purpose = "input" if leg == 0 else "interleg"
        self._enqueue_job(
            t, holder, encountered, self.config.io_size_bytes, purpose,
            state.rid, leg)
        return True

    def _leg_service(self, state: _RequestState, leg: int) -> ServiceId:
        if state.policy is PolicyKind.AFIR:
            return state.afir_services[leg]
        return state.plan.legs[leg][0]

    def _on_transfer_complete(self, t: float, job: _Job):
        q = self.pair_queues[(job.src, job.dst)]
        q.popleft()
        self.active_rates.pop(job, None)
        if job.active_seconds > 0:
            for me, other in ((job.src, job.dst), (job.dst, job.src)):
                self.kbs[me] = kn.record_throughput_sample(
                    self.kbs[me], other, job.size, job.active_seconds)
        self._recompute(t)
        self._sync_queued_bytes(job.src, job.dst, t)
        self._kb_changed(job.dst, t)

        state = self.requests[job.request_id]
        if job.purpose == "output":
            self._complete_request(state, t)
            return
        if job.purpose == "interleg":
            state.tq_notes.append((job.src, job.first_active_t - job.enqueue_t))
        sid = self._leg_service(state, job.leg_index)
        session = self.sessions.get(self._pair(job.src, job.dst), 0)
        self._enqueue_exec(
            t, job.dst, state.rid, job.leg_index, sid, job.src, session)

    def _on_exec_complete(self, t: float, node: int):
        prov = self.providers[node]
        rid, leg, sid, _, _, nominal = prov.current
        prov.current = None
        state = self.requests[rid]
        state.mark(f"exec_done:{leg}", t)
        prov.exec_stats[sid].add(nominal)
        self._dispatch_output(state, node, leg, sid, t)
        self._start_next_exec(prov, t)

    def _dispatch_output(self, state, node, leg, sid, t):
        if sid.output_type == state.request.output_type:
            self._enqueue_job(
                t, node, state.seeker, self.config.io_size_bytes, "output",
                state.rid, leg)
            return
        state.current_leg = leg + 1
        if state.policy is PolicyKind.AFIR:
            state.afir_frontier = sid.output_type
            state.afir_holder = node
            state.status = "seeking_next"
            for peer in self._encounter_order(node):
                if self._afir_try_bind(state, encountered=peer, t=t):
                    return
            self.afir_seeking[node].append(state.rid)
            return
        next_sid, next_node = state.plan.legs[leg + 1]
        if next_node == node:
            # output stays on the provider: the next leg arrives instantly
            prov = self.providers[node]
            session = self.sessions.get(self._pair(node, state.seeker), 0)
            prov.note_arrival(node, session, t)
            state.mark(f"arrive:{leg + 1}", t)
            prov.queue.append((state.rid, leg + 1, next_sid))
            self._start_next_exec(prov, t)
        else:
            self._enqueue_job(
                t, node, next_node, self.config.io_size_bytes, "interleg",
                state.rid, leg + 1)

    def _complete_request(self, state: _RequestState, t: float):
        state.status = "completed"
        state.mark("complete", t)
        for provider, sample in state.tq_notes:
            self.kbs[state.seeker] = kn.record_transfer_queue_sample(
                self.kbs[state.seeker], provider, sample)
        if state.tq_notes:
            self._kb_changed(state.seeker, t)

    # ------------------------------------------------------------------
    # contact handling
    # ------------------------------------------------------------------

    def _on_contact_up(self, t: float, a: int, b: int):
        pair = self._pair(a, b)
        if pair in self.contacts:
            return
        self._progress(t)
        self.contacts.add(pair)
        self.sessions[pair] = self.sessions.get(pair, 0) + 1
        self.contact_since[pair] = t
        self.neighbors[a].add(b)
        self.neighbors[b].add(a)
        self.kbs[a] = kn.record_contact_event(self.kbs[a], b, "up", t)
        self.kbs[b] = kn.record_contact_event(self.kbs[b], a, "up", t)
        self._recompute(t)
        self.push(t, "stats_exchange", (a, b))

    def _on_contact_down(self, t: float, a: int, b: int):
        pair = self._pair(a, b)
        if pair not in self.contacts:
            return
        self._progress(t)
        self.contacts.discard(pair)
        self.neighbors[a].discard(b)
        self.neighbors[b].discard(a)
        self.kbs[a] = kn.record_contact_event(self.kbs[a], b, "down", t)
        self.kbs[b] = kn.record_contact_event(self.kbs[b], a, "down", t)
        self._recompute(t)
        self._kb_changed(a, t)
        self._kb_changed(b, t)

    def _on_request_gen(self, t: float, rid: int, seeker: int):
        state = _RequestState(
            rid, seeker, self.config.request_template, self.policy, t,
            self.force_rank)
        self.requests[rid] = state
        self.by_seeker[seeker].append(rid)
        self._drive_selection(state, t)

    # ------------------------------------------------------------------
    # main loop and reporting
    # ------------------------------------------------------------------

    def run(self):
        self._seed_events()
        cfg = self.config
        while self.events:
            t, _, _, kind, payload = heapq.heappop(self.events)
            if t > cfg.duration:
                break
            if kind == "transfer_complete":
                job, version = payload
                if version != job.version:
                    continue
                self._progress(t)
                job.remaining = 0.0
                self.digest.update(
                    f"{t!r}|transfer_complete|{job.jid}|{job.src}|{job.dst}"
                    f"|{job.purpose}".encode())
                self._on_transfer_complete(t, job)
                continue
            if kind == "exec_complete":
                node, version = payload
                prov = self.providers[node]
                if prov.current is None or version != prov.exec_version:
                    continue
                self.digest.update(
                    f"{t!r}|exec_complete|{node}|{prov.current[0]}"
                    f"|{prov.current[1]}".encode())
                self._on_exec_complete(t, node)
                continue
            self.digest.update(f"{t!r}|{kind}|{payload!r}".encode())
            if kind == "cpu_flip":
                self._handle_flip(t, payload[0])
            elif kind == "contact_up":
                self._on_contact_up(t, *payload)
            elif kind == "contact_down":
                self._on_contact_down(t, *payload)
            elif kind == "stats_exchange":
                self._exchange_stats(t, *payload)
            elif kind == "request_gen":
                self._on_request_gen(t, *payload)
        return self._records(), self.digest.hexdigest()

    def _records(self):
        out = []
        for rid in sorted(self.requests):
            state = self.requests[rid]
            marks = tuple(state.marks)
            completion = None
            wait = transfer_in = queue_total = exec_total = handoff_total = 0.0
            if state.status == "completed":
                completion = marks[-1][1]
                wait, transfer_in, queue_total, exec_total, handoff_total = \
                    _phase_durations(marks)
            if state.policy is PolicyKind.AFIR:
                plan_legs = state.plan_history[-1] if state.plan_history else None
            else:
                plan_legs = state.plan.legs if state.plan is not None else None
            out.append(RequestRecord(
                request_id=rid,
                seeker=state.seeker,
                policy=state.policy.value,
                gen_time=state.gen_t,
                completion_time=completion,
                status="completed" if state.status == "completed" else "pending",
                plan=plan_legs,
                plan_history=tuple(state.plan_history),
                model_estimate=state.model_estimate,
                rank_available=state.rank_available,
                phase_marks=marks,
                wait=wait,
                transfer_in=transfer_in,
                queue_total=queue_total,
                exec_total=exec_total,
                handoff_total=handoff_total,
            ))
        return out


def _phase_durations(marks):
    """Aggregate the mark timeline into the five reported phase totals."""
    wait = transfer_in = queue_total = exec_total = handoff_total = 0.0
    for i in range(1, len(marks)):
        label, t_prev = marks[i - 1]
        dt = marks[i][1] - t_prev
        if label == "gen":
            wait += dt
        elif label == "bind":
            transfer_in += dt
        elif label.startswith("arrive:"):
            queue_total += dt
        elif label.startswith("exec_start:"):
            exec_total += dt
        elif label.startswith("exec_done:"):
            handoff_total += dt
    return wait, transfer_in, queue_total, exec_total, handoff_total


def run(config: SimConfig, trace, policy, seed: int,
        force_rank: int | None = None):
    """Run one simulation; returns (records, event-log digest)."""
    return Simulation(config, trace, policy, seed, force_rank=force_rank).run()
