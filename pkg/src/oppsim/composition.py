"""Service graphs, provider-expanded composition graphs, and path queries.

A request names an input type and an output type.  The service graph is the
type-level view: which known service kinds can chain from the request's input
to its output.  The composition graph expands each service kind into one
vertex per usable provider and weighs every edge with the analytic model, so
a Start-to-End path is a concrete plan and its path sum is the plan's
expected provisioning time.  Queries (shortest plan, top-k plans, uniform
path sampling) are pure functions of an immutable graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import knowledge as _knowledge
from . import model as _model
from .model import TransferSizes, UnstableQueueError

MIN_INPUT_TYPE = 0
MAX_OUTPUT_TYPE = 8


class UnsatisfiableRequestError(ValueError):
    """No chain of known service kinds maps the input type to the output."""


class NoCandidateProvidersError(ValueError):
    """The type-level chain exists but no usable providers realize it."""


class NoFeasibleCompositionError(ValueError):
    """Plans exist structurally but every one has an infinite estimate."""


@dataclass(frozen=True, order=True)
class ServiceId:
    """A service kind, identified by its input and output data types."""

    input_type: int
    output_type: int

    def __post_init__(self):
        if not (MIN_INPUT_TYPE <= self.input_type <= MAX_OUTPUT_TYPE - 1):
            raise ValueError("input_type must lie in [0, 7]")
        if not (MIN_INPUT_TYPE + 1 <= self.output_type <= MAX_OUTPUT_TYPE):
            raise ValueError("output_type must lie in [1, 8]")
        if self.input_type >= self.output_type:
            raise ValueError("a service must advance the data type")


@dataclass(frozen=True)
class ServiceRequest:
    """What the seeker wants: a type transformation plus payload sizes."""

    input_type: int
    output_type: int
    k_bytes: float = 0.0
    kprime_bytes: float = 0.0

    def __post_init__(self):
        if not (MIN_INPUT_TYPE <= self.input_type <= MAX_OUTPUT_TYPE - 1):
            raise ValueError("input_type must lie in [0, 7]")
        if not (MIN_INPUT_TYPE + 1 <= self.output_type <= MAX_OUTPUT_TYPE):
            raise ValueError("output_type must lie in [1, 8]")
        if self.input_type >= self.output_type:
            raise ValueError("output type must exceed input type")
        if self.k_bytes < 0 or self.kprime_bytes < 0:
            raise ValueError("payload sizes must be non-negative")


def _coerce_request(request) -> ServiceRequest:
    if isinstance(request, ServiceRequest):
        return request
    return ServiceRequest(*request)


@dataclass(frozen=True)
class ServiceGraph:
    """Type-level view: service kinds that lie on some input-to-output chain."""

    request: ServiceRequest
    services: tuple

    def options_from(self, frontier_type: int) -> tuple:
        """Service kinds applicable when the data currently has this type."""
        return tuple(s for s in self.services if s.input_type == frontier_type)

    def __contains__(self, service: ServiceId) -> bool:
        return service in self.services


def build_service_graph(kb, request) -> ServiceGraph:
    """Prune the known service kinds to those on a chain for this request.

    A kind survives only if its input type is reachable from the request's
    input and its output type can still reach the request's output; every
    survivor therefore lies on at least one complete chain.
    """
    request = _coerce_request(request)
    known = {sid for (_, sid) in kb.services}
    forward = {request.input_type}
    grew = True
    while grew:
        grew = False
        for s in known:
            if s.input_type in forward and s.output_type not in forward:
                forward.add(s.output_type)
                grew = True
    backward = {request.output_type}
    grew = True
    while grew:
        grew = False
        for s in known:
            if s.output_type in backward and s.input_type not in backward:
                backward.add(s.input_type)
                grew = True
    kept = tuple(sorted(
        s for s in known
        if s.input_type in forward and s.output_type in backward
    ))
    if not kept or request.output_type not in forward:
        raise UnsatisfiableRequestError(
            f"no known service chain maps type {request.input_type} "
            f"to type {request.output_type}"
        )
    return ServiceGraph(request=request, services=kept)


@dataclass(frozen=True)
class CompositionPlan:
    """An ordered chain of (service kind, provider) legs with its estimate."""

    legs: tuple
    total: float

    def __post_init__(self):
        if not self.legs:
            raise ValueError("a plan needs at least one leg")
        for (s_a, _), (s_b, _) in zip(self.legs, self.legs[1:]):
            if s_a.output_type != s_b.input_type:
                raise ValueError("legs must chain output type to input type")
        if math.isnan(self.total) or self.total < 0:
            raise ValueError("total must be a non-negative number")

    @property
    def providers(self) -> tuple:
        return tuple(p for _, p in self.legs)

    @property
    def first_provider(self):
        return self.legs[0][1]


class RankedPlans(list):
    """Plans sorted by estimate; ``truncated`` marks a short supply."""

    def __init__(self, plans, requested: int):
        super().__init__(plans)
        self.requested = requested
        self.truncated = len(plans) < requested


@dataclass(frozen=True)
class CompositionGraph:
    """Provider-expanded plan graph with model-weighted edges.

    Vertices are (service kind, provider id) pairs in sorted order, which is
    simultaneously a topological order (edges advance the input type) and
    the lexicographic order used to break cost ties.  ``start_weights[v]`` /
    ``end_weights[v]`` are None when the vertex cannot begin / end a plan;
    ``incoming[v]`` lists (upstream index, weight) pairs sorted by index.
    A path's cost is folded left to right over start weight, edge weights,
    and end weight, so equal-cost comparisons are reproducible bit for bit.
    """

    request: ServiceRequest
    vertices: tuple
    start_weights: tuple
    end_weights: tuple
    incoming: tuple

    def __post_init__(self):
        n = len(self.vertices)
        if len(self.start_weights) != n or len(self.end_weights) != n \
                or len(self.incoming) != n:
            raise ValueError("weight and adjacency tables must match vertices")
        if list(self.vertices) != sorted(self.vertices) \
                or len(set(self.vertices)) != n:
            raise ValueError("vertices must be sorted and unique")
        for v, (service, _) in enumerate(self.vertices):
            s_w, e_w = self.start_weights[v], self.end_weights[v]
            if s_w is not None:
                if service.input_type != self.request.input_type:
                    raise ValueError("start edge on a non-initial service")
                _check_weight(s_w)
            if e_w is not None:
                if service.output_type != self.request.output_type:
                    raise ValueError("end edge on a non-final service")
                _check_weight(e_w)
            last_u = -1
            for u, w in self.incoming[v]:
                if not (0 <= u < n) or u >= v:
                    raise ValueError("edges must point forward in vertex order")
                if u <= last_u:
                    raise ValueError("incoming lists must be sorted, no repeats")
                if self.vertices[u][0].output_type != service.input_type:
                    raise ValueError("edge endpoints must chain data types")
                _check_weight(w)
                last_u = u

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @classmethod
    def from_parts(cls, request, vertices, start_weights, end_weights,
                   edge_weights) -> "CompositionGraph":
        """Assemble a graph from explicit weights (edges keyed (u, v))."""
        request = _coerce_request(request)
        order = sorted(range(len(vertices)), key=lambda i: vertices[i])
        rank = {old: new for new, old in enumerate(order)}
        incoming = [[] for _ in vertices]
        for (u, v), w in edge_weights.items():
            incoming[rank[v]].append((rank[u], w))
        return cls(
            request=request,
            vertices=tuple(vertices[i] for i in order),
            start_weights=tuple(start_weights[i] for i in order),
            end_weights=tuple(end_weights[i] for i in order),
            incoming=tuple(tuple(sorted(lst)) for lst in incoming),
        )


def _check_weight(w):
    if math.isnan(w) or w < 0:
        raise ValueError("edge weights must be non-negative numbers")


def build_composition_graph(sg: ServiceGraph, kb, model=None) -> CompositionGraph:
    """Expand the service graph over usable providers and weigh every edge.

    All statistics come from the seeker's own knowledge base: the link and
    load parameters of the destination provider, plus the smoothed
    transfer-queue time recorded about the upstream provider for interior
    handoffs.  Per-vertex transfer sizes inflate the request payloads by the
    seeker's queued bytes toward that provider and by the provider's reported
    average outbound backlog.  An overloaded provider keeps its vertex but
    every plan through it costs infinity.  Construction is a pure function of
    the knowledge-base snapshot and the request.

    With the default model the weights are computed through the array
    kernels in one vectorized pass; passing ``model`` explicitly selects the
    one-call-per-weight reference path, which produces identical graphs.
    """
    if model is None:
        cg = _build_vectorized(sg, kb)
    else:
        cg = _build_reference(sg, kb, model)
    if count_paths(cg)[0] == 0:
        raise NoCandidateProvidersError(
            "usable providers exist but none form a complete chain"
        )
    return cg


def _collect_vertices(sg: ServiceGraph, kb):
    by_service = {}
    for (pid, sid) in kb.services:
        if sid in sg.services and _knowledge.usable(kb, pid):
            by_service.setdefault(sid, []).append(pid)
    vertices = sorted(
        (sid, pid) for sid, pids in by_service.items() for pid in pids
    )
    if not vertices:
        raise NoCandidateProvidersError(
            "no usable provider advertises any service on the chain"
        )
    return vertices


def _build_vectorized(sg: ServiceGraph, kb) -> CompositionGraph:
    """Fast builder: one kernel call per weight column, not per vertex."""
    req = sg.request
    vertices = _collect_vertices(sg, kb)
    rows = [kb.peer(pid) for _, pid in vertices]
    svc = [kb.services[(pid, sid)] for sid, pid in vertices]

    def arr(xs):
        return np.asarray(xs, dtype=np.float64)

    delta = arr([r.delta for r in rows])
    delta_prime = arr([r.delta_prime for r in rows])
    V = arr([r.throughput for r in rows])
    in_contact = np.asarray([r.in_contact for r in rows], dtype=bool)
    tq = [r.tq for r in rows]
    k = req.k_bytes + arr([r.k_queue for r in rows])
    kprime = req.kprime_bytes + arr([r.kprime_queue_avg for r in rows])
    l = np.maximum(arr([e.l for e in svc]), 1.0)
    l2 = np.maximum(arr([e.l2 for e in svc]), l * l)
    lam = arr([e.lam for e in svc])
    d = arr([e.d for e in svc])
    d2 = arr([e.d2 for e in svc])
    mu = 1.0 / d
    rho = lam * l * d

    dq = _model.queue_delay_kernel(lam, l, l2, d, d2, rho)
    e_w = np.where(in_contact, 0.0, 1.0 / delta_prime)
    e_b = _model.b_total_kernel(delta, delta_prime, V, mu, rho, k, kprime)
    start_vec = ((e_w + e_b) + dq) + d
    end_vec = _model.theta_single_kernel(delta, delta_prime, V, mu, rho, k, kprime)
    handoff = _model.theta_case2B_kernel(delta, delta_prime, V, kprime)

    by_output = {}
    for u, (sid_u, _) in enumerate(vertices):
        by_output.setdefault(sid_u.output_type, []).append(u)

    start_weights, end_weights, incoming = [], [], []
    for v, (sid, pid) in enumerate(vertices):
        start_weights.append(
            float(start_vec[v]) if sid.input_type == req.input_type else None
        )
        end_weights.append(
            float(end_vec[v]) if sid.output_type == req.output_type else None
        )
        dq_v, d_v, hand_v = float(dq[v]), float(d[v]), float(handoff[v])
        edges = []
        for u in by_output.get(sid.input_type, ()):
            if vertices[u][1] == pid:
                edges.append((u, dq_v + d_v))
            else:
                edges.append((u, ((tq[u] + hand_v) + dq_v) + d_v))
        incoming.append(tuple(edges))

    return CompositionGraph(
        request=req,
        vertices=tuple(vertices),
        start_weights=tuple(start_weights),
        end_weights=tuple(end_weights),
        incoming=tuple(incoming),
    )


def _build_reference(sg: ServiceGraph, kb, mdl) -> CompositionGraph:
    req = sg.request
    vertices = _collect_vertices(sg, kb)
    per = []
    for sid, pid in vertices:
        row = kb.peer(pid)
        link = _knowledge.link_params(kb, pid)
        prov = _knowledge.provider_params(kb, pid, sid)
        sizes = TransferSizes(
            k=req.k_bytes + row.k_queue,
            kprime=req.kprime_bytes + row.kprime_queue_avg,
        )
        try:
            dq = mdl.expected_queue_delay(prov)
        except UnstableQueueError:
            dq = math.inf
        per.append((row, link, prov, sizes, dq))

    start_weights, end_weights, incoming = [], [], []
    for v, (sid, pid) in enumerate(vertices):
        row, link, prov, sizes, dq = per[v]
        if sid.input_type == req.input_type:
            w = mdl.expected_wait(row.in_contact, link.delta_prime)
            w = w + mdl.expected_B_total(link, prov, sizes)
            w = (w + dq) + prov.d
            start_weights.append(w)
        else:
            start_weights.append(None)
        if sid.output_type == req.output_type:
            end_weights.append(mdl.expected_theta_single(link, prov, sizes))
        else:
            end_weights.append(None)
        edges = []
        for u, (sid_u, pid_u) in enumerate(vertices):
            if sid_u.output_type != sid.input_type:
                continue
            if pid_u == pid:
                # the data is already at this provider, no handoff transfer
                edges.append((u, dq + prov.d))
            else:
                hand = mdl.expected_theta_composition(
                    link, sizes, kb.peer(pid_u).tq
                )
                edges.append((u, (hand + dq) + prov.d))
        incoming.append(tuple(edges))

    return CompositionGraph(
        request=req,
        vertices=tuple(vertices),
        start_weights=tuple(start_weights),
        end_weights=tuple(end_weights),
        incoming=tuple(incoming),
    )


def _plan(cg: CompositionGraph, total: float, path) -> CompositionPlan:
    return CompositionPlan(
        legs=tuple(cg.vertices[v] for v in path), total=total
    )


def shortest_composition(cg: CompositionGraph) -> CompositionPlan:
    """The minimum-estimate plan; cost ties go to the lexicographically
    smallest (service kind, provider) sequence."""
    best = [None] * cg.n_vertices
    for v in range(cg.n_vertices):
        options = []
        if cg.start_weights[v] is not None:
            options.append((cg.start_weights[v], (v,)))
        for u, w in cg.incoming[v]:
            if best[u] is not None:
                options.append((best[u][0] + w, best[u][1] + (v,)))
        if options:
            best[v] = min(options)
    finals = [
        (best[v][0] + cg.end_weights[v], best[v][1])
        for v in range(cg.n_vertices)
        if cg.end_weights[v] is not None and best[v] is not None
    ]
    if not finals:
        raise NoCandidateProvidersError("no complete chain in this graph")
    total, path = min(finals)
    if math.isinf(total):
        raise NoFeasibleCompositionError(
            "every structurally possible plan has an infinite estimate"
        )
    return _plan(cg, total, path)


def rank_compositions(cg: CompositionGraph, top_k: int) -> RankedPlans:
    """The ``top_k`` finite-estimate plans in nondecreasing cost order.

    Per vertex only the k best prefixes can extend into a k-best full plan
    (the graph is acyclic), so a k-truncated level sweep is exact.  Ties
    order by the same lexicographic rule as shortest_composition, making the
    ranking deterministic; ``truncated`` flags fewer plans than requested.
    """
    if top_k < 1:
        raise ValueError("top_k must be at least 1")
    lists = [[] for _ in range(cg.n_vertices)]
    for v in range(cg.n_vertices):
        options = []
        if cg.start_weights[v] is not None:
            options.append((cg.start_weights[v], (v,)))
        for u, w in cg.incoming[v]:
            options.extend((d + w, p + (v,)) for d, p in lists[u])
        options.sort()
        lists[v] = options[:top_k]
    finals = []
    for v in range(cg.n_vertices):
        if cg.end_weights[v] is None:
            continue
        finals.extend((d + cg.end_weights[v], p) for d, p in lists[v])
    finals.sort()
    plans = [
        _plan(cg, total, path)
        for total, path in finals[:top_k]
        if not math.isinf(total)
    ]
    return RankedPlans(plans, requested=top_k)


def count_paths(cg: CompositionGraph):
    """Total number of Start-to-End paths, plus the per-vertex prefix counts."""
    counts = [0] * cg.n_vertices
    for v in range(cg.n_vertices):
        c = 1 if cg.start_weights[v] is not None else 0
        for u, _ in cg.incoming[v]:
            c += counts[u]
        counts[v] = c
    total = sum(
        counts[v] for v in range(cg.n_vertices)
        if cg.end_weights[v] is not None
    )
    return total, counts


def path_by_rank(cg: CompositionGraph, rank: int) -> tuple:
    """The vertex-index path at this rank in the canonical path order.

    The order enumerates end vertices by index, and within a vertex puts its
    direct start edge before continuations of upstream paths (upstream
    vertices in index order).  Together with count_paths this gives a
    bijection from [0, total) onto the paths, used for uniform sampling.
    """
    total, counts = count_paths(cg)
    if not (0 <= rank < total):
        raise ValueError(f"rank must lie in [0, {total})")
    end = None
    for v in range(cg.n_vertices):
        if cg.end_weights[v] is None:
            continue
        if rank < counts[v]:
            end = v
            break
        rank -= counts[v]
    path = [end]
    v = end
    while True:
        if cg.start_weights[v] is not None:
            if rank == 0:
                break
            rank -= 1
        for u, _ in cg.incoming[v]:
            if rank < counts[u]:
                path.append(u)
                v = u
                break
            rank -= counts[u]
        else:
            raise AssertionError("path counts out of step with adjacency")
    path.reverse()
    return tuple(path)


def path_total(cg: CompositionGraph, path) -> float:
    """Left-to-right folded cost of a vertex-index path (the canonical sum)."""
    first, last = path[0], path[-1]
    if cg.start_weights[first] is None or cg.end_weights[last] is None:
        raise ValueError("path must run from a start edge to an end edge")
    total = cg.start_weights[first]
    for u, v in zip(path, path[1:]):
        for cand, w in cg.incoming[v]:
            if cand == u:
                total = total + w
                break
        else:
            raise ValueError(f"no edge between path vertices {u} and {v}")
    return total + cg.end_weights[last]


def plan_for_path(cg: CompositionGraph, path) -> CompositionPlan:
    """Materialize a vertex-index path as a plan with its canonical cost."""
    return _plan(cg, path_total(cg, path), path)


def to_dot(cg: CompositionGraph) -> str:
    """Graph in DOT text form for eyeballing with standard tooling."""
    def name(v):
        sid, pid = cg.vertices[v]
        return f"\"({sid.input_type}->{sid.output_type})@{pid}\""

    lines = ["digraph composition {", "  rankdir=LR;", "  Start; End;"]
    for v in range(cg.n_vertices):
        if cg.start_weights[v] is not None:
            lines.append(f"  Start -> {name(v)} [label=\"{cg.start_weights[v]:.6g}\"];")
        if cg.end_weights[v] is not None:
            lines.append(f"  {name(v)} -> End [label=\"{cg.end_weights[v]:.6g}\"];")
        for u, w in cg.incoming[v]:
            lines.append(f"  {name(u)} -> {name(v)} [label=\"{w:.6g}\"];")
    lines.append("}")
    return "\n".join(lines)
