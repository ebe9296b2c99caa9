"""Provider-selection policies over the composition machinery.

Each policy answers the same question: given what one seeker currently
knows, which chain of (service, provider) legs should serve the request?
They differ in how much of the knowledge they exploit, from the full
model-driven argmin down to uniform random choice, plus an incremental
bind-on-encounter rule and an after-the-fact oracle used for scoring.
Selection functions return None when the request must stay parked until
the knowledge base changes.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

from .composition import (
    CompositionPlan,
    NoCandidateProvidersError,
    NoFeasibleCompositionError,
    ServiceRequest,
    UnsatisfiableRequestError,
    build_composition_graph,
    build_service_graph,
    count_paths,
    path_by_rank,
    plan_for_path,
    shortest_composition,
)
from . import knowledge as _knowledge


class PolicyKind(enum.Enum):
    MEV = "mev"
    AFIR = "afir"
    RAN = "ran"
    ATO = "ato"
    ORACLE_BEST = "oracle_best"


@dataclass(frozen=True)
class SelectionContext:
    """Inputs a policy may consult: one seeker's knowledge snapshot, the
    request, who is in contact right now, and a policy-private RNG."""

    kb: object
    request: ServiceRequest
    contacts: frozenset = field(default_factory=frozenset)
    rng: object = None


def _graph_or_none(ctx: SelectionContext, model=None):
    try:
        sg = build_service_graph(ctx.kb, ctx.request)
        return build_composition_graph(sg, ctx.kb, model=model)
    except (UnsatisfiableRequestError, NoCandidateProvidersError):
        return None


def select_mev(ctx: SelectionContext, model=None) -> CompositionPlan | None:
    """Minimum expected provisioning time over everything currently known.

    Rebuilds the composition graph from the snapshot and returns its
    shortest plan; the caller re-invokes this on every knowledge-base
    change while the request waits, so the choice tracks fresh statistics.
    Returns None (parked) when nothing feasible is known yet.
    """
    cg = _graph_or_none(ctx, model=model)
    if cg is None:
        return None
    try:
        return shortest_composition(cg)
    except (NoCandidateProvidersError, NoFeasibleCompositionError):
        return None


def select_afir(ctx: SelectionContext, encountered) -> object | None:
    """Bind-on-encounter rule: the first met provider that can progress.

    ``ctx.request`` describes the remaining transformation, so its input
    type is the current frontier.  The encountered provider binds the next
    leg iff it advertises a service consuming the frontier type whose
    output can still reach the requested output over all known services.
    Returns the chosen service id, or None for a no-op contact.  When
    several of the provider's services qualify, the smallest service id is
    taken, keeping the rule deterministic.
    """
    try:
        sg = build_service_graph(ctx.kb, ctx.request)
    except UnsatisfiableRequestError:
        return None
    frontier = ctx.request.input_type
    offered = _knowledge.catalog_of(ctx.kb, encountered)
    usable_here = [
        s for s in sg.options_from(frontier) if s in offered
    ]
    if not usable_here:
        return None
    return min(usable_here)


def select_ran(ctx: SelectionContext, model=None) -> CompositionPlan | None:
    """Uniform choice over every structurally complete plan known now."""
    cg = _graph_or_none(ctx, model=model)
    if cg is None:
        return None
    total, _ = count_paths(cg)
    if total == 0:
        return None
    rank = int(ctx.rng.integers(total))
    return plan_for_path(cg, path_by_rank(cg, rank))


def select_ato(ctx: SelectionContext, model=None) -> CompositionPlan | None:
    """Uniform choice restricted to single-service plans; parked if the
    request is only satisfiable through chains."""
    cg = _graph_or_none(ctx, model=model)
    if cg is None:
        return None
    singles = [
        (v,) for v in range(cg.n_vertices)
        if cg.start_weights[v] is not None and cg.end_weights[v] is not None
    ]
    if not singles:
        return None
    pick = singles[int(ctx.rng.integers(len(singles)))]
    return plan_for_path(cg, pick)


def oracle_best(results) -> PolicyKind:
    """The policy with the smallest realized provisioning time.

    ``results`` maps policies to measured times (a mapping or an iterable
    of pairs); ties go to the policy listed earlier.
    """
    pairs = list(results.items()) if hasattr(results, "items") else list(results)
    if not pairs:
        raise ValueError("oracle_best needs at least one result")
    for _, t in pairs:
        if t is None or math.isnan(t):
            raise ValueError("every listed policy needs a numeric time")
    best_i = min(range(len(pairs)), key=lambda i: (pairs[i][1], i))
    return pairs[best_i][0]
