"""Experiment harness: scenario configuration, replicated multi-policy runs
under common random numbers, and the metric tables behind the report files.

A run matrix executes one simulation per (seed, policy) pair; runs for the
same seed share the contact trace, request stream, execution draws, and
contention path, so per-request comparisons across policies are paired.
Summary numbers are pure functions of the per-request rows plus the
configuration, which lets reports be recomputed from their CSV exactly.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats

from .composition import ServiceId
from .policies import PolicyKind, oracle_best
from .simcore import RequestRecord, SimConfig, run, trace_seed
from .traceio import ContactInterval, SyntheticSpec, generate_synthetic, parse_trace

__all__ = [
    "ExperimentConfig",
    "RequestRow",
    "ordering_scenario",
    "stress_levels",
    "build_trace",
    "sim_config",
    "run_matrix",
    "run_rank_matrix",
    "rows_to_csv",
    "rows_from_csv",
    "summary_from_rows",
    "rank_summary_from_rows",
    "model_bias",
    "bias_report",
    "ORACLE_REFERENCE_POLICIES",
]

ORACLE_REFERENCE_POLICIES = (PolicyKind.AFIR, PolicyKind.RAN, PolicyKind.ATO)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment needs; times in seconds, sizes in bytes.

    The contact source is either a trace file or a synthetic spec; with
    ``communities`` > 1 the synthetic population splits into that many
    disjoint equal sub-populations with independent contact processes,
    which keeps provider knowledge local the way sparse real-world contact
    patterns do.
    """

    duration: float
    warmup: float
    request_gap: tuple
    io_size_bytes: float
    service_kinds: tuple  # ((ServiceId, mean_exec_seconds), ...)
    policies: tuple
    seeds: tuple
    trace_file: str | None = None
    n_nodes: int = 30
    delta: float = 0.02
    delta_prime: float = 0.005
    communities: int = 1
    service_density: float | None = None
    assignments: tuple | None = None
    capacity: float = 250_000.0
    cpu_m_max: int = 0
    request_input_type: int = 0
    request_output_type: int = 8
    group_size: int = 200

    def __post_init__(self):
        if not (0 <= self.warmup < self.duration):
            raise ValueError("warmup: must lie in [0, duration)")
        lo, hi = self.request_gap
        if not (0 < lo <= hi):
            raise ValueError("request_gap: need 0 < lo <= hi")
        if not self.policies:
            raise ValueError("policies: need at least one policy")
        for p in self.policies:
            if not isinstance(p, PolicyKind):
                raise ValueError("policies: entries must be PolicyKind")
        if not self.seeds:
            raise ValueError("seeds: need at least one seed")
        if self.communities < 1:
            raise ValueError("communities: must be at least 1")
        if self.trace_file is None and self.n_nodes % self.communities:
            raise ValueError("communities: must divide n_nodes evenly")
        if self.service_density is not None and not (0.0 <= self.service_density <= 1.0):
            raise ValueError("service_density: must lie in [0, 1]")
        if self.group_size < 1:
            raise ValueError("group_size: must be positive")

    def to_dict(self) -> dict:
        return {
            "trace_file": self.trace_file,
            "n_nodes": self.n_nodes,
            "delta": self.delta,
            "delta_prime": self.delta_prime,
            "communities": self.communities,
            "duration": self.duration,
            "warmup": self.warmup,
            "request_gap": list(self.request_gap),
            "io_size_bytes": self.io_size_bytes,
            "service_kinds": [
                [sid.input_type, sid.output_type, mean]
                for sid, mean in self.service_kinds
            ],
            "service_density": self.service_density,
            "assignments": None if self.assignments is None else [
                [node, sid.input_type, sid.output_type]
                for node, sid in self.assignments
            ],
            "capacity": self.capacity,
            "cpu_m_max": self.cpu_m_max,
            "request_input_type": self.request_input_type,
            "request_output_type": self.request_output_type,
            "policies": [p.value for p in self.policies],
            "seeds": list(self.seeds),
            "group_size": self.group_size,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {
            "trace_file", "n_nodes", "delta", "delta_prime", "communities",
            "duration", "warmup", "request_gap", "io_size_bytes",
            "service_kinds", "service_density", "assignments", "capacity",
            "cpu_m_max", "request_input_type", "request_output_type",
            "policies", "seeds", "group_size",
        }
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        missing = {"duration", "warmup", "request_gap", "io_size_bytes",
                   "service_kinds", "policies", "seeds"} - set(data)
        if missing:
            raise ValueError(f"missing config fields: {sorted(missing)}")
        kw = dict(data)
        kw["request_gap"] = tuple(float(x) for x in kw["request_gap"])
        kw["service_kinds"] = tuple(
            (ServiceId(int(i), int(o)), float(mean))
            for i, o, mean in kw["service_kinds"])
        if kw.get("assignments") is not None:
            kw["assignments"] = tuple(
                (int(node), ServiceId(int(i), int(o)))
                for node, i, o in kw["assignments"])
        kw["policies"] = tuple(PolicyKind(p) for p in kw["policies"])
        kw["seeds"] = tuple(int(s) for s in kw["seeds"])
        return cls(**kw)


_SID_A = ServiceId(0, 4)
_SID_B = ServiceId(4, 8)
_SID_FULL = ServiceId(0, 8)


def ordering_scenario(seeds: tuple = (1, 2, 3, 4, 5)) -> ExperimentConfig:
    """The reference four-policy comparison scenario.

    A single 30-node population under sustained request pressure, with a
    provider layout mixing one-hop providers and two-leg chain providers so
    the policies genuinely disagree: eight full-service nodes plus two
    providers for each half of the chain.
    """
    assignments = (
        tuple((n, _SID_FULL) for n in (0, 2, 7, 11, 16, 19, 24, 27))
        + tuple((n, _SID_A) for n in (5, 22))
        + tuple((n, _SID_B) for n in (6, 28))
    )
    return ExperimentConfig(
        n_nodes=30,
        delta=0.02,
        delta_prime=0.005,
        duration=35_000.0,
        warmup=2_000.0,
        request_gap=(12.0, 20.0),
        io_size_bytes=40_000.0,
        service_kinds=((_SID_A, 75.0), (_SID_B, 75.0), (_SID_FULL, 75.0)),
        assignments=assignments,
        capacity=250_000.0,
        cpu_m_max=0,
        policies=(PolicyKind.MEV, PolicyKind.AFIR, PolicyKind.ATO, PolicyKind.RAN),
        seeds=tuple(seeds),
    )


STRESS_LEVELS = ((0, 40_000.0), (3, 320_000.0), (10, 1_280_000.0))


def stress_levels(seeds: tuple = (1, 2, 3, 4, 5)) -> tuple:
    """Three resource-stress configurations differing only in the stressed
    axes: CPU contention ceiling 0 -> 3 -> 10 and io size 40 KB -> 320 KB ->
    1280 KB.

    Three disjoint 10-node communities with dense contacts keep each
    seeker's candidate set small and its provider knowledge fresh, so the
    model-driven policy's advantage reflects pricing rather than luck; each
    community hosts three one-hop providers and one provider per chain half.
    """
    assignments = []
    for c in range(3):
        for n in (0, 3, 7):
            assignments.append((n + 10 * c, _SID_FULL))
        assignments.append((5 + 10 * c, _SID_A))
        assignments.append((6 + 10 * c, _SID_B))
    base = ExperimentConfig(
        n_nodes=30,
        delta=0.02,
        delta_prime=0.04,
        communities=3,
        duration=45_000.0,
        warmup=2_000.0,
        request_gap=(70.0, 100.0),
        io_size_bytes=STRESS_LEVELS[0][1],
        service_kinds=((_SID_A, 75.0), (_SID_B, 75.0), (_SID_FULL, 75.0)),
        assignments=tuple(assignments),
        capacity=250_000.0,
        cpu_m_max=STRESS_LEVELS[0][0],
        policies=(PolicyKind.MEV, PolicyKind.AFIR),
        seeds=tuple(seeds),
    )
    return tuple(
        replace(base, cpu_m_max=m_max, io_size_bytes=io_size)
        for m_max, io_size in STRESS_LEVELS
    )


def build_trace(cfg: ExperimentConfig, seed: int) -> list:
    """Contact intervals for one replication: parsed file or synthetic."""
    if cfg.trace_file is not None:
        with open(cfg.trace_file, encoding="utf-8") as fh:
            return list(parse_trace(fh))
    size = cfg.n_nodes // cfg.communities
    if cfg.communities == 1:
        return list(generate_synthetic(SyntheticSpec(
            n_nodes=size, delta=cfg.delta, delta_prime=cfg.delta_prime,
            duration=cfg.duration, seed=trace_seed(seed))))
    out = []
    for c in range(cfg.communities):
        sub = generate_synthetic(SyntheticSpec(
            n_nodes=size, delta=cfg.delta, delta_prime=cfg.delta_prime,
            duration=cfg.duration, seed=trace_seed(seed) + c))
        off = size * c
        out.extend(
            ContactInterval(iv.t_start, iv.t_end, iv.node_a + off, iv.node_b + off)
            for iv in sub)
    return out


def sim_config(cfg: ExperimentConfig) -> SimConfig:
    return SimConfig(
        n_nodes=cfg.n_nodes,
        capacity=cfg.capacity,
        duration=cfg.duration,
        warmup=cfg.warmup,
        request_gap=cfg.request_gap,
        io_size_bytes=cfg.io_size_bytes,
        service_kinds=cfg.service_kinds,
        service_density=1.0 if cfg.service_density is None else cfg.service_density,
        assignments=cfg.assignments,
        request_input_type=cfg.request_input_type,
        request_output_type=cfg.request_output_type,
        cpu_m_max=cfg.cpu_m_max,
    )


@dataclass(frozen=True)
class RequestRow:
    """One request under one policy in one replication (CSV line image)."""

    seed: int
    policy: str
    request_id: int
    seeker: int
    gen_time: float
    completion_time: float | None
    status: str
    plan: str
    model_estimate: float | None
    rank_available: int | None
    wait: float
    transfer_in: float
    queue_total: float
    exec_total: float
    handoff_total: float

    def provisioning_time(self) -> float | None:
        if self.completion_time is None:
            return None
        return self.completion_time - self.gen_time


def _plan_str(plan) -> str:
    if not plan:
        return ""
    return "|".join(f"{sid.input_type}-{sid.output_type}@{node}" for sid, node in plan)


def _row(seed: int, policy_label: str, rec: RequestRecord) -> RequestRow:
    return RequestRow(
        seed=seed,
        policy=policy_label,
        request_id=rec.request_id,
        seeker=rec.seeker,
        gen_time=rec.gen_time,
        completion_time=rec.completion_time,
        status=rec.status,
        plan=_plan_str(rec.plan),
        model_estimate=rec.model_estimate,
        rank_available=rec.rank_available,
        wait=rec.wait,
        transfer_in=rec.transfer_in,
        queue_total=rec.queue_total,
        exec_total=rec.exec_total,
        handoff_total=rec.handoff_total,
    )


def run_matrix(cfg: ExperimentConfig, progress=None) -> list:
    """All (seed, policy) runs of the experiment as flat request rows."""
    base = sim_config(cfg)
    rows = []
    for seed in cfg.seeds:
        trace = build_trace(cfg, seed)
        for policy in cfg.policies:
            if progress:
                progress(f"seed {seed} policy {policy.value}")
            records, _ = run(base, trace, policy, seed)
            rows.extend(_row(seed, policy.value, r) for r in records)
    return rows


def run_rank_matrix(cfg: ExperimentConfig, top_k: int = 5, progress=None) -> list:
    """One run per (seed, rank position), forcing the model's rank-r plan.

    Rows carry the position as policy label ``rank<r>``; the deepest run's
    rank_available column reports how many of the top-k plans each request
    actually had.
    """
    if top_k < 1:
        raise ValueError("top_k: must be at least 1")
    base = sim_config(cfg)
    rows = []
    for seed in cfg.seeds:
        trace = build_trace(cfg, seed)
        for rank in range(top_k):
            if progress:
                progress(f"seed {seed} rank {rank + 1}")
            records, _ = run(base, trace, PolicyKind.MEV, seed, force_rank=rank)
            rows.extend(_row(seed, f"rank{rank}", r) for r in records)
    return rows


# ----------------------------------------------------------------------
# CSV image
# ----------------------------------------------------------------------

_CSV_FIELDS = (
    "seed", "policy", "request_id", "seeker", "gen_time", "completion_time",
    "status", "plan", "model_estimate", "rank_available", "wait",
    "transfer_in", "queue_total", "exec_total", "handoff_total",
)


def rows_to_csv(rows, stream=None) -> str | None:
    own = stream is None
    out = io.StringIO() if own else stream
    w = csv.writer(out, lineterminator="\n")
    w.writerow(_CSV_FIELDS)
    for r in rows:
        w.writerow([
            r.seed, r.policy, r.request_id, r.seeker,
            repr(r.gen_time),
            "" if r.completion_time is None else repr(r.completion_time),
            r.status, r.plan,
            "" if r.model_estimate is None else repr(r.model_estimate),
            "" if r.rank_available is None else r.rank_available,
            repr(r.wait), repr(r.transfer_in), repr(r.queue_total),
            repr(r.exec_total), repr(r.handoff_total),
        ])
    return out.getvalue() if own else None


def rows_from_csv(source) -> list:
    if isinstance(source, str):
        source = io.StringIO(source)
    reader = csv.reader(source)
    header = next(reader)
    if tuple(header) != _CSV_FIELDS:
        raise ValueError("unrecognized request CSV header")
    rows = []
    for rec in reader:
        (seed, policy, rid, seeker, gen, comp, status, plan, est, avail,
         wait, xfer, queue, execs, handoff) = rec
        rows.append(RequestRow(
            seed=int(seed), policy=policy, request_id=int(rid),
            seeker=int(seeker), gen_time=float(gen),
            completion_time=float(comp) if comp else None,
            status=status, plan=plan,
            model_estimate=float(est) if est else None,
            rank_available=int(avail) if avail else None,
            wait=float(wait), transfer_in=float(xfer),
            queue_total=float(queue), exec_total=float(execs),
            handoff_total=float(handoff),
        ))
    return rows


# ----------------------------------------------------------------------
# metrics
# ----------------------------------------------------------------------

def _mean(xs):
    return sum(xs) / len(xs)


def _mean_ci(values) -> tuple:
    """Mean and 95% t-interval half-width over replication means."""
    n = len(values)
    m = _mean(values)
    if n < 2:
        return m, None
    sd = float(np.std(values, ddof=1))
    hw = float(stats.t.ppf(0.975, n - 1)) * sd / math.sqrt(n)
    return m, hw


def _times_by_request(rows) -> dict:
    """(seed, request_id) -> {policy: provisioning time}, completed only."""
    table = {}
    for r in rows:
        t = r.provisioning_time()
        if t is not None:
            table.setdefault((r.seed, r.request_id), {})[r.policy] = t
    return table


def _policy_replication_means(rows) -> dict:
    acc = {}
    for r in rows:
        t = r.provisioning_time()
        if t is not None:
            acc.setdefault(r.policy, {}).setdefault(r.seed, []).append(t)
    return {
        pol: {seed: _mean(ts) for seed, ts in by_seed.items()}
        for pol, by_seed in acc.items()
    }


def _grouped_losses(rows, order, group_size) -> dict:
    """Per-policy mean loss vs the per-request best, in generation-order
    groups of ``group_size`` requests per replication."""
    by_seed = {}
    for r in rows:
        by_seed.setdefault(r.seed, {}).setdefault(r.request_id, {})[r.policy] = r
    group_means = {pol: [] for pol in order}
    oracle_vs_best = []
    oracle_vs_mev = []
    for seed in sorted(by_seed):
        reqs = sorted(by_seed[seed])
        for start in range(0, len(reqs), group_size):
            chunk = reqs[start:start + group_size]
            losses = {pol: [] for pol in order}
            o_best, o_mev = [], []
            for rid in chunk:
                recs = by_seed[seed][rid]
                times = {
                    pol: (recs[pol].provisioning_time()
                          if pol in recs and recs[pol].provisioning_time() is not None
                          else math.inf)
                    for pol in order
                }
                best = min(times.values())
                if math.isinf(best):
                    continue
                for pol in order:
                    if not math.isinf(times[pol]):
                        losses[pol].append(times[pol] - best)
                ref = [times.get(p.value, math.inf) for p in ORACLE_REFERENCE_POLICIES]
                if all(p.value in times for p in ORACLE_REFERENCE_POLICIES):
                    o = min(ref)
                    if not math.isinf(o):
                        o_best.append(o - best)
                        mev = times.get(PolicyKind.MEV.value, math.inf)
                        if not math.isinf(mev):
                            o_mev.append(o - mev)
            for pol in order:
                if losses[pol]:
                    group_means[pol].append(_mean(losses[pol]))
            if o_best:
                oracle_vs_best.append(_mean(o_best))
            if o_mev:
                oracle_vs_mev.append(_mean(o_mev))
    return {
        "per_policy": group_means,
        "oracle_vs_best": oracle_vs_best,
        "oracle_vs_mev": oracle_vs_mev,
    }


def summary_from_rows(rows, cfg: ExperimentConfig) -> dict:
    """The summary report: a pure function of the request rows and config."""
    order = [p.value for p in cfg.policies]
    rep_means = _policy_replication_means(rows)
    counts = {}
    completed = {}
    for r in rows:
        counts[r.policy] = counts.get(r.policy, 0) + 1
        if r.status == "completed":
            completed[r.policy] = completed.get(r.policy, 0) + 1

    policies_block = {}
    for pol in order:
        seed_means = [rep_means.get(pol, {}).get(seed) for seed in cfg.seeds]
        seed_means = [m for m in seed_means if m is not None]
        mean, hw = _mean_ci(seed_means) if seed_means else (None, None)
        policies_block[pol] = {
            "replication_means": seed_means,
            "mean_provisioning_time": mean,
            "ci95_halfwidth": hw,
            "n_requests": counts.get(pol, 0),
            "n_completed": completed.get(pol, 0),
        }

    # per-request winner fractions; ties go to the policy listed first
    table = _times_by_request(rows)
    wins = dict.fromkeys(order, 0)
    decided = 0
    for times in table.values():
        pairs = [(pol, times.get(pol, math.inf)) for pol in order]
        if math.isinf(min(t for _, t in pairs)):
            continue
        decided += 1
        wins[oracle_best(pairs)] += 1
    pct_best = {
        pol: (100.0 * wins[pol] / decided if decided else None) for pol in order
    }

    losses = _grouped_losses(rows, order, cfg.group_size)
    mean_loss = {
        pol: (_mean(groups) if groups else None)
        for pol, groups in losses["per_policy"].items()
    }

    out = {
        "comparison_design": (
            "common random numbers: one run per (seed, policy) sharing the "
            "trace, request stream, execution draws, and contention path; "
            "cross-policy references are composed per request across runs"),
        "policies": policies_block,
        "pct_best": pct_best,
        "n_compared_requests": decided,
        "mean_loss_vs_best": mean_loss,
        "loss_group_size": cfg.group_size,
        "loss_groups": losses["per_policy"],
    }
    if all(p.value in order for p in ORACLE_REFERENCE_POLICIES):
        ob = losses["oracle_vs_best"]
        om = losses["oracle_vs_mev"]
        out["oracle_best"] = {
            "policies": [p.value for p in ORACLE_REFERENCE_POLICIES],
            "mean_loss_vs_best": _mean(ob) if ob else None,
            "mean_gap_vs_mev": _mean(om) if om else None,
        }
    bias = model_bias(rows)
    if bias is not None:
        out["model_vs_sim"] = bias
    return out


def model_bias(rows) -> dict | None:
    """Model-estimated vs simulated mean for the model-driven policy."""
    est, act = [], []
    for r in rows:
        if r.policy != PolicyKind.MEV.value:
            continue
        t = r.provisioning_time()
        if t is not None and r.model_estimate is not None:
            est.append(r.model_estimate)
            act.append(t)
    if not est:
        return None
    m_est, m_act = _mean(est), _mean(act)
    return {
        "model_mean": m_est,
        "simulated_mean": m_act,
        "relative_error": (m_est - m_act) / m_act,
        "n_requests": len(est),
    }


def bias_report(rows) -> dict:
    """Model-vs-simulation agreement, overall and per replication."""
    per_seed = {}
    for r in rows:
        per_seed.setdefault(r.seed, []).append(r)
    return {
        "overall": model_bias(rows),
        "per_seed": {
            str(seed): model_bias(seed_rows)
            for seed, seed_rows in sorted(per_seed.items())
        },
    }


def rank_summary_from_rows(rows, cfg: ExperimentConfig, top_k: int = 5) -> dict:
    """Per-rank win fractions and losses from a run_rank_matrix row set.

    Availability comes from the deepest run, whose rank_available column is
    capped at top_k rather than at its own position; requests with fewer
    than top_k feasible plans contribute only to the positions they have.
    """
    labels = [f"rank{r}" for r in range(top_k)]
    by_req = {}
    for r in rows:
        by_req.setdefault((r.seed, r.request_id), {})[r.policy] = r
    wins = [0] * top_k
    losses = [[] for _ in range(top_k)]
    avails = []
    cohort = 0
    for recs in by_req.values():
        deepest = recs.get(labels[-1])
        if deepest is None or deepest.rank_available is None:
            continue
        avail = min(deepest.rank_available, top_k)
        if avail < 1:
            continue
        times = []
        for pos in range(avail):
            row = recs.get(labels[pos])
            t = row.provisioning_time() if row is not None else None
            times.append(math.inf if t is None else t)
        best = min(times)
        if math.isinf(best):
            continue
        cohort += 1
        avails.append(avail)
        winner = min(range(avail), key=lambda i: (times[i], i))
        wins[winner] += 1
        for pos in range(avail):
            if not math.isinf(times[pos]):
                losses[pos].append(times[pos] - best)
    return {
        "top_k": top_k,
        "n_requests": cohort,
        "mean_rank_available": _mean(avails) if avails else None,
        "rank_fractions": [
            (wins[p] / cohort if cohort else None) for p in range(top_k)
        ],
        "rank_mean_loss": [
            (_mean(losses[p]) if losses[p] else None) for p in range(top_k)
        ],
        "rank_n_evaluated": [len(losses[p]) for p in range(top_k)],
    }
