"""Contact-trace ingestion, generation, and summary statistics.

The canonical trace format is CSV with header ``t_start,t_end,node_a,node_b``
holding decimal seconds and non-negative integer node ids.  Real-world trace
collections publish several ad-hoc formats; converting them to this one is a
matter of column reordering, after which parsing, normalization, and replay
are bit-exactly specified here.
"""

import csv
import io
import logging
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ContactInterval",
    "SyntheticSpec",
    "TraceParseError",
    "TraceParseResult",
    "parse_trace",
    "serialize_trace",
    "generate_synthetic",
    "trace_stats",
]

log = logging.getLogger(__name__)

_HEADER = ("t_start", "t_end", "node_a", "node_b")


class TraceParseError(ValueError):
    """Malformed trace input; carries the offending line number."""


@dataclass(frozen=True, order=True)
class ContactInterval:
    """One connectivity interval between a canonicalized node pair."""

    t_start: float
    t_end: float
    node_a: int
    node_b: int

    def __post_init__(self):
        if self.node_a < 0 or self.node_b < 0:
            raise ValueError("node ids must be non-negative")
        if self.node_a >= self.node_b:
            raise ValueError("pair must be canonical: node_a < node_b")
        if not self.t_start < self.t_end:
            raise ValueError("interval must satisfy t_start < t_end")

    @property
    def pair(self):
        return (self.node_a, self.node_b)

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start


@dataclass(frozen=True)
class SyntheticSpec:
    """Per-pair alternating-renewal contact process parameters."""

    n_nodes: int
    delta: float
    delta_prime: float
    duration: float
    seed: int

    def __post_init__(self):
        if self.n_nodes < 0:
            raise ValueError("n_nodes must be non-negative")
        if self.delta <= 0 or self.delta_prime <= 0:
            raise ValueError("rates must be positive")
        if self.duration < 0:
            raise ValueError("duration must be non-negative")


class TraceParseResult(list):
    """Normalized intervals plus a report of what normalization did."""

    def __init__(self, intervals=(), merges: int = 0, drops: int = 0):
        super().__init__(intervals)
        self.merges = merges
        self.drops = drops

    def report(self) -> dict:
        return {"intervals": len(self), "merges": self.merges, "drops": self.drops}


def _normalize(raw, merges_seen: int = 0, drops: int = 0) -> TraceParseResult:
    """Canonical order plus per-pair union of overlapping/adjacent intervals."""
    by_pair = {}
    for t0, t1, a, b in raw:
        by_pair.setdefault((a, b), []).append((t0, t1))
    merges = merges_seen
    out = []
    for (a, b), spans in by_pair.items():
        spans.sort()
        cur0, cur1 = spans[0]
        for t0, t1 in spans[1:]:
            if t0 <= cur1:  # overlapping or adjacent: one connectivity span
                cur1 = max(cur1, t1)
                merges += 1
            else:
                out.append(ContactInterval(cur0, cur1, a, b))
                cur0, cur1 = t0, t1
        out.append(ContactInterval(cur0, cur1, a, b))
    out.sort(key=lambda iv: (iv.t_start, iv.node_a, iv.node_b, iv.t_end))
    return TraceParseResult(out, merges=merges, drops=drops)


def parse_trace(source) -> TraceParseResult:
    """Parse the canonical CSV trace format into normalized intervals.

    ``source`` may be a file path, a text stream, or an iterable of lines.
    Rows with t_end <= t_start are dropped with a warning; non-numeric
    fields abort with the line number.  Output is canonicalized (a < b),
    per-pair merged, and sorted by start time.
    """
    if isinstance(source, (str, bytes)):
        with open(source, "r", newline="") as fh:
            return parse_trace(fh)
    if isinstance(source, io.TextIOBase) or hasattr(source, "read"):
        lines = source
    else:
        lines = iter(source)

    reader = csv.reader(lines)
    raw = []
    drops = 0
    header = None
    for line_no, row in enumerate(reader, start=1):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if header is None:
            header = tuple(col.strip().lower() for col in row)
            if header != _HEADER:
                raise TraceParseError(
                    f"line 1: expected header {','.join(_HEADER)!r}, "
                    f"got {','.join(row)!r}")
            continue
        if len(row) != 4:
            raise TraceParseError(f"line {line_no}: expected 4 fields, got {len(row)}")
        try:
            t0, t1 = float(row[0]), float(row[1])
            a, b = int(row[2]), int(row[3])
        except ValueError as exc:
            raise TraceParseError(f"line {line_no}: {exc}") from None
        if a < 0 or b < 0:
            raise TraceParseError(f"line {line_no}: negative node id")
        if a == b:
            raise TraceParseError(f"line {line_no}: self-contact {a},{b}")
        if not (math.isfinite(t0) and math.isfinite(t1)):
            raise TraceParseError(f"line {line_no}: non-finite time")
        if t1 <= t0:
            log.warning("dropping line %d: empty or inverted interval [%g, %g]",
                        line_no, t0, t1)
            drops += 1
            continue
        if a > b:
            a, b = b, a
        raw.append((t0, t1, a, b))
    if header is None:
        raise TraceParseError("line 1: missing header")
    return _normalize(raw, drops=drops)


def serialize_trace(intervals, stream=None) -> str | None:
    """Write intervals in the canonical CSV format (inverse of parse_trace
    on normalized lists).  Returns the text when no stream is given."""
    own = stream is None
    out = io.StringIO() if own else stream
    out.write(",".join(_HEADER) + "\n")
    for iv in intervals:
        out.write(f"{iv.t_start!r},{iv.t_end!r},{iv.node_a},{iv.node_b}\n")
    return out.getvalue() if own else None


def generate_synthetic(spec: SyntheticSpec) -> TraceParseResult:
    """Independent alternating exp(delta)/exp(delta_prime) processes per pair.

    Every pair starts disconnected with a full inter-contact draw, and the
    last interval is truncated at the horizon.  Each pair has its own seed
    substream, so the trace is reproducible and insensitive to pair order.
    """
    intervals = []
    for a in range(spec.n_nodes):
        for b in range(a + 1, spec.n_nodes):
            ss = np.random.SeedSequence(
                entropy=spec.seed, spawn_key=(a, b))
            rng = np.random.Generator(np.random.SFC64(ss))
            t = 0.0
            while True:
                t += rng.exponential(1.0 / spec.delta_prime)
                if t >= spec.duration:
                    break
                start = t
                t += rng.exponential(1.0 / spec.delta)
                end = min(t, spec.duration)
                if end > start:
                    intervals.append(ContactInterval(start, end, a, b))
                if t >= spec.duration:
                    break
    return _normalize([(iv.t_start, iv.t_end, iv.node_a, iv.node_b)
                       for iv in intervals])


def _moments(values) -> dict:
    if not values:
        return {"count": 0, "mean": 0.0, "var": 0.0}
    arr = np.asarray(values, dtype=np.float64)
    return {
        "count": int(arr.size),
        "mean": float(arr.mean()),
        "var": float(arr.var(ddof=1)) if arr.size > 1 else 0.0,
    }


def trace_stats(intervals, horizon: float | None = None,
                n_nodes: int | None = None) -> dict:
    """Per-pair and global contact/gap statistics of a normalized trace.

    ``horizon`` defaults to the last interval end; ``n_nodes`` (for pair
    coverage) defaults to max node id + 1.  Gaps are measured between
    consecutive intervals of the same pair only.
    """
    intervals = list(intervals)
    if not intervals:
        return {
            "horizon": float(horizon or 0.0), "n_nodes": int(n_nodes or 0),
            "n_intervals": 0, "n_pairs": 0, "pair_coverage": 0.0,
            "contact_fraction": 0.0,
            "contact": _moments([]), "gap": _moments([]), "per_pair": {},
        }
    if horizon is None:
        horizon = max(iv.t_end for iv in intervals)
    if n_nodes is None:
        n_nodes = max(iv.node_b for iv in intervals) + 1

    by_pair = {}
    for iv in intervals:
        by_pair.setdefault(iv.pair, []).append(iv)

    per_pair = {}
    all_contacts, all_gaps = [], []
    total_contact_time = 0.0
    for pair, ivs in sorted(by_pair.items()):
        ivs.sort(key=lambda iv: iv.t_start)
        contacts = [iv.duration for iv in ivs]
        gaps = [nxt.t_start - cur.t_end for cur, nxt in zip(ivs, ivs[1:])]
        contact_time = float(sum(contacts))
        per_pair[f"{pair[0]}-{pair[1]}"] = {
            "contact": _moments(contacts),
            "gap": _moments(gaps),
            "contact_fraction": contact_time / horizon if horizon > 0 else 0.0,
        }
        all_contacts.extend(contacts)
        all_gaps.extend(gaps)
        total_contact_time += contact_time

    n_pairs = len(by_pair)
    possible = n_nodes * (n_nodes - 1) // 2
    return {
        "horizon": float(horizon),
        "n_nodes": int(n_nodes),
        "n_intervals": len(intervals),
        "n_pairs": n_pairs,
        "pair_coverage": n_pairs / possible if possible else 0.0,
        "contact_fraction": (total_contact_time / (n_pairs * horizon)
                             if n_pairs and horizon > 0 else 0.0),
        "contact": _moments(all_contacts),
        "gap": _moments(all_gaps),
        "per_pair": per_pair,
    }
