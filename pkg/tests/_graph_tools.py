"""Shared test helpers: random composition graphs and a brute-force path
enumerator used as the independent reference for shortest/top-k queries."""

from __future__ import annotations

import math

import numpy as np

from oppsim.composition import CompositionGraph, ServiceId, ServiceRequest


def random_weight(rng: np.random.Generator) -> float:
    """Mostly-continuous weights, with deliberate exact ties and infinities."""
    u = rng.random()
    if u < 0.05:
        return math.inf
    if u < 0.55:
        # small-integer weights give exactly representable equal path sums,
        # exercising the lexicographic tie-break
        return float(rng.integers(1, 5))
    return float(rng.uniform(0.0, 100.0))


def random_graph(rng: np.random.Generator, max_vertices: int = 12) -> CompositionGraph:
    in_t = int(rng.integers(0, 4))
    out_t = int(rng.integers(in_t + 1, 9))
    request = ServiceRequest(in_t, out_t)
    n = int(rng.integers(1, max_vertices + 1))
    vertices = set()
    for _ in range(6 * n):
        if len(vertices) == n:
            break
        if rng.random() < 0.8:
            # bias types into the request window so chains usually exist
            a = int(rng.integers(in_t, out_t))
            b = int(rng.integers(a + 1, out_t + 1))
        else:
            a = int(rng.integers(0, 8))
            b = int(rng.integers(a + 1, 9))
        vertices.add((ServiceId(a, b), int(rng.integers(0, 5))))
    vertices = sorted(vertices)
    start = [
        random_weight(rng) if s.input_type == in_t else None
        for s, _ in vertices
    ]
    end = [
        random_weight(rng) if s.output_type == out_t else None
        for s, _ in vertices
    ]
    edges = {}
    for u, (su, _) in enumerate(vertices):
        for v, (sv, _) in enumerate(vertices):
            if su.output_type == sv.input_type and rng.random() < 0.7:
                edges[(u, v)] = random_weight(rng)
    return CompositionGraph.from_parts(request, vertices, start, end, edges)


def enumerate_all_paths(cg: CompositionGraph):
    """Every Start-to-End (total, vertex path) by depth-first walk.

    Totals are folded left to right exactly as the library defines path cost,
    so agreement checks can compare floats bit for bit.
    """
    outgoing = [[] for _ in range(cg.n_vertices)]
    for v in range(cg.n_vertices):
        for u, w in cg.incoming[v]:
            outgoing[u].append((v, w))
    results = []

    def walk(v, total, path):
        if cg.end_weights[v] is not None:
            results.append((total + cg.end_weights[v], path))
        for nxt, w in outgoing[v]:
            walk(nxt, total + w, path + (nxt,))

    for v in range(cg.n_vertices):
        if cg.start_weights[v] is not None:
            walk(v, cg.start_weights[v], (v,))
    return results
