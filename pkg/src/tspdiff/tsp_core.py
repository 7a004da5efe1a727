"""TSP instances, exact/heuristic solvers, heatmap decoding and the cost-drop metric.

Every vector over edges uses the lexicographic order of vertex pairs (i, j), i < j.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

EXACT_LIMIT = 16
INFEASIBLE = math.inf


@dataclass(frozen=True, eq=False)
class TspInstance:
    n: int
    coords: np.ndarray
    edges: np.ndarray
    weights: np.ndarray
    edge_id: np.ndarray = field(repr=False)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def dist(self, i: int, j: int) -> float:
        return float(self.weights[self.edge_id[i, j]])

    def fingerprint(self) -> str:
        return hashlib.sha1(np.ascontiguousarray(self.coords, dtype="<f8").tobytes()).hexdigest()


@dataclass(frozen=True)
class Tour:
    perm: tuple[int, ...]
    cost: float

    def edge_set(self) -> frozenset[tuple[int, int]]:
        n = len(self.perm)
        return frozenset(
            (min(a, b), max(a, b)) for a, b in ((self.perm[k], self.perm[(k + 1) % n]) for k in range(n))
        )


def edge_list(n: int) -> np.ndarray:
    i, j = np.triu_indices(n, k=1)
    return np.stack([i, j], axis=1)


def make_instance(coords) -> TspInstance:
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ValueError(f"coords must have shape (n, 2), got {coords.shape}")
    n = coords.shape[0]
    if n < 3:
        raise ValueError(f"a TSP instance needs at least 3 vertices, got {n}")
    if not np.all(np.isfinite(coords)) or coords.min() < 0.0 or coords.max() > 1.0:
        raise ValueError("coordinates must lie in the unit square")
    edges = edge_list(n)
    diff = coords[edges[:, 0]] - coords[edges[:, 1]]
    weights = np.sqrt(np.sum(diff * diff, axis=1))
    edge_id = np.full((n, n), -1, dtype=np.int64)
    ids = np.arange(len(edges))
    edge_id[edges[:, 0], edges[:, 1]] = ids
    edge_id[edges[:, 1], edges[:, 0]] = ids
    for arr in (coords, edges, weights, edge_id):
        arr.setflags(write=False)
    return TspInstance(n=n, coords=coords, edges=edges, weights=weights, edge_id=edge_id)


def generate_instance(n: int, seed) -> TspInstance:
    """Uniform random points in the unit square; ``seed`` may be an int or a sequence of ints."""
    if n < 3:
        raise ValueError(f"n must be >= 3, got {n}")
    rng = np.random.default_rng(seed)
    return make_instance(rng.uniform(0.0, 1.0, size=(n, 2)))


def canonical_perm(perm: Sequence[int]) -> tuple[int, ...]:
    """Rotate to start at vertex 0 and orient towards the smaller neighbour."""
    perm = [int(v) for v in perm]
    k = perm.index(0)
    perm = perm[k:] + perm[:k]
    if len(perm) > 2 and perm[-1] < perm[1]:
        perm = [perm[0]] + perm[:0:-1]
    return tuple(perm)


def tour_cost(instance: TspInstance, perm: Sequence[int]) -> float:
    p = np.asarray(perm, dtype=np.int64)
    return float(np.sum(instance.weights[instance.edge_id[p, np.roll(p, -1)]]))


def make_tour(instance: TspInstance, perm: Sequence[int]) -> Tour:
    perm = canonical_perm(perm)
    if sorted(perm) != list(range(instance.n)):
        raise ValueError("perm is not a permutation of the vertices")
    return Tour(perm=perm, cost=tour_cost(instance, perm))


def tour_to_solution(instance: TspInstance, tour: Tour) -> np.ndarray:
    p = np.asarray(tour.perm, dtype=np.int64)
    x = np.zeros(instance.num_edges, dtype=np.int8)
    x[instance.edge_id[p, np.roll(p, -1)]] = 1
    return x


def _cycle_from_edges(n: int, chosen: Iterable[tuple[int, int]]) -> list[int] | None:
    adj: list[list[int]] = [[] for _ in range(n)]
    for a, b in chosen:
        adj[a].append(b)
        adj[b].append(a)
    if any(len(nb) != 2 for nb in adj):
        return None
    perm = [0]
    prev, cur = -1, 0
    while True:
        a, b = adj[cur]
        nxt = a if a != prev else b
        if nxt == 0:
            break
        perm.append(nxt)
        prev, cur = cur, nxt
        if len(perm) > n:
            return None
    return perm if len(perm) == n else None


def objective(instance: TspInstance, x) -> float:
    """Tour length if ``x`` selects a single Hamiltonian cycle, else ``inf``."""
    x = np.asarray(x)
    if x.shape != (instance.num_edges,):
        raise ValueError(f"solution length {x.shape} does not match {instance.num_edges} edges")
    sel = np.flatnonzero(x)
    if len(sel) != instance.n:
        return INFEASIBLE
    if not np.all((x == 0) | (x == 1)):
        return INFEASIBLE
    if _cycle_from_edges(instance.n, map(tuple, instance.edges[sel])) is None:
        return INFEASIBLE
    return float(x.astype(np.float64) @ instance.weights)


def solve_exact(instance: TspInstance) -> Tour:
    """Held-Karp dynamic program over subsets of vertices 1..n-1."""
    n = instance.n
    if n > EXACT_LIMIT:
        raise ValueError(f"solve_exact is limited to n <= {EXACT_LIMIT} (got {n}); use solve_heuristic")
    if n == 3:
        return make_tour(instance, [0, 1, 2])
    m = n - 1
    d = np.zeros((n, n))
    d[instance.edges[:, 0], instance.edges[:, 1]] = instance.weights
    d = d + d.T
    inner = d[1:, 1:]
    full = 1 << m
    dp = np.full((full, m), np.inf)
    parent = np.full((full, m), -1, dtype=np.int64)
    for k in range(m):
        dp[1 << k, k] = d[0, k + 1]
    bits = np.arange(m)
    for mask in range(1, full):
        row = dp[mask]
        if not np.isfinite(row).any():
            continue
        members = (mask >> bits) & 1
        outside = np.flatnonzero(members == 0)
        if outside.size == 0:
            continue
        # cand[j, k]: end at k in mask, then step to j outside mask
        cand = row[None, :] + inner[outside, :]
        best = np.argmin(cand, axis=1)
        vals = cand[np.arange(outside.size), best]
        targets = mask | (1 << outside)
        better = vals < dp[targets, outside]
        dp[targets[better], outside[better]] = vals[better]
        parent[targets[better], outside[better]] = best[better]
    last = dp[full - 1] + d[1:, 0]
    k = int(np.argmin(last))
    mask = full - 1
    path = []
    while k >= 0:
        path.append(k + 1)
        prev = int(parent[mask, k])
        mask ^= 1 << k
        k = prev
    return make_tour(instance, [0] + path[::-1])


def two_opt(instance: TspInstance, perm: Sequence[int], tol: float = 1e-12) -> list[int]:
    """First-improvement 2-opt until no exchange shortens the tour by more than ``tol``."""
    p = list(perm)
    n = len(p)
    if n < 4:
        return p
    w = instance.weights
    eid = instance.edge_id
    improved = True
    while improved:
        improved = False
        for i in range(n - 1):
            a, b = p[i], p[i + 1]
            for j in range(i + 2, n if i > 0 else n - 1):
                c, e = p[j], p[(j + 1) % n]
                delta = w[eid[a, c]] + w[eid[b, e]] - w[eid[a, b]] - w[eid[c, e]]
                if delta < -tol:
                    p[i + 1 : j + 1] = p[i + 1 : j + 1][::-1]
                    improved = True
                    a, b = p[i], p[i + 1]
    return p


def nearest_neighbor(instance: TspInstance, start: int = 0) -> list[int]:
    n = instance.n
    visited = np.zeros(n, dtype=bool)
    perm = [start]
    visited[start] = True
    d = np.zeros((n, n))
    d[instance.edges[:, 0], instance.edges[:, 1]] = instance.weights
    d = d + d.T
    cur = start
    for _ in range(n - 1):
        row = np.where(visited, np.inf, d[cur])
        cur = int(np.argmin(row))
        visited[cur] = True
        perm.append(cur)
    return perm


def solve_heuristic(instance: TspInstance, seed=0) -> Tour:
    """Nearest-neighbour tour from a seeded start vertex, polished by 2-opt."""
    start = int(np.random.default_rng(seed).integers(instance.n))
    return make_tour(instance, two_opt(instance, nearest_neighbor(instance, start)))


def decode_heatmap(instance: TspInstance, scores, refine: bool = False) -> Tour:
    """Greedy edge insertion in descending score order (ties: lower edge index first).

    An edge is skipped when it would give a vertex degree 3 or close a cycle
    before all vertices are on one path; the final closing edge is added last.
    """
    scores = np.asarray(scores, dtype=np.float64)
    n = instance.n
    if scores.shape != (instance.num_edges,):
        raise ValueError(f"scores length {scores.shape} does not match {instance.num_edges} edges")
    order = np.argsort(-scores, kind="stable")
    parent = list(range(n))

    def find(v):
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    degree = [0] * n
    chosen = []
    for k in order:
        a, b = int(instance.edges[k, 0]), int(instance.edges[k, 1])
        if degree[a] >= 2 or degree[b] >= 2:
            continue
        ra, rb = find(a), find(b)
        if ra == rb:
            continue
        parent[ra] = rb
        degree[a] += 1
        degree[b] += 1
        chosen.append((a, b))
        if len(chosen) == n - 1:
            break
    ends = [v for v in range(n) if degree[v] < 2]
    chosen.append((ends[0], ends[-1]))
    perm = _cycle_from_edges(n, chosen)
    assert perm is not None
    if refine:
        perm = two_opt(instance, perm)
    return make_tour(instance, perm)


def cost_drop_pct(solver_cost: float, optimal_cost: float) -> float:
    if not optimal_cost > 0:
        raise ValueError(f"optimal cost must be positive, got {optimal_cost}")
    return 100.0 * (solver_cost - optimal_cost) / optimal_cost


# --- labelled datasets ------------------------------------------------------


@dataclass(frozen=True)
class LabeledInstance:
    instance: TspInstance
    tour: Tour
    label_kind: str


def label_instance(instance: TspInstance, seed=0) -> LabeledInstance:
    if instance.n <= EXACT_LIMIT:
        return LabeledInstance(instance, solve_exact(instance), "exact")
    return LabeledInstance(instance, solve_heuristic(instance, seed), "2opt")


def make_dataset(n: int, count: int, seed: int) -> list[LabeledInstance]:
    if count < 1:
        raise ValueError("count must be >= 1")
    data = [label_instance(generate_instance(n, [seed, i]), [seed, i]) for i in range(count)]
    if n > EXACT_LIMIT:
        log.warning("n=%d exceeds the exact-solver limit; labels are 2-opt local optima", n)
    return data


def to_record(item: LabeledInstance) -> dict:
    return {
        "n": item.instance.n,
        "coords": item.instance.coords.tolist(),
        "tour": list(item.tour.perm),
        "cost": item.tour.cost,
        "label_kind": item.label_kind,
    }


def from_record(rec: dict) -> LabeledInstance:
    inst = make_instance(rec["coords"])
    if inst.n != rec["n"]:
        raise ValueError("record n does not match its coordinates")
    return LabeledInstance(inst, make_tour(inst, rec["tour"]), rec["label_kind"])


def write_dataset(path, items: Iterable[LabeledInstance]) -> None:
    # json emits repr() floats: shortest strings that round-trip exactly
    with open(path, "w") as f:
        for item in items:
            f.write(json.dumps(to_record(item)) + "\n")


def read_dataset(path) -> list[LabeledInstance]:
    lines = Path(path).read_text().splitlines()
    return [from_record(json.loads(line)) for line in lines if line.strip()]
