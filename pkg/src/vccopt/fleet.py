"""Data-center fleet graph, migration paths and capacity bookkeeping.

DC ids are 1-based everywhere in the public data model; array rows use
``dc_id - 1``.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DisconnectedGraph, InvalidEdgeEndpoint, NegativePrice, ValidationError

Edge = Tuple[int, int, float]


@dataclass(frozen=True)
class DataCenterFleet:
    dc_count: int
    edges: Tuple[Edge, ...]
    physical_capacity: Tuple[float, ...]
    names: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple((int(k), int(l), float(s)) for k, l, s in self.edges))
        object.__setattr__(self, "physical_capacity", tuple(float(c) for c in self.physical_capacity))
        if self.names is not None:
            object.__setattr__(self, "names", tuple(str(n) for n in self.names))

    @property
    def capacity_array(self) -> np.ndarray:
        return np.asarray(self.physical_capacity, dtype=float)

    def neighbors(self) -> Dict[int, List[Tuple[int, float]]]:
        adj: Dict[int, List[Tuple[int, float]]] = {d: [] for d in range(1, self.dc_count + 1)}
        for k, l, sigma in self.edges:
            adj[k].append((l, sigma))
            adj[l].append((k, sigma))
        return adj


@dataclass(frozen=True)
class MigrationPath:
    source: int
    target: int
    edge_sequence: Tuple[Edge, ...] = field(default_factory=tuple)
    base_price: float = 0.0

    @property
    def nodes(self) -> Tuple[int, ...]:
        nodes = [self.source]
        for k, l, _ in self.edge_sequence:
            nodes.append(l if k == nodes[-1] else k)
        return tuple(nodes)


def validate_fleet(fleet: DataCenterFleet) -> None:
    """Raise the first invariant violation found; return None when the fleet is valid."""
    if fleet.dc_count < 1:
        raise ValidationError("dc_count must be a positive integer")
    if len(fleet.physical_capacity) != fleet.dc_count:
        raise ValidationError(
            f"physical_capacity has {len(fleet.physical_capacity)} entries, expected {fleet.dc_count}"
        )
    if any(c < 0 or not np.isfinite(c) for c in fleet.physical_capacity):
        raise ValidationError("physical capacities must be finite and nonnegative")
    if fleet.names is not None and len(fleet.names) != fleet.dc_count:
        raise ValidationError("names must have one entry per DC")
    for k, l, sigma in fleet.edges:
        for end in (k, l):
            if not 1 <= end <= fleet.dc_count:
                raise InvalidEdgeEndpoint(f"edge ({k},{l}) has endpoint {end} outside 1..{fleet.dc_count}")
        if k == l:
            raise InvalidEdgeEndpoint(f"self-loop at DC {k}")
        if sigma < 0 or not np.isfinite(sigma):
            raise NegativePrice(f"edge ({k},{l}) has price {sigma}")

    seen = {1}
    stack = [1]
    adj = fleet.neighbors()
    while stack:
        node = stack.pop()
        for nxt, _ in adj[node]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    if len(seen) != fleet.dc_count:
        missing = sorted(set(range(1, fleet.dc_count + 1)) - seen)
        raise DisconnectedGraph(f"DCs {missing} unreachable from DC 1")


def shortest_paths_from(fleet: DataCenterFleet, source: int) -> Dict[int, MigrationPath]:
    """Minimum-price paths from ``source`` to every DC.

    Ties are broken by fewest edges, then by the lexicographically smallest
    node sequence. The label (price, hops, nodes) is monotone under edge
    extension, so a plain Dijkstra over composite labels is exact.
    """
    validate_fleet(fleet)
    # cheapest parallel edge per node pair, lowest index on ties
    best_edge: Dict[Tuple[int, int], Edge] = {}
    for e in fleet.edges:
        key = (min(e[0], e[1]), max(e[0], e[1]))
        if key not in best_edge or e[2] < best_edge[key][2]:
            best_edge[key] = e
    adj: Dict[int, List[Tuple[int, Edge]]] = {d: [] for d in range(1, fleet.dc_count + 1)}
    for (a, b), e in sorted(best_edge.items()):
        adj[a].append((b, e))
        adj[b].append((a, e))

    labels: Dict[int, Tuple[float, int, Tuple[int, ...], Tuple[Edge, ...]]] = {}
    heap = [(0.0, 0, (source,), ())]
    while heap:
        price, hops, nodes, edges = heapq.heappop(heap)
        node = nodes[-1]
        if node in labels:
            continue
        labels[node] = (price, hops, nodes, edges)
        for nxt, e in adj[node]:
            if nxt not in labels:
                heapq.heappush(heap, (price + e[2], hops + 1, nodes + (nxt,), edges + (e,)))

    return {
        target: MigrationPath(source, target, edges, float(sum(e[2] for e in edges)))
        for target, (_, _, _, edges) in sorted(labels.items())
    }


def all_shortest_paths(fleet: DataCenterFleet) -> Dict[int, Dict[int, MigrationPath]]:
    return {s: shortest_paths_from(fleet, s) for s in range(1, fleet.dc_count + 1)}


def path_price_matrix(paths: Dict[int, Dict[int, MigrationPath]], dc_count: int) -> np.ndarray:
    """``P[s-1, t-1]`` = base price of the frozen path s -> t."""
    prices = np.zeros((dc_count, dc_count))
    for s, row in paths.items():
        for t, path in row.items():
            prices[s - 1, t - 1] = path.base_price
    return prices


def simple_paths(fleet: DataCenterFleet, source: int, target: int) -> List[Sequence[int]]:
    """Enumerate every simple node path; only meant for tiny graphs in tests."""
    adj = fleet.neighbors()
    out: List[Sequence[int]] = []

    def walk(path):
        if path[-1] == target:
            out.append(tuple(path))
            return
        for nxt, _ in adj[path[-1]]:
            if nxt not in path:
                walk(path + [nxt])

    walk([source])
    return out
