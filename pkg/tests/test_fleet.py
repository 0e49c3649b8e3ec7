import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vccopt.errors import DisconnectedGraph, InvalidEdgeEndpoint, NegativePrice, ValidationError
from vccopt.fleet import (
    DataCenterFleet,
    all_shortest_paths,
    path_price_matrix,
    shortest_paths_from,
    simple_paths,
    validate_fleet,
)


def test_minimal_connected_graph_is_valid():
    assert validate_fleet(DataCenterFleet(2, ((1, 2, 1.0),), (1.0, 1.0))) is None


def test_zero_prices_allowed():
    validate_fleet(DataCenterFleet(3, ((1, 2, 0.0), (1, 3, 0.0)), (1.0, 1.0, 1.0)))


def test_unreachable_node_rejected():
    with pytest.raises(DisconnectedGraph):
        validate_fleet(DataCenterFleet(3, ((1, 2, 1.0),), (1.0, 1.0, 1.0)))


@pytest.mark.parametrize(
    "edges, exc",
    [
        (((1, 3, 1.0),), InvalidEdgeEndpoint),
        (((0, 1, 1.0),), InvalidEdgeEndpoint),
        (((1, 1, 1.0), (1, 2, 1.0)), InvalidEdgeEndpoint),
        (((1, 2, -0.5),), NegativePrice),
    ],
)
def test_bad_edges(edges, exc):
    with pytest.raises(exc):
        validate_fleet(DataCenterFleet(2, edges, (1.0, 1.0)))


def test_capacity_count_checked():
    with pytest.raises(ValidationError):
        validate_fleet(DataCenterFleet(2, ((1, 2, 1.0),), (1.0,)))


def test_single_edge_path():
    p = shortest_paths_from(DataCenterFleet(2, ((1, 2, 3.0),), (1.0, 1.0)), 1)[2]
    assert p.base_price == 3.0
    assert p.nodes == (1, 2)


def test_triangle_detour_is_cheaper():
    fleet = DataCenterFleet(3, ((1, 2, 5.0), (1, 3, 1.0), (3, 2, 1.0)), (1.0,) * 3)
    p = shortest_paths_from(fleet, 1)[2]
    assert p.base_price == 2.0
    assert p.edge_sequence == ((1, 3, 1.0), (3, 2, 1.0))
    assert min(sum(_edge_price(fleet, a, b) for a, b in zip(sp, sp[1:])) for sp in simple_paths(fleet, 1, 2)) == 2.0


def test_self_path_is_empty():
    p = shortest_paths_from(DataCenterFleet(2, ((1, 2, 3.0),), (1.0, 1.0)), 1)[1]
    assert p.edge_sequence == () and p.base_price == 0.0


def test_ties_prefer_fewer_edges_then_lexicographic():
    # 1-4 direct (price 2) vs 1-2-4 (1+1): fewer edges wins
    fleet = DataCenterFleet(4, ((1, 2, 1.0), (2, 4, 1.0), (1, 4, 2.0), (1, 3, 1.0), (3, 4, 1.0)), (1.0,) * 4)
    assert shortest_paths_from(fleet, 1)[4].nodes == (1, 4)
    # equal length and price: 1-2-4 before 1-3-4
    fleet = DataCenterFleet(4, ((1, 3, 1.0), (3, 4, 1.0), (1, 2, 1.0), (2, 4, 1.0)), (1.0,) * 4)
    assert shortest_paths_from(fleet, 1)[4].nodes == (1, 2, 4)


def test_parallel_edges_use_cheapest():
    fleet = DataCenterFleet(2, ((1, 2, 4.0), (2, 1, 1.5)), (1.0, 1.0))
    assert shortest_paths_from(fleet, 2)[1].base_price == 1.5


def _edge_price(fleet, a, b):
    return min(s for k, l, s in fleet.edges if {k, l} == {a, b})


@st.composite
def connected_fleets(draw):
    D = draw(st.integers(2, 6))
    prices = st.sampled_from([0.0, 0.5, 1.0, 1.5, 2.0, 3.0])
    # random spanning tree plus extra edges
    edges = [(draw(st.integers(1, d - 1)), d, draw(prices)) for d in range(2, D + 1)]
    for k, l in itertools.combinations(range(1, D + 1), 2):
        if draw(st.booleans()):
            edges.append((k, l, draw(prices)))
    return DataCenterFleet(D, tuple(edges), (1.0,) * D)


@settings(max_examples=60, deadline=None)
@given(connected_fleets())
def test_shortest_prices_match_enumeration(fleet):
    paths = all_shortest_paths(fleet)
    P = path_price_matrix(paths, fleet.dc_count)
    for s in range(1, fleet.dc_count + 1):
        for t in range(1, fleet.dc_count + 1):
            p = paths[s][t]
            best = min(sum(_edge_price(fleet, a, b) for a, b in zip(sp, sp[1:])) for sp in simple_paths(fleet, s, t))
            assert p.base_price == pytest.approx(best, abs=1e-12)
            # contiguous walk whose prices add up
            assert p.nodes[0] == s and p.nodes[-1] == t
            assert p.base_price == sum(e[2] for e in p.edge_sequence)
    # triangle inequality
    D = fleet.dc_count
    assert np.all(P[:, None, :] <= P[:, :, None] + P[None, :, :] + 1e-12)


def test_paths_are_deterministic():
    fleet = DataCenterFleet(4, ((1, 2, 1.0), (2, 3, 1.0), (3, 4, 1.0), (4, 1, 1.0), (1, 3, 2.0)), (1.0,) * 4)
    assert repr(all_shortest_paths(fleet)) == repr(all_shortest_paths(fleet))
