"""Period graphs and weighted clustering against an O(n^3) oracle."""
from __future__ import annotations

import itertools
import random
import time

from conftest import addr, ev
from rugwatch.graphs import PeriodGraph, avg_clustering, build_periods

TOKEN = addr(0xBB)


def transfer(block, log_index, sender, receiver, amount):
    return ev(block, log_index, TOKEN, "Transfer", **{"from": sender, "to": receiver, "amount": amount})


def graph_from_weighted_edges(edges) -> PeriodGraph:
    graph = PeriodGraph(0)
    for sender, receiver, weight in edges:
        graph.add_transfer(sender, receiver, weight)
    return graph


def oracle_acc(graph: PeriodGraph) -> float:
    """Triple loop over all node combinations, straight off the formula."""
    weights = {}
    for (u, v), w in graph.edges.items():
        key = (min(u, v), max(u, v))
        weights[key] = weights.get(key, 0) + w
    if not graph.nodes:
        return 0.0
    if not weights:
        return 0.0
    max_weight = max(weights.values())

    def normalized(a, b):
        return weights.get((min(a, b), max(a, b)), 0) / max_weight

    total = 0.0
    for u in sorted(graph.nodes):
        neighbors = sorted(n for n in graph.nodes if n != u and normalized(u, n) > 0)
        degree = len(neighbors)
        if degree < 2:
            continue
        cu = 0.0
        for v, w in itertools.permutations(neighbors, 2):
            if normalized(v, w) > 0:
                cu += (normalized(u, v) * normalized(v, w) * normalized(w, u)) ** (1.0 / 3.0)
        total += cu / (degree * (degree - 1))
    return total / len(graph.nodes)


def test_build_periods_empty_stream():
    assert build_periods([]) == []


def test_build_periods_sums_repeat_edges():
    transfers = [transfer(10, i, addr(1), addr(2), 2) for i in range(3)]
    graphs = build_periods(transfers, period_blocks=100)
    assert len(graphs) == 1
    assert graphs[0].edges == {(addr(1), addr(2)): 6}
    assert graphs[0].n_tx == 3
    assert graphs[0].volume == 6


def test_build_periods_assigns_by_block_grid_and_fills_gaps():
    transfers = [
        transfer(10, 0, addr(1), addr(2), 1),
        transfer(105, 0, addr(1), addr(2), 1),
        transfer(350, 0, addr(2), addr(3), 1),
    ]
    graphs = build_periods(transfers, period_blocks=100)
    assert [g.period for g in graphs] == [0, 1, 2, 3]
    assert graphs[2].n_tx == 0 and graphs[2].nodes == set()


def test_self_loops_count_for_volume_but_not_for_the_graph():
    graphs = build_periods([transfer(10, 0, addr(1), addr(1), 9)], period_blocks=100)
    graph = graphs[0]
    assert graph.n_tx == 1 and graph.volume == 9
    assert graph.nodes == set() and graph.edges == {}
    assert avg_clustering(graph).acc == 0.0


def test_star_graph_has_zero_clustering():
    center = addr(0x5)
    edges = [(addr(10 + i), center, (i + 1) * 7) for i in range(6)]
    result = avg_clustering(graph_from_weighted_edges(edges))
    assert result.acc == 0.0
    assert all(value == 0.0 for value in result.per_node.values())


def test_equal_weight_triangle_scores_one_everywhere():
    edges = [(addr(1), addr(2), 5), (addr(2), addr(3), 5), (addr(1), addr(3), 5)]
    result = avg_clustering(graph_from_weighted_edges(edges))
    assert result.acc == 1.0
    assert set(result.per_node.values()) == {1.0}


def test_unequal_triangle_frozen_value():
    # weights 1,2,4 normalized by 4: product = 8/64, cbrt = 0.5.
    edges = [(addr(1), addr(2), 1), (addr(2), addr(3), 2), (addr(1), addr(3), 4)]
    result = avg_clustering(graph_from_weighted_edges(edges))
    assert abs(result.acc - 0.5) < 1e-15
    assert all(abs(value - 0.5) < 1e-15 for value in result.per_node.values())


def test_degree_one_nodes_score_zero():
    edges = [
        (addr(1), addr(2), 5), (addr(2), addr(3), 5), (addr(1), addr(3), 5),
        (addr(3), addr(4), 5),  # pendant
    ]
    result = avg_clustering(graph_from_weighted_edges(edges))
    assert result.per_node[addr(4)] == 0.0
    assert result.per_node[addr(1)] == 1.0


def test_direction_merge_sums_the_two_ways():
    one_way = graph_from_weighted_edges(
        [(addr(1), addr(2), 6), (addr(2), addr(3), 6), (addr(1), addr(3), 6)]
    )
    both_ways = graph_from_weighted_edges(
        [
            (addr(1), addr(2), 2), (addr(2), addr(1), 4),
            (addr(2), addr(3), 3), (addr(3), addr(2), 3),
            (addr(1), addr(3), 6),
        ]
    )
    assert avg_clustering(both_ways).acc == avg_clustering(one_way).acc == 1.0


def test_uniform_weight_scaling_leaves_acc_bit_identical():
    rng = random.Random(0x99)
    nodes = [addr(i + 1) for i in range(10)]
    edges = []
    for u, v in itertools.combinations(nodes, 2):
        if rng.random() < 0.4:
            edges.append((u, v, rng.randrange(1, 10**6)))
    base = avg_clustering(graph_from_weighted_edges(edges))
    scaled = avg_clustering(graph_from_weighted_edges([(u, v, w * 7919) for u, v, w in edges]))
    assert base.acc == scaled.acc
    assert base.per_node == scaled.per_node


def test_acc_matches_cubic_oracle_on_random_graphs():
    rng = random.Random(0xC3)
    for _ in range(50):
        n = rng.randrange(3, 16)
        nodes = [addr(i + 1) for i in range(n)]
        edges = []
        for u, v in itertools.combinations(nodes, 2):
            if rng.random() < 0.45:
                # Random direction, sometimes both.
                if rng.random() < 0.3:
                    edges.append((u, v, rng.randrange(1, 1000)))
                    edges.append((v, u, rng.randrange(1, 1000)))
                elif rng.random() < 0.5:
                    edges.append((u, v, rng.randrange(1, 1000)))
                else:
                    edges.append((v, u, rng.randrange(1, 1000)))
        graph = graph_from_weighted_edges(edges)
        assert abs(avg_clustering(graph).acc - oracle_acc(graph)) < 1e-12


def test_fifty_thousand_edges_within_time_budget():
    rng = random.Random(0xBEEF)
    graph = PeriodGraph(0)
    n = 5000
    seen = set()
    while len(seen) < 50_000:
        u, v = rng.randrange(n), rng.randrange(n)
        if u == v or (u, v) in seen:
            continue
        seen.add((u, v))
        graph.add_transfer(addr(u + 1), addr(v + 1), rng.randrange(1, 10**9))
    start = time.monotonic()
    result = avg_clustering(graph)
    elapsed = time.monotonic() - start
    assert elapsed < 10.0
    assert 0.0 <= result.acc <= 1.0
