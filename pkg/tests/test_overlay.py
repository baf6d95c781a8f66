import io
import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from onionsim.errors import CollisionError, NodeNotFound, ParameterError
from onionsim.identity import SharedBotKey, derive_period_key
from onionsim.metrics import connected_components, snapshot
from onionsim.overlay import (DegreeBounds, NodeId, OverlayGraph, bootstrap_subset, build_k_regular,
                              delete_node, prune, read_edgelist, replenish, rotate_address, write_edgelist)

from oracles import component_count

# 12-node 3-regular graph; node 7 has neighbours 0, 1, 4, none adjacent to each other
FIG3_EDGES = [(0, 7), (1, 7), (4, 7), (0, 2), (0, 3), (1, 5), (1, 6), (4, 8), (4, 9), (2, 5), (2, 10),
              (3, 6), (3, 11), (5, 11), (6, 8), (8, 10), (9, 10), (9, 11)]


def graph_of(edges, bounds=DegreeBounds(1, 100), seed=0, nodes=()):
    return OverlayGraph.from_edges(edges, bounds, seed=seed, nodes=nodes)


def adjacency(graph):
    return {u: set(n.peers) for u, n in graph.nodes.items()}


class TestNodeId:
    def test_renders_as_onion_name(self):
        nid = NodeId.random(random.Random(3))
        text = str(nid)
        assert len(text) == 16 and text == text.lower()
        assert NodeId.parse(text) == nid

    def test_out_of_range(self):
        with pytest.raises(ParameterError):
            NodeId(1 << 80)
        with pytest.raises(ParameterError):
            NodeId.parse("short")


class TestBuild:
    def test_k4(self):
        g = build_k_regular(4, 3, seed=11)
        assert g.edge_count() == 6
        assert all(g.degree(u) == 3 for u in g.ids())

    def test_small_cubic_graph_against_oracle(self):
        g = build_k_regular(12, 3, seed=7)
        ids = g.ids()
        index = {u: i for i, u in enumerate(ids)}
        edges = [(index[u], index[v]) for u, v in g.edges()]
        assert len(edges) == 18
        deg = [0] * 12
        for a, b in edges:
            deg[a] += 1
            deg[b] += 1
        assert deg == [3] * 12
        assert component_count(12, edges) == 1

    def test_paper_scale(self):
        g = build_k_regular(5000, 10, seed=1)
        assert g.edge_count() == 25000
        assert {g.degree(u) for u in g.ids()} == {10}

    def test_deterministic(self):
        assert build_k_regular(60, 4, 5).edges() == build_k_regular(60, 4, 5).edges()
        assert build_k_regular(60, 4, 5).edges() != build_k_regular(60, 4, 6).edges()

    @pytest.mark.parametrize("n,k", [(5, 3), (4, 4), (3, 5), (10, 0)])
    def test_infeasible(self, n, k):
        with pytest.raises(ParameterError):
            build_k_regular(n, k, 0)

    def test_fresh_graph_is_consistent(self):
        g = build_k_regular(200, 10, 2)
        assert g.audit() == []


class TestDelete:
    def test_fig3_repair(self):
        g = graph_of(FIG3_EDGES, DegreeBounds.around(3))
        report = delete_node(g, NodeId(7))
        assert sorted(report.edges_added) == [(0, 1), (0, 4), (1, 4)]
        assert report.edges_pruned == []
        assert g.audit() == []

    def test_clique_neighbourhood_adds_nothing(self):
        edges = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
        g = graph_of(edges)
        assert delete_node(g, NodeId(0)).edges_added == []

    def test_path(self):
        g = graph_of([(0, 1), (1, 2)])
        report = delete_node(g, NodeId(1))
        assert report.edges_added == [(0, 2)]
        assert connected_components(g)[0] == 1

    def test_without_repair_adds_nothing(self):
        g = graph_of(FIG3_EDGES, DegreeBounds.around(3))
        report = delete_node(g, NodeId(7), repair=False)
        assert report.edges_added == [] and g.edge_count() == 15

    def test_unknown_target(self):
        g = graph_of([(0, 1)])
        with pytest.raises(NodeNotFound):
            delete_node(g, NodeId(9))

    def test_single_repaired_deletion_keeps_connectivity(self):
        base = build_k_regular(120, 10, 4)
        for u in base.ids():
            g = base.copy()
            delete_node(g, u)
            assert connected_components(g)[0] == 1

    def test_deterministic_reports(self):
        def run():
            g = build_k_regular(300, 6, 9)
            order = g.ids()
            random.Random(1).shuffle(order)
            return [delete_node(g, u) for u in order[:150]], g.edges()
        assert run() == run()


class TestPrune:
    def test_within_bounds(self):
        g = graph_of([(0, 1), (0, 2), (0, 3)], DegreeBounds(1, 3))
        assert prune(g, NodeId(0)) == []

    def test_unique_max(self):
        # 0 has peers 1, 2, 3, 4; peer 4 is the only one with extra links
        g = graph_of([(0, 1), (0, 2), (0, 3), (0, 4), (4, 5), (4, 6)], DegreeBounds(1, 3))
        assert prune(g, NodeId(0)) == [4]
        assert not g.has_edge(NodeId(4), NodeId(0))
        assert NodeId(4) not in g.nodes[NodeId(0)].non_table

    def test_three_way_tie_follows_rng(self):
        # centre 0 has five peers; 1, 2, 3 tie at degree 3, while 8 and 9 have degree 1
        edges = [(0, p) for p in (1, 2, 3, 8, 9)]
        edges += [(p, x) for p in (1, 2, 3) for x in (20, 21)]
        for seed in range(20):
            g = graph_of(edges, DegreeBounds(1, 3), seed=seed)
            removed = prune(g, NodeId(0))
            # replay the draws: choice over the ascending tied set, twice
            rng = random.Random(seed)
            tied = [1, 2, 3]
            first = rng.choice(tied)
            tied.remove(first)
            second = rng.choice(tied)
            assert removed == [first, second]

    def test_pruning_does_not_repair(self):
        g = graph_of([(0, 1), (0, 2), (0, 3), (0, 4), (4, 5), (4, 6)], DegreeBounds(1, 3))
        before = g.edge_count()
        prune(g, NodeId(0))
        assert g.edge_count() == before - 1


class TestReplenish:
    def test_at_or_above_d_min(self):
        g = graph_of([(0, 1), (0, 2)], DegreeBounds(2, 4))
        assert replenish(g, NodeId(0)) == []

    def test_forced_choice(self):
        g = graph_of([(0, 1), (1, 2)], DegreeBounds(2, 4))
        assert replenish(g, NodeId(0)) == [2]

    def test_isolated(self):
        g = graph_of([], DegreeBounds(2, 4), nodes=[5])
        assert replenish(g, NodeId(5)) == []
        assert g.degree(NodeId(5)) == 0

    def test_full_candidates_are_skipped(self):
        g = graph_of([(0, 1), (1, 2), (2, 3), (2, 4)], DegreeBounds(2, 3))
        assert replenish(g, NodeId(0)) == []


class TestRotate:
    def test_relabel_is_isomorphic(self):
        g = build_k_regular(50, 4, 3)
        old = g.ids()[0]
        peers = set(g.peers(old))
        degrees = sorted(g.degree(u) for u in g.ids())
        new = NodeId(12345)
        rotate_address(g, old, new)
        assert set(g.peers(new)) == peers
        assert all(new in g.peers(p) for p in peers)
        assert sorted(g.degree(u) for u in g.ids()) == degrees
        with pytest.raises(NodeNotFound):
            g.node(old)
        assert g.audit() == []

    def test_collision(self):
        g = build_k_regular(10, 4, 3)
        a, b = g.ids()[:2]
        with pytest.raises(CollisionError):
            rotate_address(g, a, b)

    def test_metrics_survive_rotating_everyone(self):
        g = build_k_regular(80, 6, 8)
        before = snapshot(g, 0)
        rng = random.Random(0)
        key = SharedBotKey.generate(rng, bytes(20))
        for period, u in enumerate(g.ids(), start=1):
            rotate_address(g, u, derive_period_key(key, period).value)
        after = snapshot(g, 0)
        assert before == after


class TestBootstrapSubset:
    def test_extremes(self):
        items = list(range(30))
        assert bootstrap_subset(items, 1.0, 4) == items
        assert bootstrap_subset(items, 0.0, 4) == []

    def test_order_and_determinism(self):
        items = list(range(100))
        sub = bootstrap_subset(items, 0.5, 7)
        assert sub == sorted(sub) and sub == bootstrap_subset(items, 0.5, 7)

    def test_binomial_band(self):
        items = list(range(1000))
        mean = sum(len(bootstrap_subset(items, 0.3, s)) for s in range(200)) / 200
        assert abs(mean - 300) <= 3 * math.sqrt(1000 * 0.3 * 0.7)

    @pytest.mark.parametrize("p", [-0.1, 1.5])
    def test_bad_probability(self, p):
        with pytest.raises(ParameterError):
            bootstrap_subset([1], p, 0)


class TestEdgeList:
    def test_round_trip_with_isolated_nodes(self):
        g = build_k_regular(30, 4, 1)
        for u in g.ids()[:10]:
            delete_node(g, u, repair=False)
        buf = io.StringIO()
        write_edgelist(g, buf)
        h = read_edgelist(io.StringIO(buf.getvalue()), g.bounds)
        assert adjacency(h) == adjacency(g)
        assert (h.k, h.seed, h.step) == (g.k, g.seed, g.step)

    def test_bad_header(self):
        with pytest.raises(ParameterError):
            read_edgelist(io.StringIO("1 2\n"))


@st.composite
def small_graphs(draw):
    n = draw(st.integers(4, 24))
    pairs = [(a, b) for a in range(n) for b in range(a + 1, n)]
    edges = draw(st.lists(st.sampled_from(pairs), unique=True, max_size=3 * n))
    lo = draw(st.integers(1, 3))
    hi = draw(st.integers(lo, 6))
    return n, edges, DegreeBounds(lo, hi)


class TestProperties:
    @settings(max_examples=150, deadline=None)
    @given(small_graphs(), st.integers(0, 2**32), st.data())
    def test_repair_keeps_invariants(self, case, seed, data):
        n, edges, bounds = case
        g = graph_of(edges, bounds, seed=seed, nodes=range(n))
        victims = data.draw(st.lists(st.sampled_from(range(n)), unique=True, max_size=n - 1))
        for v in victims:
            former = set(g.peers(NodeId(v)))
            report = delete_node(g, NodeId(v))
            assert g.audit() == []  # symmetry, no loops, NoN tables fresh
            for a, b in report.edges_added:
                assert a in former and b in former
            # every node the repair touched is back under d_max
            assert all(g.degree(u) <= bounds.d_max for u in former)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(10, 60), st.integers(0, 1000))
    def test_gradual_deletion_stays_within_d_max(self, n, seed):
        k = 4
        if (n * k) % 2:
            n += 1
        g = build_k_regular(n, k, seed)
        order = g.ids()
        random.Random(seed).shuffle(order)
        for u in order[: n // 2]:
            delete_node(g, u)
            assert g.max_degree() <= g.bounds.d_max
        assert g.audit() == []
