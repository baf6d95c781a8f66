import pytest

from onionsim.attacks import SoapAttacker, SoapSession, is_contained, soap_target
from onionsim.errors import NodeNotFound, ParameterError, ReplacementImpossible
from onionsim.metrics import connected_components
from onionsim.overlay import DegreeBounds, NodeId, OverlayGraph
from onionsim.superonion import (PhysicalHost, SuperOnionConfig, build_superonion, has_benign_peer,
                                 probe_round, replace_virtual, run_superonion)


def intra_host_edges(graph):
    return [(u, v) for u, v in graph.edges() if graph.groups[u] == graph.groups[v]]


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(n=1, m=3, i=2), dict(n=3, m=1, i=2), dict(n=3, m=3, i=0),
                                    dict(n=3, m=3, i=1), dict(n=2, m=2, i=3), dict(n=4, m=2, i=2, d_max=1)])
    def test_invalid(self, kw):
        with pytest.raises(ParameterError):
            SuperOnionConfig(**kw)

    def test_all_problems_reported(self):
        with pytest.raises(ParameterError, match="n must be.*m must be"):
            SuperOnionConfig(1, 1, 1)


class TestBuild:
    def test_five_hosts(self):
        g, hosts = build_superonion(SuperOnionConfig(5, 3, 2), seed=3)
        assert len(g) == 15 and g.edge_count() == 15
        assert all(g.degree(u) == 2 for u in g.ids())
        assert [len(h.virtuals) for h in hosts] == [3] * 5
        assert intra_host_edges(g) == []
        assert connected_components(g)[0] == 1

    def test_minimal_matching(self):
        g, hosts = build_superonion(SuperOnionConfig(2, 2, 1), seed=0)
        assert len(g) == 4 and g.edge_count() == 2
        assert all(g.degree(u) == 1 for u in g.ids())
        assert intra_host_edges(g) == []

    @pytest.mark.parametrize("seed", range(10))
    def test_no_intra_host_edges(self, seed):
        g, _ = build_superonion(SuperOnionConfig(20, 3, 2), seed)
        assert intra_host_edges(g) == [] and g.audit() == []

    def test_deterministic(self):
        a, _ = build_superonion(SuperOnionConfig(6, 3, 2), 9)
        b, _ = build_superonion(SuperOnionConfig(6, 3, 2), 9)
        assert a.edges() == b.edges()


def soap_one(graph, hosts, host_index=0, slot=0, seed=0):
    target = hosts[host_index].virtuals[slot]
    entry = hosts[(host_index + 1) % len(hosts)].virtuals[0]
    attacker = SoapAttacker(entry, 50, seed=seed)
    res = soap_target(graph, attacker, target, session=SoapSession(attacker))
    assert res.contained
    return target


class TestProbe:
    def test_healthy(self):
        g, hosts = build_superonion(SuperOnionConfig(20, 3, 2), 1)
        assert all(probe_round(g, h, 64) == set() for h in hosts)

    def test_soaped_virtual_is_suspected(self):
        g, hosts = build_superonion(SuperOnionConfig(20, 3, 2), 2)
        victim = soap_one(g, hosts)
        assert probe_round(g, hosts[0], 64) == {victim}
        assert hosts[0].suspected_soaped == {victim}

    def test_partition_makes_both_sides_suspicious(self):
        # host 0 owns a0, a1; the overlay splits into {a0, b0, c0} and {a1, b1, c1}
        a0, a1, b0, c0, b1, c1 = map(NodeId, range(1, 7))
        g = OverlayGraph.from_edges([(a0, b0), (a0, c0), (a1, b1), (a1, c1)], DegreeBounds(1, 4))
        g.groups.update({a0: 0, a1: 0, b0: 1, c0: 1, b1: 2, c1: 2})
        host = PhysicalHost(0, [a0, a1])
        assert probe_round(g, host, 10) == {a0, a1}

    def test_needs_two_virtuals(self):
        g = OverlayGraph.from_edges([(1, 2)], DegreeBounds(1, 2))
        with pytest.raises(ParameterError):
            probe_round(g, PhysicalHost(0, [NodeId(1)]), 3)


class TestReplace:
    def test_replaces_with_benign_peers(self):
        config = SuperOnionConfig(20, 3, 2)
        g, hosts = build_superonion(config, 4)
        host = hosts[0]
        victim = soap_one(g, hosts)
        surrounding = set(g.peers(victim))
        probe_round(g, host, 64)
        new = replace_virtual(g, host, victim, seed=4)
        assert victim not in g.nodes and new in g.nodes
        assert host.virtuals[0] == new and victim not in host.suspected_soaped
        assert g.degree(new) == config.i
        assert not (g.peers(new) & (surrounding | g.clones))
        assert all(g.groups[p] != host.host_id for p in g.peers(new))
        assert has_benign_peer(g, new)
        assert g.audit() == []

    def test_victim_not_on_host(self):
        g, hosts = build_superonion(SuperOnionConfig(5, 3, 2), 0)
        with pytest.raises(NodeNotFound):
            replace_virtual(g, hosts[0], hosts[1].virtuals[0], 0)

    def test_all_virtuals_soaped(self):
        g, hosts = build_superonion(SuperOnionConfig(20, 3, 2), 5)
        for slot in range(3):
            soap_one(g, hosts, 0, slot, seed=slot)
        assert all(is_contained(g, v) for v in hosts[0].virtuals)
        assert probe_round(g, hosts[0], 64) == set(hosts[0].virtuals)
        with pytest.raises(ReplacementImpossible):
            replace_virtual(g, hosts[0], hosts[0].virtuals[0], 0)


class TestRun:
    def test_records_and_determinism(self):
        config = SuperOnionConfig(10, 3, 2)
        _, _, a = run_superonion(config, 1, 5, targets_per_round=2)
        _, _, b = run_superonion(config, 1, 5, targets_per_round=2)
        assert a == b and [r.round for r in a] == list(range(5))

    def test_quiet_run_keeps_every_virtual(self):
        config = SuperOnionConfig(10, 3, 2)
        g, hosts, recs = run_superonion(config, 2, 3, targets_per_round=0)
        assert all(r.suspected == 0 and r.min_unsoaped == 3 for r in recs)

    def test_targets_bound(self):
        with pytest.raises(ParameterError):
            run_superonion(SuperOnionConfig(4, 3, 2), 0, 1, targets_per_round=5)

    def test_probe_period(self):
        config = SuperOnionConfig(10, 3, 2, probe_period=2)
        _, _, recs = run_superonion(config, 3, 4, targets_per_round=1)
        assert recs[0].suspected == recs[2].suspected == 0
        assert recs[0].replaced == recs[2].replaced == 0
