import itertools
import math

import networkx as nx
import numpy as np
import pytest

from edgesched.errors import InvalidSpec, Unreachable
from edgesched.network import (Link, Topology, generate_topology, provisioning_time, rtt_inter_task,
                               rtt_user_server)
from edgesched.scenario import preset

from conftest import mk_scenario, mk_server, mk_task


def two_zone(latency_ms=3.0, wireless_ms=1.0):
    return Topology((0, 1), (Link(0, 1, latency_ms, 10.0),), (), wireless_ms, 10.0)


class Z:
    def __init__(self, zone, id=0):
        self.zone, self.id = zone, id


def test_rtt_same_zone():
    topo = Topology((0,), (), (), 1.0, 10.0)
    assert rtt_user_server(Z(0), Z(0), topo) == 0.002


def test_rtt_one_link():
    assert rtt_user_server(Z(0), Z(1), two_zone()) == 2 * (0.001 + 0.003)
    assert rtt_user_server(Z(0), Z(1), two_zone()) == pytest.approx(0.008, abs=1e-15)


def test_inter_task_terms():
    topo = two_zone()
    servers = {0: Z(0, 0), 1: Z(1, 1)}
    free = mk_task(0)
    child = mk_task(1, pred=0)
    assert rtt_inter_task(free, servers[1], {}, servers, topo) == 0.0
    assert rtt_inter_task(child, servers[0], {0: 0}, servers, topo) == 0.0
    assert rtt_inter_task(child, servers[1], {0: 0}, servers, topo) == pytest.approx(0.006, abs=1e-15)
    # predecessor not placed yet
    assert rtt_inter_task(child, servers[1], {}, servers, topo) == 0.0


def test_provisioning_division():
    topo = Topology((0, 1), (Link(0, 1, 1.0, 10.0),), (), 0.0, 10.0)
    assert provisioning_time(mk_task(0, m=10.0), Z(0), Z(1), topo) == 1.0
    topo1 = Topology((0, 1), (Link(0, 1, 1.0, 1.0),), (), 0.0, 1.0)
    assert provisioning_time(mk_task(0, m=1.0), Z(0), Z(1), topo1) == 1.0


def test_provisioning_uses_bottleneck():
    links = (Link(0, 1, 1.0, 50.0), Link(1, 2, 1.0, 5.0))
    topo = Topology((0, 1, 2), links, (), 0.0, 100.0)
    assert provisioning_time(mk_task(0, m=10.0), Z(0), Z(2), topo) == 2.0
    assert provisioning_time(mk_task(0, m=10.0), Z(2), Z(2), topo) == 0.1  # access bandwidth


def test_disconnected_rejected():
    with pytest.raises(InvalidSpec):
        Topology((0, 1), (), (), 1.0, 10.0)


def test_unknown_zone_unreachable():
    with pytest.raises(Unreachable):
        two_zone().path(0, 7)


def test_shortest_path_tie_break_fewest_hops():
    # 0-3 direct at 2 ms, or 0-1-3 at 1+1 ms: equal latency, the direct link wins
    links = (Link(0, 3, 2.0, 1.0), Link(0, 1, 1.0, 9.0), Link(1, 3, 1.0, 9.0))
    p = Topology((0, 1, 3), links, (), 0.0, 10.0).path(0, 3)
    assert p.zones == (0, 3)
    assert p.bottleneck == 1.0


def test_topology_roundtrip():
    topo = generate_topology(9, np.random.default_rng(4))
    assert Topology.from_dict(topo.to_dict()) == topo


@pytest.mark.parametrize("seed", range(5))
def test_generated_paths_match_networkx(seed):
    topo = generate_topology(12, np.random.default_rng(seed), latency_ms=1.0)
    g = nx.Graph()
    for l in topo.links:
        g.add_edge(l.a, l.b, w=l.latency_ms)
    dist = dict(nx.all_pairs_dijkstra_path_length(g, weight="w"))
    for a, b in itertools.product(topo.zones, repeat=2):
        assert topo.path(a, b).latency == pytest.approx(dist[a][b] / 1000, rel=1e-12, abs=0)


def test_full_preset_farthest_user_server_rtt():
    sc = preset("paper")
    topo = sc.topology
    g = nx.Graph()
    for l in topo.links:
        g.add_edge(l.a, l.b, w=l.latency_ms)
    dist = dict(nx.all_pairs_dijkstra_path_length(g, weight="w"))
    oracle = max(2 * (topo.wireless_latency_ms + dist[u.zone][s.zone]) / 1000 for u in sc.users for s in sc.servers)
    ours = max(rtt_user_server(u, s, topo) for u in sc.users for s in sc.servers)
    assert oracle == pytest.approx(0.012, rel=1e-12)
    assert ours == pytest.approx(0.012, rel=1e-12)


def test_full_preset_provisioning_matches_path_enumeration():
    sc = preset("paper")
    topo = sc.topology
    g = nx.Graph()
    for l in topo.links:
        g.add_edge(l.a, l.b, lat=l.latency_ms, bw=l.bandwidth)
    task = sc.task(88)
    user, server = sc.user_of(task), sc.server(3)
    assert user.zone != server.zone

    def lat(p):
        return sum(g[a][b]["lat"] for a, b in zip(p, p[1:]))

    route = min(nx.all_simple_paths(g, user.zone, server.zone), key=lambda p: (lat(p), len(p), tuple(p)))
    oracle = task.data_size / min(g[a][b]["bw"] for a, b in zip(route, route[1:]))
    assert provisioning_time(task, user, server, topo) == pytest.approx(oracle, rel=1e-12)
    assert oracle == pytest.approx(0.06037074141386623, rel=1e-12)


def test_link_latency_in_seconds():
    assert Link(0, 1, 3.0, 1.0).latency == 0.003
    assert math.isinf(Topology((0,), (), (), 0.0, 1.0).path(0, 0).bottleneck)


def test_scenario_zero_network():
    sc = mk_scenario([[mk_task(0)]], [mk_server(0)])
    assert rtt_user_server(sc.users[0], sc.servers[0], sc.topology) == 0.0
