"""Zoned partial-mesh topology and the latency terms of the response-time model.

Zones are base stations. Wired links join zones; users reach their own zone's
base station over a wireless hop. All times are seconds, bandwidth is MB/s.
In JSON, links are stored as ``[zone_a, zone_b, latency_ms, bandwidth_mbps]``
where ``bandwidth_mbps`` is megabytes (not megabits) per second.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import InvalidSpec, Unreachable

DEFAULT_WIRED_LATENCY_MS = 1.0
DEFAULT_WIRELESS_LATENCY_MS = 2.0
DEFAULT_BANDWIDTH = 100.0


@dataclass(frozen=True)
class Link:
    a: int
    b: int
    latency_ms: float
    bandwidth: float

    @property
    def latency(self) -> float:
        return self.latency_ms / 1000.0

    def other(self, zone: int) -> int:
        return self.b if zone == self.a else self.a


@dataclass(frozen=True)
class Path:
    """A latency-shortest wired route between two zones."""

    zones: tuple[int, ...]
    latency: float
    bottleneck: float  # min link bandwidth; inf for the zero-hop path

    @property
    def hops(self) -> int:
        return len(self.zones) - 1


@dataclass(frozen=True)
class Topology:
    zones: tuple[int, ...]
    links: tuple[Link, ...]
    server_zones: tuple[int, ...] = ()
    wireless_latency_ms: float = DEFAULT_WIRELESS_LATENCY_MS
    bandwidth: float = DEFAULT_BANDWIDTH  # access bandwidth, used when no wired hop is crossed

    @property
    def wireless_latency(self) -> float:
        return self.wireless_latency_ms / 1000.0

    def __post_init__(self):
        zones = set(self.zones)
        if not zones:
            raise InvalidSpec("topology needs at least one zone")
        if len(zones) != len(self.zones):
            raise InvalidSpec("duplicate zone ids")
        if self.wireless_latency_ms < 0 or self.bandwidth <= 0:
            raise InvalidSpec("wireless latency must be >= 0 and bandwidth > 0")
        for link in self.links:
            if link.a not in zones or link.b not in zones:
                raise InvalidSpec(f"link {link} references an unknown zone")
            if link.a == link.b:
                raise InvalidSpec(f"self-loop on zone {link.a}")
            if not (link.latency_ms > 0 and link.bandwidth > 0):
                raise InvalidSpec(f"link {link} needs positive latency and bandwidth")
        for z in self.server_zones:
            if z not in zones:
                raise InvalidSpec(f"server zone {z} not in topology")
        if not self.is_connected():
            raise InvalidSpec("link graph is not connected")

    @cached_property
    def _adjacency(self) -> dict[int, list[Link]]:
        adj: dict[int, list[Link]] = {z: [] for z in self.zones}
        for link in self.links:
            adj[link.a].append(link)
            adj[link.b].append(link)
        return adj

    def is_connected(self) -> bool:
        start = self.zones[0]
        seen = {start}
        stack = [start]
        while stack:
            z = stack.pop()
            for link in self._adjacency[z]:
                n = link.other(z)
                if n not in seen:
                    seen.add(n)
                    stack.append(n)
        return len(seen) == len(self.zones)

    @cached_property
    def _paths(self) -> dict[int, dict[int, Path]]:
        return {z: self._dijkstra(z) for z in self.zones}

    def _dijkstra(self, source: int) -> dict[int, Path]:
        # Key (latency, hops, zone sequence) gives the documented tie-break:
        # fewest hops, then lexicographically lowest zone ids.
        best: dict[int, Path] = {}
        heap = [(0.0, 0, (source,), float("inf"))]
        while heap:
            lat, hops, route, bottleneck = heapq.heappop(heap)
            z = route[-1]
            if z in best:
                continue
            best[z] = Path(route, lat, bottleneck)
            for link in self._adjacency[z]:
                n = link.other(z)
                if n in best or n in route:
                    continue
                heapq.heappush(
                    heap,
                    (lat + link.latency, hops + 1, route + (n,), min(bottleneck, link.bandwidth)),
                )
        return best

    def path(self, src: int, dst: int) -> Path:
        try:
            return self._paths[src][dst]
        except KeyError:
            raise Unreachable(f"no wired path between zones {src} and {dst}") from None

    def with_link(self, link: Link) -> "Topology":
        return Topology(self.zones, self.links + (link,), self.server_zones,
                        self.wireless_latency_ms, self.bandwidth)

    def to_dict(self) -> dict:
        return {
            "zones": list(self.zones),
            "links": [[l.a, l.b, l.latency_ms, l.bandwidth] for l in self.links],
            "server_zones": list(self.server_zones),
            "wireless_latency_ms": self.wireless_latency_ms,
            "bandwidth_mbps": self.bandwidth,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Topology":
        return cls(
            zones=tuple(int(z) for z in d["zones"]),
            links=tuple(Link(int(a), int(b), float(ms), float(bw)) for a, b, ms, bw in d["links"]),
            server_zones=tuple(int(z) for z in d.get("server_zones", ())),
            wireless_latency_ms=float(d.get("wireless_latency_ms", DEFAULT_WIRELESS_LATENCY_MS)),
            bandwidth=float(d.get("bandwidth_mbps", DEFAULT_BANDWIDTH)),
        )


def generate_topology(zone_count: int, rng: np.random.Generator, extra_links: int | None = None,
                      latency_ms: float = DEFAULT_WIRED_LATENCY_MS, bandwidth: float = DEFAULT_BANDWIDTH,
                      wireless_latency_ms: float = DEFAULT_WIRELESS_LATENCY_MS,
                      server_zones: tuple[int, ...] = ()) -> Topology:
    """Random connected partial mesh: a random spanning tree plus ``extra_links`` chords."""
    if zone_count < 1:
        raise InvalidSpec("zone_count must be >= 1")
    zones = tuple(range(zone_count))
    pairs: set[tuple[int, int]] = set()
    order = rng.permutation(zone_count)
    for i in range(1, zone_count):
        parent = int(order[rng.integers(0, i)])
        child = int(order[i])
        pairs.add((min(parent, child), max(parent, child)))
    if extra_links is None:
        extra_links = zone_count // 2
    max_links = zone_count * (zone_count - 1) // 2
    target = min(len(pairs) + extra_links, max_links)
    while len(pairs) < target:
        a, b = (int(v) for v in rng.choice(zone_count, size=2, replace=False))
        pairs.add((min(a, b), max(a, b)))
    links = tuple(Link(a, b, latency_ms, bandwidth) for a, b in sorted(pairs))
    return Topology(zones, links, tuple(server_zones), wireless_latency_ms, bandwidth)


def rtt_user_server(user, server, topology: Topology) -> float:
    """Round trip user -> own base station -> wired path -> server zone."""
    path = topology.path(user.zone, server.zone)
    return 2.0 * (topology.wireless_latency + path.latency)


def rtt_between_zones(zone_a: int, zone_b: int, topology: Topology) -> float:
    return 2.0 * topology.path(zone_a, zone_b).latency


def rtt_inter_task(task, server, placement, servers_by_id, topology: Topology) -> float:
    """Wired round trip from the server hosting ``task``'s predecessor to ``server``.

    ``placement`` maps already-placed task ids to server ids (the schedule so far).
    """
    if task.predecessor is None:
        return 0.0
    pred_server = placement.get(task.predecessor)
    if pred_server is None or pred_server == server.id:
        return 0.0
    return rtt_between_zones(servers_by_id[pred_server].zone, server.zone, topology)


def provisioning_time(task, user, server, topology: Topology, setup: float = 0.0) -> float:
    """Transfer ``task.data_size`` MB over the bottleneck of the user->server path."""
    path = topology.path(user.zone, server.zone)
    bw = topology.bandwidth if path.hops == 0 else path.bottleneck
    return task.data_size / bw + setup
