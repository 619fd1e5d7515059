"""Problem instances: tasks, edge users, edge servers and seeded generation.

A scenario is immutable once built. Generation is a pure function of its
arguments; the same inputs always produce the same JSON bytes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import InvalidSpec, NotFound
from .network import (DEFAULT_BANDWIDTH, DEFAULT_WIRED_LATENCY_MS, DEFAULT_WIRELESS_LATENCY_MS,
                      Topology, generate_topology)

SCENARIO_FORMAT_VERSION = 1


class Service(str, Enum):
    CROWD_COUNTING = "CrowdCounting"
    FACE_RECOGNITION = "FaceRecognition"
    ML_DEV_CROWD = "MLDevCrowd"
    ML_DEV_FACE = "MLDevFace"


DEFAULT_CRITICALITY = {
    Service.CROWD_COUNTING: 1,
    Service.FACE_RECOGNITION: 2,
    Service.ML_DEV_CROWD: 3,
    Service.ML_DEV_FACE: 4,
}


def criticality_rank(service, criticality_map: Mapping | None = None) -> int:
    """1 is the most critical service."""
    service = Service(service)
    if criticality_map is None:
        criticality_map = DEFAULT_CRITICALITY
    return int(criticality_map[service])


@dataclass(frozen=True)
class Task:
    id: int
    user_id: int
    arrival_time: float
    period: float
    deadline: float  # absolute deadline, seconds
    cpu_demand: float  # cycles per MB
    data_size: float  # MB; doubles as the RAM demand
    storage: float  # MB
    predecessor: int | None = None
    criticality_rank: int = 1
    name: str = ""

    def __post_init__(self):
        if not self.deadline > 0:
            raise InvalidSpec(f"task {self.id}: deadline must be > 0")
        if not self.cpu_demand > 0:
            raise InvalidSpec(f"task {self.id}: cpu_demand must be > 0")
        if not self.data_size > 0:
            raise InvalidSpec(f"task {self.id}: data_size must be > 0")
        if self.storage < 0 or self.arrival_time < 0:
            raise InvalidSpec(f"task {self.id}: storage and arrival_time must be >= 0")
        if not (self.period == 0 or self.period >= self.deadline):
            raise InvalidSpec(f"task {self.id}: period must be 0 or >= deadline")
        if self.criticality_rank < 1:
            raise InvalidSpec(f"task {self.id}: criticality_rank must be positive")

    @property
    def cycles(self) -> float:
        return self.cpu_demand * self.data_size


@dataclass(frozen=True)
class EdgeServer:
    id: int
    zone: int
    cpu_freq: float  # Hz
    cores: int
    ram: float  # MB
    storage: float  # MB
    kind: str = ""

    def __post_init__(self):
        if not (self.cpu_freq > 0 and self.cores >= 1 and self.ram > 0 and self.storage > 0):
            raise InvalidSpec(f"server {self.id}: invalid capacity")

    @property
    def throughput(self) -> float:
        return self.cpu_freq * self.cores


@dataclass(frozen=True)
class EdgeUser:
    id: int
    zone: int
    service: Service
    workload: tuple[Task, ...]

    def __post_init__(self):
        if not self.workload:
            raise InvalidSpec(f"user {self.id}: empty workload")
        ids = {t.id for t in self.workload}
        for t in self.workload:
            if t.user_id != self.id:
                raise InvalidSpec(f"task {t.id} does not belong to user {self.id}")
            if t.predecessor is not None and t.predecessor not in ids:
                raise InvalidSpec(f"task {t.id}: predecessor must belong to the same user")


@dataclass(frozen=True)
class Scenario:
    users: tuple[EdgeUser, ...]
    servers: tuple[EdgeServer, ...]
    topology: Topology
    criticality_map: Mapping[Service, int] = field(default_factory=lambda: dict(DEFAULT_CRITICALITY))
    seed: int = 0

    def __post_init__(self):
        if not self.users:
            raise InvalidSpec("scenario needs at least one user")
        if not self.servers:
            raise InvalidSpec("scenario needs at least one server")
        zones = set(self.topology.zones)
        for u in self.users:
            if u.zone not in zones:
                raise InvalidSpec(f"user {u.id} in unknown zone {u.zone}")
        for s in self.servers:
            if s.zone not in zones:
                raise InvalidSpec(f"server {s.id} in unknown zone {s.zone}")
        if sorted(self.criticality_map.values()) != [1, 2, 3, 4]:
            raise InvalidSpec("criticality ranks must be a permutation of 1..4")
        if len({u.id for u in self.users}) != len(self.users):
            raise InvalidSpec("duplicate user ids")
        if len({s.id for s in self.servers}) != len(self.servers):
            raise InvalidSpec("duplicate server ids")
        if len({t.id for t in self.tasks}) != len(self.tasks):
            raise InvalidSpec("duplicate task ids")

    @cached_property
    def tasks(self) -> tuple[Task, ...]:
        return tuple(all_tasks(self))

    @cached_property
    def task_index(self) -> dict[int, int]:
        return {t.id: j for j, t in enumerate(self.tasks)}

    @cached_property
    def server_index(self) -> dict[int, int]:
        return {s.id: k for k, s in enumerate(self.servers)}

    @cached_property
    def servers_by_id(self) -> dict[int, EdgeServer]:
        return {s.id: s for s in self.servers}

    @cached_property
    def users_by_id(self) -> dict[int, EdgeUser]:
        return {u.id: u for u in self.users}

    def task(self, task) -> Task:
        tid = task.id if isinstance(task, Task) else task
        try:
            return self.tasks[self.task_index[tid]]
        except KeyError:
            raise NotFound(f"unknown task {tid!r}") from None

    def server(self, server) -> EdgeServer:
        sid = server.id if isinstance(server, EdgeServer) else server
        try:
            return self.servers_by_id[sid]
        except KeyError:
            raise NotFound(f"unknown server {sid!r}") from None

    def user_of(self, task) -> EdgeUser:
        return self.users_by_id[self.task(task).user_id]

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format_version": SCENARIO_FORMAT_VERSION,
            "seed": self.seed,
            "criticality_map": {s.value: int(r) for s, r in sorted(self.criticality_map.items(), key=lambda kv: kv[1])},
            "servers": [
                {"id": s.id, "zone": s.zone, "kind": s.kind, "cpu_freq": s.cpu_freq, "cores": s.cores,
                 "ram": s.ram, "storage": s.storage}
                for s in self.servers
            ],
            "users": [
                {"id": u.id, "zone": u.zone, "service": u.service.value,
                 "workload": [
                     {"id": t.id, "name": t.name, "arrival_time": t.arrival_time, "period": t.period,
                      "deadline": t.deadline, "cpu_demand": t.cpu_demand, "data_size": t.data_size,
                      "storage": t.storage, "predecessor": t.predecessor,
                      "criticality_rank": t.criticality_rank}
                     for t in u.workload
                 ]}
                for u in self.users
            ],
            "topology": self.topology.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        try:
            users = tuple(
                EdgeUser(
                    id=int(u["id"]), zone=int(u["zone"]), service=Service(u["service"]),
                    workload=tuple(
                        Task(id=int(t["id"]), user_id=int(u["id"]), name=t.get("name", ""),
                             arrival_time=float(t.get("arrival_time", 0.0)), period=float(t.get("period", 0.0)),
                             deadline=float(t["deadline"]), cpu_demand=float(t["cpu_demand"]),
                             data_size=float(t["data_size"]), storage=float(t.get("storage", 0.0)),
                             predecessor=None if t.get("predecessor") is None else int(t["predecessor"]),
                             criticality_rank=int(t.get("criticality_rank", 1)))
                        for t in u["workload"]),
                )
                for u in d["users"]
            )
            servers = tuple(
                EdgeServer(id=int(s["id"]), zone=int(s["zone"]), kind=s.get("kind", ""),
                           cpu_freq=float(s["cpu_freq"]), cores=int(s["cores"]),
                           ram=float(s["ram"]), storage=float(s["storage"]))
                for s in d["servers"]
            )
            cmap = {Service(k): int(v) for k, v in d.get("criticality_map", {}).items()} or dict(DEFAULT_CRITICALITY)
            topology = Topology.from_dict(d["topology"])
        except (KeyError, TypeError) as e:
            raise InvalidSpec(f"malformed scenario document: {e}") from e
        return cls(users, servers, topology, cmap, int(d.get("seed", 0)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def all_tasks(scenario: Scenario) -> list[Task]:
    """Every offloaded task, users in id order, tasks in id order within a user."""
    out = []
    for user in sorted(scenario.users, key=lambda u: u.id):
        out.extend(sorted(user.workload, key=lambda t: t.id))
    return out


def save_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(scenario.to_json())


def load_scenario(path) -> Scenario:
    return Scenario.from_dict(json.loads(Path(path).read_text()))


# -- generation ----------------------------------------------------------


def load_catalog() -> dict:
    """The shipped service templates and server catalogue."""
    text = resources.files("edgesched").joinpath("data/services.json").read_text()
    return json.loads(text)


@dataclass(frozen=True)
class ServerSpec:
    kind: str
    cpu_freq: float
    cores: int
    ram: float
    storage: float


def server_spec(kind: str, catalog: dict | None = None) -> ServerSpec:
    catalog = catalog or load_catalog()
    try:
        s = catalog["servers"][kind]
    except KeyError:
        raise InvalidSpec(f"unknown server kind {kind!r}") from None
    return ServerSpec(kind, float(s["cpu_freq"]), int(s["cores"]), float(s["ram"]), float(s["storage"]))


def _draw(rng: np.random.Generator, bounds) -> float:
    lo, hi = bounds
    return float(lo) if lo == hi else float(rng.uniform(lo, hi))


def _instantiate_workload(user_id: int, first_task_id: int, stages: Sequence[dict], rank: int,
                          reference: dict, rng: np.random.Generator) -> tuple[Task, ...]:
    tasks = []
    for i, st in enumerate(stages):
        cpu = _draw(rng, st["cpu_demand"])
        size = _draw(rng, st["data_size"])
        storage = _draw(rng, st["storage"])
        if "deadline" in st:
            deadline = _draw(rng, st["deadline"])
        else:
            # deadline = slack x response time on the reference server
            ref = cpu * size / reference["throughput_cycles_per_s"] + size / reference["bandwidth_mb_per_s"]
            deadline = _draw(rng, st["deadline_slack"]) * ref
        tid = first_task_id + i
        pred = tid - 1 if (i > 0 and st.get("after_previous", False)) else None
        tasks.append(Task(id=tid, user_id=user_id, arrival_time=0.0, period=0.0, deadline=deadline,
                          cpu_demand=cpu, data_size=size, storage=storage, predecessor=pred,
                          criticality_rank=rank, name=st.get("name", "")))
    return tuple(tasks)


def generate_scenario(counts: Mapping, zone_count: int, server_specs: Sequence, seed: int, *,
                      server_zones: Sequence[int] | None = None, extra_links: int | None = None,
                      wired_latency_ms: float = DEFAULT_WIRED_LATENCY_MS,
                      wireless_latency_ms: float = DEFAULT_WIRELESS_LATENCY_MS,
                      bandwidth: float = DEFAULT_BANDWIDTH,
                      criticality_map: Mapping | None = None,
                      catalog: dict | None = None) -> Scenario:
    """Build a random scenario.

    ``counts`` maps services to number of users, ``server_specs`` holds
    :class:`ServerSpec` objects or catalogue kind names. Users are placed
    uniformly at random over zones; server zones are distinct random zones
    unless given explicitly.
    """
    catalog = catalog or load_catalog()
    counts = {Service(k): int(v) for k, v in counts.items()}
    if any(v < 0 for v in counts.values()) or sum(counts.values()) == 0:
        raise InvalidSpec("need at least one user")
    if not server_specs:
        raise InvalidSpec("need at least one server")
    if zone_count < 1:
        raise InvalidSpec("zone_count must be >= 1")
    specs = [server_spec(s, catalog) if isinstance(s, str) else s for s in server_specs]
    cmap = {Service(k): int(v) for k, v in (criticality_map or DEFAULT_CRITICALITY).items()}

    topo_rng, place_rng, task_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))

    if server_zones is None:
        if len(specs) <= zone_count:
            server_zones = [int(z) for z in place_rng.choice(zone_count, size=len(specs), replace=False)]
        else:
            server_zones = [int(z) for z in place_rng.integers(0, zone_count, size=len(specs))]
    elif len(server_zones) != len(specs):
        raise InvalidSpec("server_zones must match server_specs")
    topology = generate_topology(zone_count, topo_rng, extra_links=extra_links, latency_ms=wired_latency_ms,
                                 bandwidth=bandwidth, wireless_latency_ms=wireless_latency_ms,
                                 server_zones=tuple(sorted(set(server_zones))))
    servers = tuple(
        EdgeServer(id=k, zone=int(z), cpu_freq=s.cpu_freq, cores=s.cores, ram=s.ram, storage=s.storage, kind=s.kind)
        for k, (s, z) in enumerate(zip(specs, server_zones))
    )

    users = []
    next_task = 0
    uid = 0
    for service in Service:  # fixed enum order keeps ids stable
        for _ in range(counts.get(service, 0)):
            zone = int(place_rng.integers(0, zone_count))
            stages = catalog["services"][service.value]
            workload = _instantiate_workload(uid, next_task, stages, cmap[service], catalog["reference"], task_rng)
            users.append(EdgeUser(uid, zone, service, workload))
            next_task += len(workload)
            uid += 1
    return Scenario(tuple(users), servers, topology, cmap, int(seed))


TESTBED_SERVERS = ("jetson-tx2", "jetson-tx2", "xeon-e5430", "xeon-e5645")

PRESETS = {
    # 22 zones, four servers, 44 + 6 + 1 + 1 users
    "paper": dict(counts={Service.CROWD_COUNTING: 44, Service.FACE_RECOGNITION: 6,
                          Service.ML_DEV_CROWD: 1, Service.ML_DEV_FACE: 1},
                  zone_count=22, server_specs=TESTBED_SERVERS, seed=0),
    # same mix scaled down to 20 tasks
    "desk": dict(counts={Service.CROWD_COUNTING: 4, Service.FACE_RECOGNITION: 2,
                         Service.ML_DEV_CROWD: 1, Service.ML_DEV_FACE: 1},
                 zone_count=6, server_specs=TESTBED_SERVERS, seed=0),
    "tiny": dict(counts={Service.CROWD_COUNTING: 1, Service.FACE_RECOGNITION: 1},
                 zone_count=3, server_specs=("jetson-tx2", "xeon-e5645"), seed=0),
}


def preset(name: str, seed: int | None = None) -> Scenario:
    try:
        kw = dict(PRESETS[name])
    except KeyError:
        raise InvalidSpec(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    if seed is not None:
        kw["seed"] = seed
    return generate_scenario(**kw)


_TINY_MIXES = (
    {Service.CROWD_COUNTING: 1},
    {Service.CROWD_COUNTING: 2},
    {Service.CROWD_COUNTING: 3},
    {Service.FACE_RECOGNITION: 1},
    {Service.FACE_RECOGNITION: 2},
    {Service.CROWD_COUNTING: 1, Service.FACE_RECOGNITION: 1},
    {Service.ML_DEV_CROWD: 1},
    {Service.ML_DEV_CROWD: 1, Service.CROWD_COUNTING: 1},
    {Service.ML_DEV_FACE: 1, Service.FACE_RECOGNITION: 1},
    {Service.ML_DEV_CROWD: 1, Service.ML_DEV_FACE: 1},
)


def random_small_scenario(seed: int, max_servers: int = 3) -> Scenario:
    """A random instance with at most 6 tasks, small enough for exhaustive search."""
    rng = np.random.default_rng([seed, 7919])
    catalog = load_catalog()
    mix = _TINY_MIXES[int(rng.integers(0, len(_TINY_MIXES)))]
    kinds = sorted(catalog["servers"])
    n_servers = int(rng.integers(1, max_servers + 1))
    specs = [kinds[int(i)] for i in rng.integers(0, len(kinds), size=n_servers)]
    zones = int(rng.integers(1, 5))
    return generate_scenario(mix, zones, specs, seed, catalog=catalog)
