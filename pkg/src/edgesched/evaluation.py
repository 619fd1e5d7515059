"""Schedule arithmetic: execution/response times, utilizations, constraints, hit-ratio.

Times are seconds (float64). Deadline tests compare ``r <= d`` exactly, with
no epsilon. Utilizations are capacity fractions: processor ``e/d``, RAM
``m/M`` and storage ``l/L``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping

import numpy as np

from .errors import InvalidSpec, TooLarge
from .network import provisioning_time, rtt_between_zones, rtt_inter_task, rtt_user_server
from .scenario import EdgeServer, Scenario, Task

DEFAULT_U_TH = 0.8
BRUTE_FORCE_LIMIT = 10**7


def edf_key(task: Task):
    """Earliest deadline first; ties go to the more critical task, then the lower id."""
    return (task.deadline, task.criticality_rank, task.id)


def execution_time(task: Task, server: EdgeServer) -> float:
    return (task.cpu_demand * task.data_size) / (server.cpu_freq * server.cores)


def task_cpu_utilization(task: Task, server: EdgeServer) -> float:
    return execution_time(task, server) / task.deadline


def task_ram_utilization(task: Task, server: EdgeServer) -> float:
    return task.data_size / server.ram


def task_storage_utilization(task: Task, server: EdgeServer) -> float:
    return task.storage / server.storage


@dataclass(frozen=True)
class Schedule:
    """Ordered (task_id, server_id) assignments; at most one per task."""

    assignments: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "assignments", tuple((int(t), int(s)) for t, s in self.assignments))
        tasks = [t for t, _ in self.assignments]
        if len(set(tasks)) != len(tasks):
            raise InvalidSpec("a task may be assigned to at most one server")

    @cached_property
    def placement(self) -> dict[int, int]:
        return dict(self.assignments)

    def __len__(self):
        return len(self.assignments)

    def __contains__(self, task_id) -> bool:
        return task_id in self.placement

    def assign(self, task_id: int, server_id: int) -> "Schedule":
        return Schedule(self.assignments + ((task_id, server_id),))

    def matrix(self, scenario: Scenario) -> np.ndarray:
        g = np.zeros((len(scenario.tasks), len(scenario.servers)), dtype=np.int8)
        for t, s in self.assignments:
            g[scenario.task_index[t], scenario.server_index[s]] = 1
        return g

    def to_dict(self) -> dict:
        return {"assignments": [{"task": t, "server": s} for t, s in self.assignments]}

    @classmethod
    def from_dict(cls, d: dict) -> "Schedule":
        return cls(tuple((a["task"], a["server"]) for a in d["assignments"]))


def _placement(schedule) -> Mapping[int, int]:
    if schedule is None:
        return {}
    if isinstance(schedule, Schedule):
        return schedule.placement
    return schedule


def response_time(task, server, schedule, scenario: Scenario, setup: float = 0.0) -> float:
    """Execution + provisioning + user/server round trip + predecessor round trip.

    ``schedule`` is the schedule so far (a :class:`Schedule` or a
    task->server mapping); it only feeds the predecessor term.
    """
    task = scenario.task(task)
    server = scenario.server(server)
    user = scenario.user_of(task)
    topo = scenario.topology
    e = execution_time(task, server)
    prov = provisioning_time(task, user, server, topo, setup)
    rtt = rtt_user_server(user, server, topo)
    inter = rtt_inter_task(task, server, _placement(schedule), scenario.servers_by_id, topo)
    return e + prov + rtt + inter


@dataclass(frozen=True)
class ServerLoad:
    server_id: int
    cpu: float = 0.0
    ram: float = 0.0
    storage: float = 0.0
    assigned: frozenset = field(default_factory=frozenset)

    def below(self, threshold: float) -> bool:
        return self.cpu < threshold and self.ram < threshold and self.storage < threshold

    def __add__(self, other: "ServerLoad") -> "ServerLoad":
        return ServerLoad(self.server_id, self.cpu + other.cpu, self.ram + other.ram,
                          self.storage + other.storage, self.assigned | other.assigned)


def server_load(schedule, server, scenario: Scenario) -> ServerLoad:
    server = scenario.server(server)
    cpu = ram = sto = 0.0
    assigned = []
    for tid, sid in (schedule.assignments if isinstance(schedule, Schedule) else _placement(schedule).items()):
        if sid != server.id:
            continue
        task = scenario.task(tid)
        cpu += task_cpu_utilization(task, server)
        ram += task_ram_utilization(task, server)
        sto += task_storage_utilization(task, server)
        assigned.append(tid)
    return ServerLoad(server.id, cpu, ram, sto, frozenset(assigned))


@dataclass(frozen=True)
class FeasibilityReport:
    single_assignment_ok: bool
    capacity_ok: bool
    availability_ok: bool
    deadline_ok: bool
    response_time: float

    @property
    def placeable(self) -> bool:
        """Passes every resource-side gate; the deadline is judged separately."""
        return self.single_assignment_ok and self.capacity_ok and self.availability_ok

    @property
    def hit(self) -> bool:
        return self.placeable and self.deadline_ok


def _capacity_ok(load: ServerLoad, u_p: float, u_m: float, u_l: float) -> bool:
    return (load.cpu + u_p) < 1 and (load.ram + u_m) < 1 and (load.storage + u_l) < 1


def check_assignment(task, server, schedule, scenario: Scenario, u_th: float = DEFAULT_U_TH) -> FeasibilityReport:
    """Evaluate all four constraints for placing ``task`` on ``server``; pure."""
    if not 0 < u_th <= 1:
        raise InvalidSpec("u_th must lie in (0, 1]")
    task = scenario.task(task)
    server = scenario.server(server)
    schedule = schedule if isinstance(schedule, Schedule) else Schedule(tuple(_placement(schedule).items()))
    load = server_load(schedule, server, scenario)
    r = response_time(task, server, schedule, scenario)
    return FeasibilityReport(
        single_assignment_ok=task.id not in schedule,
        capacity_ok=_capacity_ok(load, task_cpu_utilization(task, server),
                                 task_ram_utilization(task, server), task_storage_utilization(task, server)),
        availability_ok=load.below(u_th),
        deadline_ok=r <= task.deadline,
        response_time=r,
    )


def task_hits(schedule: Schedule, scenario: Scenario) -> dict[int, bool]:
    """Replay ``schedule`` in order; a task hits when it is placed and r <= d.

    The predecessor term uses only assignments that precede the task.
    """
    placed: dict[int, int] = {}
    hits = {t.id: False for t in scenario.tasks}
    for tid, sid in schedule.assignments:
        r = response_time(tid, sid, placed, scenario)
        placed[tid] = sid
        hits[tid] = r <= scenario.task(tid).deadline
    return hits


def hit_ratio(schedule: Schedule, scenario: Scenario) -> float:
    """Fraction of users whose every task is assigned and meets its deadline."""
    hits = task_hits(schedule, scenario)
    good = sum(all(hits[t.id] for t in u.workload) for u in scenario.users)
    return good / len(scenario.users)


def replay(schedule: Schedule, scenario: Scenario, u_th: float = DEFAULT_U_TH) -> list[FeasibilityReport]:
    """Feasibility report of every assignment against the schedule before it."""
    out = []
    so_far = Schedule()
    for tid, sid in schedule.assignments:
        out.append(check_assignment(tid, sid, so_far, scenario, u_th))
        so_far = so_far.assign(tid, sid)
    return out


def simulated_provisioning(schedule: Schedule, scenario: Scenario) -> float:
    """Sum of provisioning times over the assignments of ``schedule``."""
    total = 0.0
    for tid, sid in schedule.assignments:
        task = scenario.task(tid)
        total += provisioning_time(task, scenario.user_of(task), scenario.server(sid), scenario.topology)
    return total


class ScenarioTables:
    """Per-(task, server) quantities precomputed with the scalar functions above.

    Indices are positions in ``scenario.tasks`` / ``scenario.servers``.
    """

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        tasks, servers = scenario.tasks, scenario.servers
        self.n_tasks, self.n_servers = len(tasks), len(servers)
        shape = (self.n_tasks, self.n_servers)
        self.u_p = np.empty(shape)
        self.u_m = np.empty(shape)
        self.u_l = np.empty(shape)
        self.base_response = np.empty(shape)  # e + t_prov + rtt(user, server)
        self.provisioning = np.empty(shape)
        topo = scenario.topology
        for j, t in enumerate(tasks):
            user = scenario.users_by_id[t.user_id]
            for k, s in enumerate(servers):
                e = execution_time(t, s)
                prov = provisioning_time(t, user, s, topo)
                self.base_response[j, k] = e + prov + rtt_user_server(user, s, topo)
                self.provisioning[j, k] = prov
                self.u_p[j, k] = task_cpu_utilization(t, s)
                self.u_m[j, k] = task_ram_utilization(t, s)
                self.u_l[j, k] = task_storage_utilization(t, s)
        self.server_rtt = np.array([[rtt_between_zones(a.zone, b.zone, topo) for b in servers] for a in servers])
        self.pred = np.array([scenario.task_index[t.predecessor] if t.predecessor is not None else -1
                              for t in tasks], dtype=int)
        self.deadline = np.array([t.deadline for t in tasks])
        self.rank = np.array([t.criticality_rank for t in tasks], dtype=int)
        user_pos = {u.id: i for i, u in enumerate(scenario.users)}
        self.user = np.array([user_pos[t.user_id] for t in tasks], dtype=int)
        self.user_sizes = np.bincount(self.user, minlength=len(scenario.users))
        self.edf_order = sorted(range(self.n_tasks), key=lambda j: edf_key(tasks[j]))
        self.server_order = sorted(range(self.n_servers), key=lambda k: servers[k].id)
        # python-float copies for the hot loops
        self._base = self.base_response.tolist()
        self._srtt = self.server_rtt.tolist()
        self._pred = self.pred.tolist()
        self._dl = self.deadline.tolist()
        self._up, self._um, self._ul = self.u_p.tolist(), self.u_m.tolist(), self.u_l.tolist()

    def response(self, j: int, k: int, placed: Mapping[int, int]) -> float:
        """Response time of task j on server k given placed task-index -> server-index."""
        inter = 0.0
        p = self._pred[j]
        if p >= 0:
            kp = placed.get(p)
            if kp is not None and kp != k:
                inter = self._srtt[kp][k]
        return self._base[j][k] + inter

    def placeable(self, j: int, k: int, cpu, ram, sto, u_th: float) -> bool:
        """Availability (pre-load below u_th) and capacity (post-load below 1) on every axis."""
        c, m, l = cpu[k], ram[k], sto[k]
        if not (c < u_th and m < u_th and l < u_th):
            return False
        return (c + self._up[j][k]) < 1 and (m + self._um[j][k]) < 1 and (l + self._ul[j][k]) < 1

    def meets_deadline(self, j: int, k: int, placed: Mapping[int, int]) -> bool:
        return self.response(j, k, placed) <= self._dl[j]


def brute_force_optimum(scenario: Scenario, u_th: float = DEFAULT_U_TH,
                        limit: int = BRUTE_FORCE_LIMIT) -> tuple[Schedule, float]:
    """Exhaustive maximizer of the hit-ratio over all placements.

    Every task is either placed on one server or left unassigned. Tasks are
    placed in deadline order; a placement violating availability or capacity
    makes the candidate invalid. Among optimal candidates the one whose
    per-task server vector (task order, unassigned = n_servers) is
    lexicographically smallest wins.
    """
    tables = ScenarioTables(scenario)
    T, S = tables.n_tasks, tables.n_servers
    if (S + 1) ** T > limit:
        raise TooLarge(f"{(S + 1) ** T} candidate schedules exceed the limit {limit}")
    order = tables.edf_order
    n_users = len(scenario.users)
    misses = [0] * n_users
    user = tables.user.tolist()
    cpu, ram, sto = [0.0] * S, [0.0] * S, [0.0] * S
    placed: dict[int, int] = {}
    vector = [S] * T
    best = {"hits": -1, "key": None}

    def leaf():
        hits = sum(1 for m in misses if m == 0)
        key = tuple(vector)
        if hits > best["hits"] or (hits == best["hits"] and key < best["key"]):
            best["hits"], best["key"] = hits, key

    def visit(depth: int):
        if depth == T:
            leaf()
            return
        j = order[depth]
        for k in range(S):
            if not tables.placeable(j, k, cpu, ram, sto, u_th):
                continue
            hit = tables.meets_deadline(j, k, placed)
            saved = cpu[k], ram[k], sto[k]
            placed[j] = k
            vector[j] = k
            cpu[k] += tables._up[j][k]
            ram[k] += tables._um[j][k]
            sto[k] += tables._ul[j][k]
            if not hit:
                misses[user[j]] += 1
            visit(depth + 1)
            if not hit:
                misses[user[j]] -= 1
            cpu[k], ram[k], sto[k] = saved  # restore exactly; no float drift
            del placed[j]
        vector[j] = S
        misses[user[j]] += 1
        visit(depth + 1)
        misses[user[j]] -= 1

    visit(0)
    key = best["key"]
    tasks, servers = scenario.tasks, scenario.servers
    schedule = Schedule(tuple((tasks[j].id, servers[key[j]].id) for j in order if key[j] < S))
    return schedule, best["hits"] / n_users

