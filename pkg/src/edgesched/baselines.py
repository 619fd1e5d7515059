"""Heuristic schedulers: EDF adapted for edge servers, and BestFit.

Both place a task only where availability (pre-load below ``u_th``) and
capacity (post-load below 1) hold; neither looks at the deadline when
choosing a server. Tasks with no admissible server stay unassigned.
"""
from __future__ import annotations

from typing import Iterable

from .errors import Empty
from .evaluation import DEFAULT_U_TH, Schedule, ScenarioTables, edf_key
from .scenario import Scenario, Task


def edf_next_task(unassigned: Iterable[Task]) -> Task:
    """Task with the earliest absolute deadline (ties: lower rank number, then lower id)."""
    try:
        return min(unassigned, key=edf_key)
    except ValueError:
        raise Empty("no unassigned task left") from None


def edf_schedule(scenario: Scenario, u_th: float = DEFAULT_U_TH) -> Schedule:
    tables = ScenarioTables(scenario)
    S = tables.n_servers
    cpu, ram, sto = [0.0] * S, [0.0] * S, [0.0] * S
    pending = list(scenario.tasks)
    out = []
    for _ in range(len(scenario.tasks)):
        task = edf_next_task(pending)
        pending.remove(task)
        j = scenario.task_index[task.id]
        for k in tables.server_order:
            if tables.placeable(j, k, cpu, ram, sto, u_th):
                cpu[k] += tables._up[j][k]
                ram[k] += tables._um[j][k]
                sto[k] += tables._ul[j][k]
                out.append((task.id, scenario.servers[k].id))
                break
    return Schedule(tuple(out))


def bestfit_schedule(scenario: Scenario, u_th: float = DEFAULT_U_TH) -> Schedule:
    """Each task goes to the admissible server left with the least residual capacity.

    Residual is ``min(1 - U_P', 1 - U_M', 1 - U_L')`` after the placement.
    """
    tables = ScenarioTables(scenario)
    S = tables.n_servers
    cpu, ram, sto = [0.0] * S, [0.0] * S, [0.0] * S
    out = []
    for j, task in enumerate(scenario.tasks):
        best_k, best_res = None, None
        for k in tables.server_order:
            if not tables.placeable(j, k, cpu, ram, sto, u_th):
                continue
            res = min(1 - (cpu[k] + tables._up[j][k]), 1 - (ram[k] + tables._um[j][k]),
                      1 - (sto[k] + tables._ul[j][k]))
            if best_res is None or res < best_res:
                best_k, best_res = k, res
        if best_k is None:
            continue
        cpu[best_k] += tables._up[j][best_k]
        ram[best_k] += tables._um[j][best_k]
        sto[best_k] += tables._ul[j][best_k]
        out.append((task.id, scenario.servers[best_k].id))
    return Schedule(tuple(out))
