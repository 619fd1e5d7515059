import math

import pytest

from edgesched.network import Link, Topology
from edgesched.scenario import EdgeServer, EdgeUser, Scenario, Service, Task


def mk_task(id, user=0, deadline=10.0, c=1.0, m=1.0, l=0.0, pred=None, rank=1):
    return Task(id=id, user_id=user, arrival_time=0.0, period=0.0, deadline=deadline, cpu_demand=c,
                data_size=m, storage=l, predecessor=pred, criticality_rank=rank)


def mk_server(id, zone=0, F=1.0, N=1, M=10.0, L=10.0):
    return EdgeServer(id=id, zone=zone, cpu_freq=F, cores=N, ram=M, storage=L)


def mk_scenario(workloads, servers, zones=(0,), links=(), user_zones=None, wireless_ms=0.0,
                bandwidth=math.inf, services=None):
    """Hand-built scenario; ``workloads`` is a list of task lists, one per user (user id = position)."""
    users = []
    for i, tasks in enumerate(workloads):
        zone = user_zones[i] if user_zones else zones[0]
        service = services[i] if services else Service.CROWD_COUNTING
        users.append(EdgeUser(i, zone, service, tuple(tasks)))
    links = tuple(l if isinstance(l, Link) else Link(*l) for l in links)
    topo = Topology(tuple(zones), links, (), wireless_ms, bandwidth)
    return Scenario(tuple(users), tuple(servers), topo)


@pytest.fixture
def crafted_4x2():
    """Four tasks, two servers; EDF and BestFit fall short of the optimum (2 of 3 users)."""
    workloads = [
        [mk_task(0, user=0, deadline=3.0, c=2.0, m=4.0), mk_task(1, user=0, deadline=4.0, c=1.5, m=2.0, pred=0)],
        [mk_task(2, user=1, deadline=4.0, c=2.0, m=1.0)],
        [mk_task(3, user=2, deadline=1.0, c=1.5, m=1.0)],
    ]
    servers = [mk_server(0, zone=0, F=1.0, N=1, M=8.0), mk_server(1, zone=1, F=2.0, N=1, M=8.0)]
    return mk_scenario(workloads, servers, zones=(0, 1), links=[(0, 1, 100.0, 10.0)], user_zones=[0, 1, 1])


def pytest_terminal_summary(terminalreporter):
    try:
        import test_acceptance
    except ImportError:
        return
    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
