import json

import numpy as np
import pytest

from edgesched.agent import (Action, Agent, ConvergenceConfig, EpisodeState, RewardConfig, apply_action,
                             compute_reward, encode_state, informed_explore, legal_actions, run_episode,
                             select_action, train, train_vanilla)
from edgesched.baselines import edf_schedule
from edgesched.dqn import DqnHyperparams
from edgesched.errors import InvalidConfig
from edgesched.evaluation import ScenarioTables, brute_force_optimum, hit_ratio, replay
from edgesched.scenario import preset

from conftest import mk_scenario, mk_server, mk_task

SMALL = DqnHyperparams(hidden=(16, 16), batch_size=8, replay_capacity=500)


def scenario_6x2():
    work = [[mk_task(i, user=i // 2, deadline=10.0 + i, c=0.5) for i in range(2 * u, 2 * u + 2)] for u in range(3)]
    return mk_scenario(work, [mk_server(0, M=100.0), mk_server(1, M=100.0)])


def scenario_3x2():
    return mk_scenario([[mk_task(0, deadline=5.0), mk_task(1, deadline=6.0), mk_task(2, deadline=7.0)]],
                       [mk_server(0, M=100.0), mk_server(1, M=100.0)])


def place(state, j, k, u_th=0.8):
    a = Action.of(j, k, state.tables.n_servers)
    _, hit = compute_reward(a, state, u_th, RewardConfig())
    return apply_action(state, a, hit, u_th)


# -- state encoding --------------------------------------------------------

def test_fresh_state_zero():
    st = EpisodeState(ScenarioTables(scenario_6x2()))
    v = encode_state(st)
    assert len(v) == 18
    assert not v[:6].any() and not v[6:12].any()


def test_encoding_after_assignment():
    st = EpisodeState(ScenarioTables(scenario_6x2()))
    assert place(st, 0, 1)
    v = encode_state(st)
    assert v[0] == 1 and v[1:6].sum() == 0
    assert v[6:9].tolist() == [0, 0, 0]
    assert v[9] > 0 and v[10] > 0


# -- legal actions ----------------------------------------------------------

def test_legal_actions_after_one():
    st = EpisodeState(ScenarioTables(scenario_3x2()))
    place(st, 0, 0)
    assert {(a.task_index, a.server_index) for a in legal_actions(st)} == {(1, 0), (1, 1), (2, 0), (2, 1)}


def test_legal_actions_fresh_and_done():
    st = EpisodeState(ScenarioTables(scenario_3x2()))
    assert len(legal_actions(st)) == 6
    for j in range(3):
        place(st, j, 0)
    assert legal_actions(st) == set()


def test_flat_index_roundtrip():
    for flat in range(12):
        a = Action.from_flat(flat, 3)
        assert a == Action.of(a.task_index, a.server_index, 3)


# -- exploration -------------------------------------------------------------

def test_explore_single_option():
    sc = mk_scenario([[mk_task(0, l=5.0), mk_task(1, deadline=1.0)]], [mk_server(0, L=1.0), mk_server(1, L=10.0)])
    st = EpisodeState(ScenarioTables(sc))
    place(st, 1, 0)
    for seed in range(5):
        a = informed_explore(st, 0.8, np.random.default_rng(seed))
        assert (a.task_index, a.server_index) == (0, 1)


def test_explore_uniform_between_two():
    st = EpisodeState(ScenarioTables(scenario_3x2()))
    picks = [informed_explore(st, 0.8, np.random.default_rng(s)) for s in range(400)]
    assert {a.task_index for a in picks} == {0}
    share = sum(a.server_index for a in picks) / len(picks)
    assert 0.4 < share < 0.6


def test_explore_without_feasible_server():
    sc = mk_scenario([[mk_task(0, deadline=0.5)]], [mk_server(0)])  # u_p = 2
    st = EpisodeState(ScenarioTables(sc))
    a = informed_explore(st, 0.8, np.random.default_rng(0))
    assert (a.task_index, a.server_index) == (0, 0)
    reward, hit = compute_reward(a, st, 0.8, RewardConfig())
    assert reward == 0.0 and not hit


# -- action selection --------------------------------------------------------

def test_epsilon_zero_always_exploits():
    agent = Agent(scenario_6x2(), SMALL, seed=1)
    agent.epsilon_override = 0.0
    st = EpisodeState(agent.tables)
    assert all(select_action(agent, st)[1] == "exploit" for _ in range(50))


def test_epsilon_one_always_explores():
    agent = Agent(scenario_6x2(), SMALL, seed=1)
    agent.epsilon_override = 1.0
    st = EpisodeState(agent.tables)
    assert all(select_action(agent, st)[1] == "explore" for _ in range(50))


def test_exploit_masks_assigned_task():
    agent = Agent(scenario_3x2(), SMALL, seed=0)
    net = agent.policy
    for p in net.params():
        p[...] = 0.0
    # Q over (task, server): best is task 0 on server 1, then task 2 on server 0
    net.biases[2][:] = [5.0, 9.0, 1.0, 2.0, 7.0, 3.0]
    st = EpisodeState(agent.tables)
    assert agent.exploit(st) == Action.of(0, 1, 2)
    place(st, 0, 1)
    assert agent.exploit(st) == Action.of(2, 0, 2)


# -- reward cascade -----------------------------------------------------------

def test_reward_assigned_task():
    st = EpisodeState(ScenarioTables(scenario_3x2()))
    place(st, 0, 0)
    assert compute_reward(Action.of(0, 1, 2), st, 0.8, RewardConfig()) == (-1.0, False)


def test_reward_full_hit_rank_1():
    cfg = RewardConfig()
    st = EpisodeState(ScenarioTables(scenario_3x2()))
    r, hit = compute_reward(Action.of(0, 0, 2), st, 0.8, cfg)
    assert hit
    assert r == 3 * cfg.positive_reward + 4 * cfg.criticality_bonus


def test_reward_deadline_miss():
    cfg = RewardConfig(positive_reward=2.0, negative_reward=-3.0, criticality_bonus=0.5)
    sc = mk_scenario([[mk_task(0, deadline=4.0, c=2.0, rank=3)]], [mk_server(0, zone=1)], zones=(0, 1),
                     links=[(0, 1, 1000.0, 100.0)])
    st = EpisodeState(ScenarioTables(sc))
    r, hit = compute_reward(Action.of(0, 0, 1), st, 0.8, cfg)
    assert not hit
    assert r == 2 * cfg.positive_reward + 2 * cfg.criticality_bonus + cfg.negative_reward


def test_reward_config_validation():
    with pytest.raises(InvalidConfig):
        RewardConfig(negative_reward=1.0)


# -- episodes -------------------------------------------------------------------

def test_one_task_episode():
    agent = Agent(mk_scenario([[mk_task(0)]], [mk_server(0)]), SMALL, seed=0, u_th=1.0)
    agent.epsilon_override = 1.0
    rec = run_episode(agent)
    assert rec.steps == 1 and rec.hit_tasks == 1 and rec.hit_ratio == 1.0


def test_all_hit_reward_is_sum_of_maxima():
    sc = scenario_6x2()
    agent = Agent(sc, SMALL, seed=0)
    agent.epsilon_override = 1.0
    rec = run_episode(agent, train=False)
    assert rec.hit_tasks == 6
    cfg = agent.reward_cfg
    maxima = [3 * cfg.positive_reward + cfg.criticality_bonus * (5 - t.criticality_rank) for t in sc.tasks]
    assert rec.total_reward == sum(rec.rewards)
    assert sorted(rec.rewards) == sorted(maxima)


def test_epsilon_one_degenerates_to_edf():
    # only server 1 can hold the storage of any task
    work = [[mk_task(0, deadline=9.0, l=5.0), mk_task(1, deadline=3.0, l=2.0)], [mk_task(2, user=1, deadline=5.0, l=2.0)]]
    sc = mk_scenario(work, [mk_server(0, L=1.0), mk_server(1, L=100.0)])
    agent = Agent(sc, SMALL, seed=4)
    agent.epsilon_override = 1.0
    rec = run_episode(agent, train=False)
    assert rec.schedule.assignments == edf_schedule(sc).assignments


def test_episode_schedule_respects_resources():
    sc = preset("desk")
    agent = Agent(sc, SMALL, seed=2)
    for _ in range(5):
        rec = run_episode(agent)
        assert all(r.placeable for r in replay(rec.schedule, sc))
        assert hit_ratio(rec.schedule, sc) == rec.hit_ratio


# -- training -----------------------------------------------------------------

def test_trivial_two_task_converges():
    sc = mk_scenario([[mk_task(0), mk_task(1, deadline=12.0)]], [mk_server(0, M=100.0)])
    assert brute_force_optimum(sc)[1] == 1.0
    res = train(sc, SMALL, convergence_cfg=ConvergenceConfig(max_episodes=300), seed=0)
    assert res.converged
    assert res.final_hit_ratio == 1.0
    assert res.convergence_episode is not None and res.convergence_episode + 100 <= res.episodes


def test_training_deterministic():
    sc = preset("tiny")
    cfg = ConvergenceConfig(max_episodes=100)
    a = train(sc, SMALL, convergence_cfg=cfg, seed=3).to_dict(measured=False)
    b = train(sc, SMALL, convergence_cfg=cfg, seed=3).to_dict(measured=False)
    assert json.dumps(a) == json.dumps(b)


def test_vanilla_needs_more_steps():
    sc = preset("tiny")
    cfg = ConvergenceConfig(max_episodes=100)
    a = train(sc, SMALL, convergence_cfg=cfg, seed=0)
    v = train_vanilla(sc, SMALL, convergence_cfg=cfg, seed=0)
    assert v.total_steps >= a.total_steps


def test_vanilla_random_walk_seeded():
    sc = preset("tiny")
    hyper = DqnHyperparams(hidden=(8, 8), batch_size=8, epsilon_start=1.0, epsilon_end=1.0)
    cfg = ConvergenceConfig(max_episodes=100, measure="train")
    runs = [train_vanilla(sc, hyper, convergence_cfg=cfg, seed=s, step_cap_factor=5).series["steps"] for s in (0, 0, 1)]
    assert runs[0] == runs[1]
    assert runs[0] != runs[2]


def test_vanilla_truncation_flagged():
    sc = mk_scenario([[mk_task(0), mk_task(1, deadline=0.5)]], [mk_server(0, M=100.0)])
    res = train_vanilla(sc, SMALL, convergence_cfg=ConvergenceConfig(max_episodes=100), seed=0, step_cap_factor=3)
    assert res.truncated_episodes == 100
    assert max(res.series["steps"]) == 6


def test_budget_below_window_rejected():
    with pytest.raises(InvalidConfig):
        ConvergenceConfig(window=100, max_episodes=50)


def test_debug_log(tmp_path):
    path = tmp_path / "steps.jsonl"
    res = train(preset("tiny"), SMALL, convergence_cfg=ConvergenceConfig(window=5, max_episodes=5), seed=0,
                debug_log=path)
    lines = [json.loads(l) for l in path.read_text().splitlines()]
    assert len(lines) == res.total_steps
    assert {"episode", "step", "mode", "task", "server", "reward", "hit", "legal"} <= set(lines[0])


def test_train_result_json_roundtrip():
    res = train(preset("tiny"), SMALL, convergence_cfg=ConvergenceConfig(window=5, max_episodes=10), seed=0)
    d = json.loads(json.dumps(res.to_dict()))
    assert d["episodes"] == len(d["series"]["reward"]) <= 10
    assert "measured" in d and "measured" not in res.to_dict(measured=False)
