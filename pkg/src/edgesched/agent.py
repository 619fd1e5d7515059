"""Masked DQN scheduler with deadline-driven exploration, and its unmasked ablation.

An action places one task on one server; its flat index is
``task_index * n_servers + server_index``. Per episode a decision matrix
``G`` records which tasks were already decided. The masked agent
(``masked=True``) only ever picks undecided tasks and stops after one
decision per task. When exploring it takes the earliest-deadline undecided
task and a random admissible server. The vanilla agent explores uniformly
over every action, is not masked, and runs until all tasks hit or a step
cap is reached.

A decision whose server fails the availability/capacity gate consumes the
task (``G`` row set) but places nothing; the task counts as a miss. So the
schedule an episode returns always satisfies the resource constraints.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .convergence import detect_convergence
from .dqn import (DqnHyperparams, QNetwork, ReplayBuffer, epsilon_threshold, sync_target,
                  td_train_step)
from .errors import InvalidConfig
from .evaluation import DEFAULT_U_TH, Schedule, ScenarioTables, ServerLoad, hit_ratio
from .scenario import Scenario

MAX_RANK = 4


@dataclass(frozen=True)
class RewardConfig:
    positive_reward: float = 1.0
    negative_reward: float = -1.0
    criticality_bonus: float = 0.25  # per rank step above the least critical

    def __post_init__(self):
        if not self.positive_reward > 0 or not self.negative_reward < 0:
            raise InvalidConfig("positive_reward must be > 0 and negative_reward < 0")


@dataclass(frozen=True)
class ConvergenceConfig:
    threshold: float = 0.98
    window: int = 100
    max_episodes: int = 1000
    # "greedy": judge each episode by a masked/unmasked epsilon=0 rollout of the
    # current policy; "train": by the exploring training episode itself
    measure: str = "greedy"

    def __post_init__(self):
        if not 0 < self.threshold <= 1 or self.window < 1:
            raise InvalidConfig("threshold must lie in (0, 1] and window >= 1")
        if self.max_episodes < self.window:
            raise InvalidConfig("episode budget must be at least the convergence window")
        if self.measure not in ("greedy", "train"):
            raise InvalidConfig("measure must be 'greedy' or 'train'")


@dataclass(frozen=True)
class Action:
    task_index: int
    server_index: int
    flat_index: int

    @classmethod
    def from_flat(cls, flat: int, n_servers: int) -> "Action":
        return cls(flat // n_servers, flat % n_servers, flat)

    @classmethod
    def of(cls, j: int, k: int, n_servers: int) -> "Action":
        return cls(j, k, j * n_servers + k)

    def ids(self, scenario: Scenario) -> tuple[int, int]:
        return scenario.tasks[self.task_index].id, scenario.servers[self.server_index].id


class EpisodeState:
    """Mutable per-episode bookkeeping."""

    def __init__(self, tables: ScenarioTables):
        self.tables = tables
        T, S = tables.n_tasks, tables.n_servers
        self.G = np.zeros((T, S), dtype=np.int8)
        self.cpu = [0.0] * S
        self.ram = [0.0] * S
        self.sto = [0.0] * S
        self.placed: dict[int, int] = {}  # task index -> server index
        self.assignments: list[tuple[int, int]] = []  # (task id, server id), placed only
        self.unassigned: set[int] = set(range(T))
        self.task_hit = [False] * T
        self.t = 0
        self.hit_tasks = 0

    def unassigned_from_matrix(self) -> set[int]:
        return set(np.flatnonzero(self.G.sum(axis=1) == 0).tolist())

    def legal_mask(self) -> np.ndarray:
        S = self.tables.n_servers
        mask = np.zeros(self.tables.n_tasks * S, dtype=bool)
        for j in self.unassigned:
            mask[j * S:(j + 1) * S] = True
        return mask

    @property
    def schedule(self) -> Schedule:
        return Schedule(tuple(self.assignments))

    @property
    def loads(self) -> list[ServerLoad]:
        sc = self.tables.scenario
        out = []
        for k, s in enumerate(sc.servers):
            assigned = frozenset(sc.tasks[j].id for j, kk in self.placed.items() if kk == k)
            out.append(ServerLoad(s.id, self.cpu[k], self.ram[k], self.sto[k], assigned))
        return out

    def user_hit_ratio(self) -> float:
        tables = self.tables
        missed = np.zeros(len(tables.user_sizes), dtype=bool)
        for j, ok in enumerate(self.task_hit):
            if not ok:
                missed[tables.user[j]] = True
        return float((~missed).sum()) / len(missed)


def encode_state(state: EpisodeState) -> np.ndarray:
    """[decided flag per task | (U_P, U_M, U_L) per server | d_j / max d per task]."""
    tables = state.tables
    flags = state.G.sum(axis=1).astype(np.float64)
    loads = np.column_stack([state.cpu, state.ram, state.sto]).ravel()
    urgency = tables.deadline / tables.deadline.max()
    return np.concatenate([flags, np.clip(loads, 0.0, 1.0), urgency])


def state_dim(tables: ScenarioTables) -> int:
    return 2 * tables.n_tasks + 3 * tables.n_servers


def legal_actions(state: EpisodeState) -> set[Action]:
    S = state.tables.n_servers
    return {Action.of(j, k, S) for j in state.unassigned for k in range(S)}


def _edf_pick(state: EpisodeState) -> int:
    order = state.tables.edf_order
    for j in order:
        if j in state.unassigned:
            return j
    raise ValueError("no unassigned task")


def admissible_servers(state: EpisodeState, j: int, u_th: float) -> list[int]:
    tables = state.tables
    return [k for k in tables.server_order if tables.placeable(j, k, state.cpu, state.ram, state.sto, u_th)]


def informed_explore(state: EpisodeState, u_th: float, rng: np.random.Generator) -> Action:
    """Earliest-deadline undecided task on a uniformly drawn admissible server.

    With no admissible server the server is drawn from all servers; the
    reward then penalizes the choice.
    """
    j = _edf_pick(state)
    candidates = admissible_servers(state, j, u_th) or list(range(state.tables.n_servers))
    k = candidates[int(rng.integers(0, len(candidates)))]
    return Action.of(j, k, state.tables.n_servers)


def compute_reward(action: Action, state: EpisodeState, u_th: float,
                   cfg: RewardConfig) -> tuple[float, bool]:
    """Constraint cascade: undecided task, server admissible, criticality, deadline.

    Pure with respect to ``state``.
    """
    tables = state.tables
    j, k = action.task_index, action.server_index
    if j not in state.unassigned:
        return cfg.negative_reward, False
    reward = cfg.positive_reward
    if not tables.placeable(j, k, state.cpu, state.ram, state.sto, u_th):
        return reward + cfg.negative_reward, False
    reward += cfg.positive_reward
    reward += cfg.criticality_bonus * (MAX_RANK + 1 - int(tables.rank[j]))
    if tables.meets_deadline(j, k, state.placed):
        return reward + cfg.positive_reward, True
    return reward + cfg.negative_reward, False


def apply_action(state: EpisodeState, action: Action, hit: bool, u_th: float) -> bool:
    """Record the decision; place the task if the server admits it. Returns True if placed."""
    tables = state.tables
    j, k = action.task_index, action.server_index
    state.t += 1
    if j not in state.unassigned:
        return False
    state.G[j, k] = 1
    state.unassigned.discard(j)
    if not tables.placeable(j, k, state.cpu, state.ram, state.sto, u_th):
        return False
    state.cpu[k] += tables._up[j][k]
    state.ram[k] += tables._um[j][k]
    state.sto[k] += tables._ul[j][k]
    state.placed[j] = k
    sc = tables.scenario
    state.assignments.append((sc.tasks[j].id, sc.servers[k].id))
    if hit:
        state.task_hit[j] = True
        state.hit_tasks += 1
    return True


class Agent:
    """Policy/target networks, replay memory and RNG streams of one training run."""

    def __init__(self, scenario: Scenario, hyper: DqnHyperparams | None = None,
                 reward_cfg: RewardConfig | None = None, u_th: float = DEFAULT_U_TH,
                 seed: int | None = None, masked: bool = True, step_cap_factor: int = 50):
        if not 0 < u_th <= 1:
            raise InvalidConfig("u_th must lie in (0, 1]")
        self.scenario = scenario
        self.tables = ScenarioTables(scenario)
        self.hyper = hyper or DqnHyperparams()
        self.reward_cfg = reward_cfg or RewardConfig()
        self.u_th = u_th
        self.seed = self.hyper.seed if seed is None else int(seed)
        self.masked = masked
        self.step_cap_factor = step_cap_factor
        self.n_actions = self.tables.n_tasks * self.tables.n_servers
        init_ss, explore_ss, replay_ss = np.random.SeedSequence(self.seed).spawn(3)
        self.policy = QNetwork(state_dim(self.tables), self.hyper.hidden, self.n_actions,
                               np.random.default_rng(init_ss))
        self.target = self.policy.copy()
        self.replay = ReplayBuffer(self.hyper.replay_capacity, state_dim(self.tables),
                                   self.n_actions if masked else None)
        self.explore_rng = np.random.default_rng(explore_ss)
        self.replay_rng = np.random.default_rng(replay_ss)
        self.steps = 0
        self.epsilon_override: float | None = None

    @property
    def step_cap(self) -> int:
        """Per-episode action limit: one per task when masked, a safety cap otherwise."""
        T = self.tables.n_tasks
        return T if self.masked else self.step_cap_factor * T

    def epsilon(self) -> float:
        if self.epsilon_override is not None:
            return self.epsilon_override
        return epsilon_threshold(self.steps, self.hyper)

    def explore(self, state: EpisodeState) -> Action:
        if self.masked:
            return informed_explore(state, self.u_th, self.explore_rng)
        return Action.from_flat(int(self.explore_rng.integers(0, self.n_actions)), self.tables.n_servers)

    def exploit(self, state: EpisodeState, state_vec: np.ndarray | None = None) -> Action:
        if state_vec is None:
            state_vec = encode_state(state)
        q = self.policy.forward(state_vec)
        if self.masked:
            q = np.where(state.legal_mask(), q, -np.inf)
        return Action.from_flat(int(np.argmax(q)), self.tables.n_servers)


def select_action(agent: Agent, state: EpisodeState, state_vec: np.ndarray | None = None,
                  greedy: bool = False) -> tuple[Action, str]:
    """Epsilon-greedy choice; returns the action and ``"exploit"`` or ``"explore"``."""
    if greedy:
        return agent.exploit(state, state_vec), "exploit"
    sample = agent.explore_rng.random()
    if sample > agent.epsilon():
        return agent.exploit(state, state_vec), "exploit"
    return agent.explore(state), "explore"


@dataclass
class EpisodeRecord:
    schedule: Schedule
    total_reward: float
    hit_tasks: int
    steps: int
    hit_ratio: float  # user level
    truncated: bool
    mean_loss: float | None
    rewards: list[float] = field(default_factory=list)


StepCallback = Callable[[dict], None]


def run_episode(agent: Agent, train: bool = True, greedy: bool = False,
                callback: StepCallback | None = None) -> EpisodeRecord:
    """Play one episode from an all-zero decision matrix.

    With ``train`` every transition is stored and, once a batch is
    available, one TD step is taken per action.
    """
    tables = agent.tables
    T = tables.n_tasks
    cap = agent.step_cap
    hyper = agent.hyper
    state = EpisodeState(tables)
    total = 0.0
    rewards = []
    losses = []
    vec = encode_state(state)
    while state.t < cap and state.hit_tasks < T:
        legal_before = len(state.unassigned) * tables.n_servers
        action, mode = select_action(agent, state, vec, greedy)
        was_unassigned = action.task_index in state.unassigned
        reward, hit = compute_reward(action, state, agent.u_th, agent.reward_cfg)
        placed = apply_action(state, action, hit, agent.u_th)
        total += reward
        rewards.append(reward)
        done = not (state.t < cap and state.hit_tasks < T)
        next_vec = encode_state(state)
        if train:
            terminal = done if agent.masked else state.hit_tasks == T
            agent.replay.push(vec, action.flat_index, reward, next_vec, terminal,
                              state.legal_mask() if agent.masked else None)
            agent.steps += 1
            if len(agent.replay) >= hyper.batch_size:
                batch = agent.replay.sample(hyper.batch_size, agent.replay_rng)
                losses.append(td_train_step(agent.policy, agent.target, batch, hyper))
            if agent.steps % hyper.target_update_interval == 0:
                sync_target(agent.policy, agent.target)
        if callback is not None:
            callback({"state": state, "action": action, "mode": mode, "reward": reward, "hit": hit,
                      "placed": placed, "was_unassigned": was_unassigned, "legal_before": legal_before})
        vec = next_vec
    return EpisodeRecord(
        schedule=state.schedule, total_reward=total, hit_tasks=state.hit_tasks, steps=state.t,
        hit_ratio=state.user_hit_ratio(), truncated=state.hit_tasks < T and state.t >= cap and not agent.masked,
        mean_loss=float(np.mean(losses)) if losses else None, rewards=rewards,
    )


@dataclass
class TrainResult:
    algorithm: str
    seed: int
    config: dict
    episodes: int
    total_steps: int
    converged: bool
    convergence_episode: int | None
    truncated_episodes: int
    best_schedule: Schedule
    final_hit_ratio: float  # hit-ratio of best_schedule
    greedy_hit_ratio: float  # last epsilon=0 rollout
    series: dict
    learning_time_seconds: float = 0.0
    episode_seconds: list[float] = field(default_factory=list)

    def to_dict(self, measured: bool = True) -> dict:
        d = {
            "algorithm": self.algorithm,
            "seed": self.seed,
            "config": self.config,
            "episodes": self.episodes,
            "total_steps": self.total_steps,
            "converged": self.converged,
            "convergence_episode": self.convergence_episode,
            "truncated_episodes": self.truncated_episodes,
            "final_hit_ratio": self.final_hit_ratio,
            "greedy_hit_ratio": self.greedy_hit_ratio,
            "schedule": self.best_schedule.to_dict()["assignments"],
            "series": self.series,
        }
        if measured:
            d["measured"] = {"learning_time_seconds": self.learning_time_seconds,
                             "episode_seconds": self.episode_seconds}
        return d


def _train(scenario: Scenario, masked: bool, hyper: DqnHyperparams | None, reward_cfg: RewardConfig | None,
           convergence_cfg: ConvergenceConfig | None, seed: int | None, u_th: float,
           step_cap_factor: int, debug_log=None) -> TrainResult:
    hyper = hyper or DqnHyperparams()
    reward_cfg = reward_cfg or RewardConfig()
    conv = convergence_cfg or ConvergenceConfig()
    agent = Agent(scenario, hyper, reward_cfg, u_th, seed, masked, step_cap_factor)
    series = {"train_hit_ratio": [], "eval_hit_ratio": [], "reward": [], "steps": [], "loss": []}
    watched = series["eval_hit_ratio"] if conv.measure == "greedy" else series["train_hit_ratio"]
    best_schedule, best_ratio = Schedule(), -1.0
    truncated = 0
    converged_at = None
    greedy_ratio = 0.0
    episode_seconds = []
    log = open(debug_log, "w") if debug_log else None
    start = time.perf_counter()
    try:
        for episode in range(conv.max_episodes):
            t0 = time.perf_counter()
            if log is None:
                cb = None
            else:
                def cb(info, _ep=episode):
                    a = info["action"]
                    tid, sid = a.ids(scenario)
                    log.write(json.dumps({"episode": _ep, "step": info["state"].t, "mode": info["mode"],
                                          "task": tid, "server": sid, "reward": info["reward"],
                                          "hit": info["hit"], "legal": info["was_unassigned"]}) + "\n")
            rec = run_episode(agent, train=True, callback=cb)
            truncated += rec.truncated
            series["train_hit_ratio"].append(rec.hit_ratio)
            series["reward"].append(rec.total_reward)
            series["steps"].append(rec.steps)
            series["loss"].append(rec.mean_loss)
            candidates = [(rec.hit_ratio, rec.schedule)]
            if conv.measure == "greedy":
                ev = run_episode(agent, train=False, greedy=True)
                greedy_ratio = ev.hit_ratio
                series["eval_hit_ratio"].append(ev.hit_ratio)
                candidates.append((ev.hit_ratio, ev.schedule))
            for ratio, sched in candidates:
                if ratio > best_ratio:
                    best_ratio, best_schedule = ratio, sched
            episode_seconds.append(time.perf_counter() - t0)
            if len(watched) >= conv.window and min(watched[-conv.window:]) > conv.threshold:
                converged_at = detect_convergence(watched, conv.threshold, conv.window)
                break
    finally:
        if log is not None:
            log.close()
    elapsed = time.perf_counter() - start
    if conv.measure == "train":
        greedy_ratio = run_episode(agent, train=False, greedy=True).hit_ratio
    config = {
        "u_th": u_th,
        "masked": masked,
        "step_cap_factor": step_cap_factor,
        "hyper": hyper.to_dict(),
        "reward": asdict(reward_cfg),
        "convergence": asdict(conv),
    }
    return TrainResult(
        algorithm="arl" if masked else "vrl", seed=agent.seed, config=config,
        episodes=len(series["reward"]), total_steps=agent.steps, converged=converged_at is not None,
        convergence_episode=converged_at, truncated_episodes=truncated, best_schedule=best_schedule,
        final_hit_ratio=hit_ratio(best_schedule, scenario), greedy_hit_ratio=greedy_ratio, series=series,
        learning_time_seconds=elapsed, episode_seconds=episode_seconds,
    )


def train(scenario: Scenario, hyper: DqnHyperparams | None = None, reward_cfg: RewardConfig | None = None,
          convergence_cfg: ConvergenceConfig | None = None, seed: int | None = None,
          u_th: float = DEFAULT_U_TH, debug_log=None) -> TrainResult:
    """Train the masked agent with deadline-driven exploration until convergence or budget."""
    return _train(scenario, True, hyper, reward_cfg, convergence_cfg, seed, u_th, 50, debug_log)


def train_vanilla(scenario: Scenario, hyper: DqnHyperparams | None = None, reward_cfg: RewardConfig | None = None,
                  convergence_cfg: ConvergenceConfig | None = None, seed: int | None = None,
                  u_th: float = DEFAULT_U_TH, step_cap_factor: int = 50, debug_log=None) -> TrainResult:
    """Same network and reward, but uniform exploration, no mask and no action bound."""
    return _train(scenario, False, hyper, reward_cfg, convergence_cfg, seed, u_th, step_cap_factor, debug_log)
