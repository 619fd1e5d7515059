"""Minimal deep Q-learning machinery in numpy.

Three fully connected layers (ReLU, ReLU, linear) trained with plain SGD on
the squared temporal-difference error. Nothing here knows about scheduling.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidConfig, ShapeError

CHECKPOINT_FORMAT = "edgesched-qnet"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class DqnHyperparams:
    gamma: float = 0.9
    learning_rate: float = 0.01
    batch_size: int = 32
    target_update_interval: int = 100  # steps
    epsilon_start: float = 0.9
    epsilon_end: float = 0.05
    epsilon_decay: float = 500.0  # steps
    hidden: tuple[int, int] = (128, 128)
    replay_capacity: int = 10_000
    grad_clip: float | None = 1.0  # global L2 norm; None disables
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.gamma <= 1:
            raise InvalidConfig("gamma must lie in [0, 1]")
        if not 0 <= self.epsilon_end <= self.epsilon_start <= 1:
            raise InvalidConfig("need 0 <= epsilon_end <= epsilon_start <= 1")
        if not self.epsilon_decay > 0:
            raise InvalidConfig("epsilon_decay must be > 0")
        if self.batch_size < 1 or self.replay_capacity < self.batch_size:
            raise InvalidConfig("replay capacity must hold at least one batch")
        if self.learning_rate <= 0 or self.target_update_interval < 1:
            raise InvalidConfig("learning_rate and target_update_interval must be positive")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DqnHyperparams":
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)


def epsilon_threshold(step: int, hyper: DqnHyperparams) -> float:
    """eps_end + (eps_start - eps_end) / exp(step / decay)."""
    x = step / hyper.epsilon_decay
    if x > 700:  # exp overflows; the schedule has long reached its floor
        return hyper.epsilon_end
    return hyper.epsilon_end + (hyper.epsilon_start - hyper.epsilon_end) / math.exp(x)


class QNetwork:
    """input -> hidden1 -> hidden2 -> output, weights stored as (fan_in, fan_out)."""

    def __init__(self, input_dim: int, hidden: tuple[int, int], output_dim: int,
                 rng: np.random.Generator | None = None):
        self.input_dim, self.output_dim = int(input_dim), int(output_dim)
        self.hidden = tuple(int(h) for h in hidden)
        if min((self.input_dim, self.output_dim) + self.hidden) < 1:
            raise ShapeError("all layer widths must be positive")
        dims = (self.input_dim,) + self.hidden + (self.output_dim,)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            if rng is None:
                self.weights.append(np.zeros((fan_in, fan_out)))
                self.biases.append(np.zeros(fan_out))
            else:
                bound = 1.0 / math.sqrt(fan_in)
                self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
                self.biases.append(rng.uniform(-bound, bound, size=fan_out))

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim not in (1, 2) or x.shape[-1] != self.input_dim:
            raise ShapeError(f"expected (..., {self.input_dim}) input, got {x.shape}")
        return x

    def forward(self, x) -> np.ndarray:
        x = self._check(x)
        w1, w2, w3 = self.weights
        b1, b2, b3 = self.biases
        h1 = np.maximum(x @ w1 + b1, 0.0)
        h2 = np.maximum(h1 @ w2 + b2, 0.0)
        return h2 @ w3 + b3

    __call__ = forward

    def forward_cached(self, x):
        x = self._check(x)
        w1, w2, w3 = self.weights
        b1, b2, b3 = self.biases
        z1 = x @ w1 + b1
        h1 = np.maximum(z1, 0.0)
        z2 = h1 @ w2 + b2
        h2 = np.maximum(z2, 0.0)
        return h2 @ w3 + b3, (x, z1, h1, z2, h2)

    def backward(self, cache, dq: np.ndarray) -> list[np.ndarray]:
        """Gradients of sum(dq * q) w.r.t. params(), given the forward cache."""
        x, z1, h1, z2, h2 = cache
        w1, w2, w3 = self.weights
        if x.ndim == 1:
            x, z1, h1, z2, h2, dq = (a[None, :] for a in (x, z1, h1, z2, h2, dq))
        gw3 = h2.T @ dq
        gb3 = dq.sum(axis=0)
        dz2 = (dq @ w3.T) * (z2 > 0)
        gw2 = h1.T @ dz2
        gb2 = dz2.sum(axis=0)
        dz1 = (dz2 @ w2.T) * (z1 > 0)
        gw1 = x.T @ dz1
        gb1 = dz1.sum(axis=0)
        return [gw1, gb1, gw2, gb2, gw3, gb3]

    def copy(self) -> "QNetwork":
        net = QNetwork(self.input_dim, self.hidden, self.output_dim)
        sync_target(self, net)
        return net

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "input_dim": self.input_dim,
            "hidden": list(self.hidden),
            "output_dim": self.output_dim,
            "params": [p.ravel().tolist() for p in self.params()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QNetwork":
        if d.get("format") != CHECKPOINT_FORMAT or d.get("version") != CHECKPOINT_VERSION:
            raise ShapeError("not a supported Q-network checkpoint")
        net = cls(d["input_dim"], tuple(d["hidden"]), d["output_dim"])
        for p, flat in zip(net.params(), d["params"]):
            if len(flat) != p.size:
                raise ShapeError("checkpoint parameter size mismatch")
            p[...] = np.asarray(flat, dtype=np.float64).reshape(p.shape)
        return net

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "QNetwork":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def sync_target(policy: QNetwork, target: QNetwork) -> None:
    for src, dst in zip(policy.params(), target.params()):
        if src.shape != dst.shape:
            raise ShapeError("networks have different shapes")
        dst[...] = src


class ReplayBuffer:
    """Fixed-capacity ring buffer of transitions; the oldest entry is overwritten first."""

    def __init__(self, capacity: int, state_dim: int, n_actions: int | None = None):
        self.capacity = int(capacity)
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.terminals = np.zeros(capacity, dtype=bool)
        # legal-action mask of the next state, when the agent masks actions
        self.next_masks = np.ones((capacity, n_actions), dtype=bool) if n_actions else None
        self._next = 0
        self.size = 0

    def __len__(self):
        return self.size

    def push(self, state, action: int, reward: float, next_state, terminal: bool, next_mask=None) -> None:
        i = self._next
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.terminals[i] = terminal
        if self.next_masks is not None:
            self.next_masks[i] = True if next_mask is None else next_mask
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        idx = rng.choice(self.size, size=batch_size, replace=False)
        batch = {
            "states": self.states[idx],
            "actions": self.actions[idx],
            "rewards": self.rewards[idx],
            "next_states": self.next_states[idx],
            "terminals": self.terminals[idx],
        }
        if self.next_masks is not None:
            batch["next_masks"] = self.next_masks[idx]
        return batch


def td_targets(target: QNetwork, batch: dict, gamma: float) -> np.ndarray:
    """r + gamma * max_a' Q_target(s', a'); the bootstrap is dropped on terminal steps.

    With ``next_masks`` in the batch the max runs over legal next actions only.
    """
    q_next = target.forward(batch["next_states"])
    masks = batch.get("next_masks")
    if masks is None:
        best = q_next.max(axis=1)
        done = batch["terminals"]
    else:
        best = np.where(masks, q_next, -np.inf).max(axis=1)
        done = batch["terminals"] | ~masks.any(axis=1)
    return batch["rewards"] + gamma * np.where(done, 0.0, best)


def td_loss_and_grads(policy: QNetwork, target: QNetwork, batch: dict, gamma: float):
    y = td_targets(target, batch, gamma)
    q, cache = policy.forward_cached(batch["states"])
    rows = np.arange(len(y))
    err = q[rows, batch["actions"]] - y
    loss = float(np.mean(err ** 2))
    dq = np.zeros_like(q)
    dq[rows, batch["actions"]] = 2.0 * err / len(y)
    return loss, policy.backward(cache, dq)


def td_train_step(policy: QNetwork, target: QNetwork, batch: dict, hyper: DqnHyperparams) -> float:
    """One SGD step on the mean squared TD error; returns the loss before the step."""
    loss, grads = td_loss_and_grads(policy, target, batch, hyper.gamma)
    scale = 1.0
    if hyper.grad_clip is not None:
        norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
        if norm > hyper.grad_clip:
            scale = hyper.grad_clip / norm
    lr = hyper.learning_rate * scale
    for p, g in zip(policy.params(), grads):
        p -= lr * g
    return loss
