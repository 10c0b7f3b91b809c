"""Value-based controller: Q-network over the 121-way discrete action grid,
replay buffer, epsilon-greedy exploration, and soft target updates."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .core import ActionDelta

GRID_LEVELS = 11           # -5..+5 in 1 degree increments, per axis
N_ACTIONS = GRID_LEVELS * GRID_LEVELS
OBS_DIM = 4


def index_to_action(index: int) -> ActionDelta:
    """Row-major decode: index = (d1 + 5) * 11 + (d3 + 5)."""
    if not 0 <= index < N_ACTIONS:
        raise ValueError(f"action index {index} out of range")
    return ActionDelta(float(index // GRID_LEVELS - 5), float(index % GRID_LEVELS - 5))


def action_to_index(action: ActionDelta) -> int:
    d1 = int(round(action.dtheta1))
    d3 = int(round(action.dtheta3))
    if not (-5 <= d1 <= 5 and -5 <= d3 <= 5):
        raise ValueError(f"action {action} off the discrete grid")
    return (d1 + 5) * GRID_LEVELS + (d3 + 5)


def epsilon_at(step: int, start=1.0, end=0.05, decay_steps=6000) -> float:
    """Linear exploration decay clamped at `end`."""
    if step < 0:
        raise ValueError("step must be non-negative")
    if step >= decay_steps:
        return end
    return start - step * (start - end) / decay_steps


def make_qnet(rng: np.random.Generator) -> nn.Mlp:
    return nn.Mlp([OBS_DIM, 128, 128, N_ACTIONS], ["relu", "relu", "linear"], rng)


def select_action(qnet: nn.Mlp, obs: np.ndarray, epsilon: float,
                  rng: np.random.Generator) -> int:
    """Epsilon-greedy pick; greedy ties resolve to the lowest index."""
    if rng.random() < epsilon:
        return int(rng.integers(N_ACTIONS))
    q = qnet.forward(obs[None])[0]
    return int(np.argmax(q))


class ReplayBuffer:
    """Bounded FIFO of transitions in preallocated arrays."""

    def __init__(self, capacity: int, obs_dim: int = OBS_DIM, action_dim: int = 1):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.dones = np.zeros(capacity)
        self.size = 0
        self.head = 0

    def add(self, obs, action, reward, next_obs, done):
        i = self.head
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.dones[i] = 1.0 if done else 0.0
        self.head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator):
        idx = rng.integers(self.size, size=batch_size)
        return (self.obs[idx], self.actions[idx], self.rewards[idx],
                self.next_obs[idx], self.dones[idx])

    def __len__(self):
        return self.size


@dataclass
class DqnConfig:
    buffer_capacity: int = 100_000
    batch_size: int = 128
    gamma: float = 0.99
    lr: float = 1e-3
    tau: float = 0.005
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 6000
    warmup_steps: int = 1000
    episodes: int = 1500
    checkpoint_every: int = 250
    seed: int = 0


def update_step(qnet: nn.Mlp, target_net: nn.Mlp, batch, optimizer: nn.Adam,
                gamma=0.99, tau=0.005) -> float:
    """One Bellman regression step on the taken actions, then a soft update.

    Targets are r + gamma * max_a' Q_target(s', a') for non-terminal
    transitions and r alone for terminal ones.
    """
    obs, actions, rewards, next_obs, dones = batch
    a_idx = actions[:, 0].astype(int)
    q_next = target_net.forward(next_obs).max(axis=1)
    y = rewards + gamma * (1.0 - dones) * q_next

    qnet.zero_grads()
    q_all, cache = qnet.forward(obs, want_cache=True)
    rows = np.arange(obs.shape[0])
    taken = q_all[rows, a_idx]
    diff = taken - y
    loss = float(np.mean(diff * diff))
    if not np.isfinite(loss):
        raise FloatingPointError("DQN loss diverged")
    dq = np.zeros_like(q_all)
    dq[rows, a_idx] = 2.0 * diff / obs.shape[0]
    qnet.backward(dq, cache)
    optimizer.step(qnet.grads())
    nn.polyak_update(target_net.params(), qnet.params(), tau)
    return loss


def greedy_policy(qnet: nn.Mlp):
    def policy(obs: np.ndarray) -> ActionDelta:
        q = qnet.forward(obs[None])[0]
        return index_to_action(int(np.argmax(q)))
    return policy


def train_dqn(env, config: DqnConfig | None = None, out_dir=None,
              progress=None) -> tuple[nn.Mlp, list[dict]]:
    """Full training loop against a training-mode environment.

    The env supplies goal sampling and tip noise; this loop owns exploration,
    the replay buffer, and updates (one per environment step after warmup).
    Deterministic for a fixed seed and env rng state.
    """
    config = config or DqnConfig()
    rng = np.random.default_rng(config.seed)
    qnet = make_qnet(rng)
    target_net = make_qnet(rng)
    nn.assign_params(target_net.params(), nn.copy_params(qnet.params()))
    optimizer = nn.Adam(qnet.params(), lr=config.lr)
    buffer = ReplayBuffer(config.buffer_capacity)

    # Warmup: random actions only, no updates.
    obs = env.reset()
    for _ in range(config.warmup_steps):
        a_idx = int(rng.integers(N_ACTIONS))
        next_obs, reward, done, info = env.step(index_to_action(a_idx))
        buffer.add(obs, a_idx, reward, next_obs, done)
        obs = env.reset() if done else next_obs

    log = []
    global_step = 0
    for episode in range(1, config.episodes + 1):
        obs = env.reset()
        ep_return = 0.0
        ep_loss = 0.0
        steps = 0
        done = False
        while not done:
            eps = epsilon_at(global_step, config.eps_start, config.eps_end,
                             config.eps_decay_steps)
            a_idx = select_action(qnet, obs, eps, rng)
            next_obs, reward, done, info = env.step(index_to_action(a_idx))
            buffer.add(obs, a_idx, reward, next_obs, done)
            obs = next_obs
            batch = buffer.sample(config.batch_size, rng)
            ep_loss += update_step(qnet, target_net, batch, optimizer,
                                   config.gamma, config.tau)
            ep_return += reward
            steps += 1
            global_step += 1
        log.append({"episode": episode, "return": ep_return, "steps": steps,
                    "epsilon": epsilon_at(global_step, config.eps_start,
                                          config.eps_end, config.eps_decay_steps),
                    "loss": ep_loss / steps})
        if progress and episode % progress == 0:
            print(f"[dqn] episode {episode}/{config.episodes} "
                  f"return={ep_return:.1f} steps={steps}", flush=True)
        if out_dir and config.checkpoint_every and \
                episode % config.checkpoint_every == 0:
            nn.save_checkpoint(Path(out_dir) / f"qnet_ep{episode:05d}",
                               qnet.params(), {"episode": episode})

    if out_dir:
        out_dir = Path(out_dir)
        nn.save_checkpoint(out_dir / "qnet", qnet.params(),
                           {"episodes": config.episodes})
        write_training_log(out_dir / "training_log.csv", log)
    return qnet, log


def write_training_log(path, log: list[dict]):
    if not log:
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(log[0].keys()))
        writer.writeheader()
        for row in log:
            writer.writerow({k: repr(v) if isinstance(v, float) else v
                             for k, v in row.items()})


def load_qnet(base_path) -> nn.Mlp:
    params, _ = nn.load_checkpoint(base_path)
    qnet = make_qnet(np.random.default_rng(0))
    nn.assign_params(qnet.params(), params)
    return qnet
