"""Actor-critic controller with twin critics, target policy smoothing, and
delayed policy updates, over the continuous +/-5 degree action box."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .core import ACTION_LIMIT, ActionDelta
from .dqn import ReplayBuffer, write_training_log

OBS_DIM = 4
ACT_DIM = 2


@dataclass
class Td3Config:
    buffer_capacity: int = 200_000
    batch_size: int = 256
    gamma: float = 0.99
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    tau: float = 0.005
    policy_delay: int = 2
    expl_sigma_start: float = 1.0    # degrees
    expl_sigma_end: float = 0.1
    smooth_sigma: float = 0.25       # degrees, target policy smoothing
    smooth_clip: float = 0.5
    warmup_steps: int = 1000
    episodes: int = 600
    seed: int = 0

    def __post_init__(self):
        if self.policy_delay < 1:
            raise ValueError("policy_delay must be >= 1")
        if min(self.expl_sigma_start, self.expl_sigma_end, self.smooth_sigma) < 0:
            raise ValueError("noise scales must be non-negative")


def make_actor(rng: np.random.Generator) -> nn.Mlp:
    return nn.Mlp([OBS_DIM, 256, 256, ACT_DIM], ["relu", "relu", "tanh"], rng)


def make_critic(rng: np.random.Generator) -> nn.Mlp:
    return nn.Mlp([OBS_DIM + ACT_DIM, 256, 256, 1], ["relu", "relu", "linear"], rng)


def actor_forward(actor: nn.Mlp, obs: np.ndarray, want_cache=False):
    """Actor output scaled from tanh to the +/-5 degree action box."""
    if want_cache:
        raw, cache = actor.forward(obs, want_cache=True)
        return ACTION_LIMIT * raw, cache
    return ACTION_LIMIT * actor.forward(obs)


def policy_action(actor: nn.Mlp, obs: np.ndarray, sigma: float,
                  rng: np.random.Generator | None = None) -> ActionDelta:
    """Deterministic actor output plus exploration noise, clipped to the box."""
    a = actor_forward(actor, obs[None])[0]
    if sigma > 0.0:
        a = a + rng.normal(0.0, sigma, size=ACT_DIM)
    a = np.clip(a, -ACTION_LIMIT, ACTION_LIMIT)
    return ActionDelta(float(a[0]), float(a[1]))


def smoothed_target_action(target_actor: nn.Mlp, next_obs: np.ndarray,
                           rng: np.random.Generator, sigma=0.25,
                           clip=0.5) -> np.ndarray:
    """Target action with clipped Gaussian smoothing noise, then box clip."""
    a = actor_forward(target_actor, next_obs)
    noise = np.clip(rng.normal(0.0, sigma, size=a.shape), -clip, clip)
    return np.clip(a + noise, -ACTION_LIMIT, ACTION_LIMIT)


def critic_target(target_q1: nn.Mlp, target_q2: nn.Mlp, rewards, next_obs,
                  next_actions, dones, gamma=0.99) -> np.ndarray:
    """Bellman target with the element-wise minimum of the twin critics."""
    x = np.concatenate([next_obs, next_actions], axis=1)
    q1 = target_q1.forward(x)[:, 0]
    q2 = target_q2.forward(x)[:, 0]
    return rewards + gamma * (1.0 - dones) * np.minimum(q1, q2)


class Td3Agent:
    """Networks, targets, and optimizers for one training run."""

    def __init__(self, config: Td3Config | None = None,
                 rng: np.random.Generator | None = None):
        self.config = config or Td3Config()
        rng = rng or np.random.default_rng(self.config.seed)
        self.actor = make_actor(rng)
        self.q1 = make_critic(rng)
        self.q2 = make_critic(rng)
        self.target_actor = make_actor(rng)
        self.target_q1 = make_critic(rng)
        self.target_q2 = make_critic(rng)
        for tgt, src in ((self.target_actor, self.actor),
                         (self.target_q1, self.q1), (self.target_q2, self.q2)):
            nn.assign_params(tgt.params(), nn.copy_params(src.params()))
        self.actor_opt = nn.Adam(self.actor.params(), lr=self.config.actor_lr)
        self.q1_opt = nn.Adam(self.q1.params(), lr=self.config.critic_lr)
        self.q2_opt = nn.Adam(self.q2.params(), lr=self.config.critic_lr)
        self.update_counter = 0

    def update(self, batch, rng: np.random.Generator) -> dict:
        """One critic regression; every `policy_delay`-th call also updates
        the actor (ascending Q1) and all three target networks."""
        cfg = self.config
        obs, actions, rewards, next_obs, dones = batch
        next_a = smoothed_target_action(self.target_actor, next_obs, rng,
                                        cfg.smooth_sigma, cfg.smooth_clip)
        y = critic_target(self.target_q1, self.target_q2, rewards, next_obs,
                          next_a, dones, cfg.gamma)

        x = np.concatenate([obs, actions], axis=1)
        losses = {}
        for name, critic, opt in (("q1", self.q1, self.q1_opt),
                                  ("q2", self.q2, self.q2_opt)):
            critic.zero_grads()
            q, cache = critic.forward(x, want_cache=True)
            diff = q[:, 0] - y
            loss = float(np.mean(diff * diff))
            if not np.isfinite(loss):
                raise FloatingPointError(f"TD3 {name} loss diverged")
            critic.backward((2.0 * diff / diff.size)[:, None], cache)
            opt.step(critic.grads())
            losses[f"{name}_loss"] = loss

        self.update_counter += 1
        if self.update_counter % cfg.policy_delay == 0:
            losses["actor_loss"] = self._actor_update(obs)
            nn.polyak_update(self.target_actor.params(), self.actor.params(), cfg.tau)
            nn.polyak_update(self.target_q1.params(), self.q1.params(), cfg.tau)
            nn.polyak_update(self.target_q2.params(), self.q2.params(), cfg.tau)
        return losses

    def _actor_update(self, obs) -> float:
        """Gradient ascent on mean Q1(s, actor(s)) through the action input."""
        self.actor.zero_grads()
        a, actor_cache = actor_forward(self.actor, obs, want_cache=True)
        x = np.concatenate([obs, a], axis=1)
        self.q1.zero_grads()
        q, q_cache = self.q1.forward(x, want_cache=True)
        actor_loss = float(-np.mean(q))
        dq = np.full_like(q, -1.0 / q.size)
        dx = self.q1.backward(dq, q_cache)
        self.q1.zero_grads()  # critic weights are not updated by the actor step
        da = dx[:, OBS_DIM:] * ACTION_LIMIT
        self.actor.backward(da, actor_cache)
        self.actor_opt.step(self.actor.grads())
        return actor_loss

    def policy(self):
        def act(obs: np.ndarray) -> ActionDelta:
            a = actor_forward(self.actor, obs[None])[0]
            return ActionDelta(float(a[0]), float(a[1]))
        return act

    def save(self, out_dir):
        out_dir = Path(out_dir)
        nn.save_checkpoint(out_dir / "actor", self.actor.params(), {})
        nn.save_checkpoint(out_dir / "critic1", self.q1.params(), {})
        nn.save_checkpoint(out_dir / "critic2", self.q2.params(), {})
        nn.save_checkpoint(out_dir / "target_actor", self.target_actor.params(), {})
        nn.save_checkpoint(out_dir / "target_critic1", self.target_q1.params(), {})
        nn.save_checkpoint(out_dir / "target_critic2", self.target_q2.params(), {})

    @classmethod
    def load(cls, out_dir, config: Td3Config | None = None) -> "Td3Agent":
        agent = cls(config)
        out_dir = Path(out_dir)
        for net, name in ((agent.actor, "actor"), (agent.q1, "critic1"),
                          (agent.q2, "critic2"),
                          (agent.target_actor, "target_actor"),
                          (agent.target_q1, "target_critic1"),
                          (agent.target_q2, "target_critic2")):
            params, _ = nn.load_checkpoint(out_dir / name)
            nn.assign_params(net.params(), params)
        return agent


def exploration_sigma(episode: int, total_episodes: int, start=1.0, end=0.1) -> float:
    """Linear per-episode decay of the exploration noise scale."""
    if total_episodes <= 1:
        return end
    frac = min(max((episode - 1) / (total_episodes - 1), 0.0), 1.0)
    return start + frac * (end - start)


def train_td3(env, config: Td3Config | None = None, out_dir=None,
              progress=None) -> tuple[Td3Agent, list[dict]]:
    """Training loop: uniform-random warmup, then one update per env step."""
    config = config or Td3Config()
    rng = np.random.default_rng(config.seed)
    agent = Td3Agent(config, rng)
    buffer = ReplayBuffer(config.buffer_capacity, OBS_DIM, ACT_DIM)

    obs = env.reset()
    for _ in range(config.warmup_steps):
        a = rng.uniform(-ACTION_LIMIT, ACTION_LIMIT, size=ACT_DIM)
        next_obs, reward, done, info = env.step(ActionDelta(*a))
        buffer.add(obs, a, reward, next_obs, done)
        obs = env.reset() if done else next_obs

    log = []
    for episode in range(1, config.episodes + 1):
        sigma = exploration_sigma(episode, config.episodes,
                                  config.expl_sigma_start, config.expl_sigma_end)
        obs = env.reset()
        ep_return = 0.0
        steps = 0
        done = False
        last_losses = {}
        while not done:
            action = policy_action(agent.actor, obs, sigma, rng)
            next_obs, reward, done, info = env.step(action)
            buffer.add(obs, (action.dtheta1, action.dtheta3), reward,
                       next_obs, done)
            obs = next_obs
            batch = buffer.sample(config.batch_size, rng)
            last_losses = agent.update(batch, rng)
            ep_return += reward
            steps += 1
        log.append({"episode": episode, "return": ep_return, "steps": steps,
                    "sigma": sigma,
                    "critic_loss": last_losses.get("q1_loss", float("nan"))})
        if progress and episode % progress == 0:
            print(f"[td3] episode {episode}/{config.episodes} "
                  f"return={ep_return:.1f} steps={steps}", flush=True)

    if out_dir:
        out_dir = Path(out_dir)
        agent.save(out_dir)
        write_training_log(out_dir / "training_log.csv", log)
    return agent, log
