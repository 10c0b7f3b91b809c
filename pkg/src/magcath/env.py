"""Goal-conditioned control environment around a tip-prediction backend.

The environment keeps the commanded servo angles and a rolling 10-step window
of normalized commands. Each step shifts the window, asks the backend (the
trained surrogate or the plant itself) for the tip, and scores the move with
a distance-plus-effort penalty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import plant as plant_mod
from .core import (THETA1_RANGE, THETA3_RANGE, ActionDelta, MinMaxScaler,
                   ServoAngles, clip_and_couple)
from .protocol import WINDOW
from .surrogate import SurrogateModel

LAMBDA_EFFORT = 5e-3
WORKSPACE_X = (-20.0, 45.0)
WORKSPACE_Y = (-45.0, 40.0)


def workspace_scaler(x_range=WORKSPACE_X, y_range=WORKSPACE_Y) -> MinMaxScaler:
    return MinMaxScaler([x_range[0], y_range[0]], [x_range[1], y_range[1]])


def angle_range_scaler() -> MinMaxScaler:
    """Scaler over the full commandable angle ranges (fallback when no
    surrogate scaler is available)."""
    return MinMaxScaler(
        [THETA1_RANGE[0], THETA1_RANGE[0] + 180.0, THETA3_RANGE[0]],
        [THETA1_RANGE[1], THETA1_RANGE[1] + 180.0, THETA3_RANGE[1]],
    )


def compute_reward(tip, goal, action: ActionDelta, lam: float = LAMBDA_EFFORT) -> float:
    """Negative goal distance (mm) minus an effort penalty on all three servo
    increments; the theta2 increment equals the theta1 increment, so theta1
    effort counts twice."""
    dist = math.hypot(tip[0] - goal[0], tip[1] - goal[1])
    effort = 2.0 * abs(action.dtheta1) + abs(action.dtheta3)
    return -dist - lam * effort


def check_termination(tip, goal, step: int, epsilon: float, t_max: int) -> str:
    """Episode outcome so far: "goal", "timeout", or "none".

    Reaching the goal takes precedence when both conditions hold at once.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    dist = math.hypot(tip[0] - goal[0], tip[1] - goal[1])
    if dist < epsilon:
        return "goal"
    if step >= t_max:
        return "timeout"
    return "none"


def sample_goal(rng: np.random.Generator, params: plant_mod.PlantParams,
                radial_margin: float = 1.0, angular_margin: float = 1.0):
    """Uniform goal inside the reachable annulus sector (at equilibrium)."""
    r_lo = params.r0 + radial_margin
    r_hi = params.r0 + params.k_r * THETA3_RANGE[1] - radial_margin
    phi_lo = params.k_phi * THETA1_RANGE[0] + params.phi0 + angular_margin
    phi_hi = params.k_phi * THETA1_RANGE[1] + params.phi0 - angular_margin
    r = rng.uniform(r_lo, r_hi)
    phi = math.radians(rng.uniform(phi_lo, phi_hi))
    return (r * math.cos(phi), r * math.sin(phi))


def goal_reachable(goal, params: plant_mod.PlantParams, tol: float = 1e-9) -> bool:
    r = math.hypot(goal[0], goal[1])
    if not (params.r0 - tol <= r <= params.r0 + params.k_r * THETA3_RANGE[1] + tol):
        return False
    phi = math.degrees(math.atan2(goal[1], goal[0]))
    phi_lo = params.k_phi * THETA1_RANGE[0] + params.phi0
    phi_hi = params.k_phi * THETA1_RANGE[1] + params.phi0
    return phi_lo - tol <= phi <= phi_hi + tol


def equilibrium_angles_for(goal, params: plant_mod.PlantParams) -> ServoAngles:
    """Servo angles whose settled, memory-free tip sits on `goal`."""
    r = math.hypot(goal[0], goal[1])
    phi = math.degrees(math.atan2(goal[1], goal[0]))
    theta1 = (phi - params.phi0) / params.k_phi
    theta3 = (r - params.r0) / params.k_r
    return clip_and_couple(theta1, theta3)


class SurrogateBackend:
    """Window-to-tip prediction through the trained sequence model.

    The tip is the final element of the predicted 10-step sequence.
    """

    def __init__(self, model: SurrogateModel):
        self.model = model
        self.input_scaler = model.input_scaler

    def reset(self, angles: ServoAngles, window_norm: np.ndarray):
        return self._predict(window_norm)

    def advance(self, command: ServoAngles, window_norm: np.ndarray):
        return self._predict(window_norm)

    def _predict(self, window_norm):
        pred = self.model.predict_normalized(window_norm[None])[0]
        tip = self.model.output_scaler.inverse(pred[-1])
        return float(tip[0]), float(tip[1])


class PlantBackend:
    """Ground-truth stepping through the synthetic plant."""

    def __init__(self, params: plant_mod.PlantParams):
        self.params = params
        self.input_scaler = angle_range_scaler()
        self.state = None

    def reset(self, angles: ServoAngles, window_norm: np.ndarray):
        self.state = plant_mod.rest_state(angles)
        tip = plant_mod.equilibrium_tip(angles.theta1, angles.theta3, 0.0,
                                        self.params)
        return (tip.x, tip.y)

    def advance(self, command: ServoAngles, window_norm: np.ndarray):
        self.state, tip = plant_mod.plant_step(self.state, command, self.params)
        return (tip.x, tip.y)


@dataclass
class EpisodeConfig:
    epsilon: float = 0.5          # goal tolerance, mm
    t_max: int = 150              # steps per episode
    noise_sigma: float = 0.0      # tip observation noise during training, mm
    lam: float = LAMBDA_EFFORT
    padding: str = "zero"         # "zero" (window starts empty) or "warm"


class CatheterEnv:
    """Regulation environment: observation [x, y, x_goal, y_goal] in [0, 1]."""

    def __init__(self, backend, params: plant_mod.PlantParams,
                 config: EpisodeConfig | None = None,
                 rng: np.random.Generator | None = None,
                 scaler: MinMaxScaler | None = None):
        self.backend = backend
        self.params = params
        self.config = config or EpisodeConfig()
        if self.config.padding not in ("zero", "warm"):
            raise ValueError(f"unknown padding mode {self.config.padding!r}")
        self.rng = rng or np.random.default_rng()
        self.scaler = scaler or workspace_scaler()
        self.angles = None
        self.window = None
        self.goal = None
        self.tip = None
        self.step_count = 0

    # -- episode control ------------------------------------------------

    def reset(self, goal=None, init_angles: ServoAngles | None = None):
        """Start an episode; random picks are drawn from the env rng."""
        if init_angles is None:
            theta1 = self.rng.uniform(*THETA1_RANGE)
            theta3 = self.rng.uniform(*THETA3_RANGE)
            init_angles = clip_and_couple(theta1, theta3)
        if goal is None:
            goal = sample_goal(self.rng, self.params)
        elif not goal_reachable(goal, self.params):
            raise ValueError(f"goal {goal} outside the reachable workspace annulus")
        self.goal = (float(goal[0]), float(goal[1]))
        self.angles = init_angles
        self.step_count = 0

        norm_cmd = self.backend.input_scaler.transform(init_angles.as_array())
        if self.config.padding == "warm":
            self.window = np.tile(norm_cmd, (WINDOW, 1))
        else:
            self.window = np.zeros((WINDOW, 3))
            self.window[-1] = norm_cmd
        tip = self.backend.reset(init_angles, self.window)
        self.tip = self._observe_tip(tip)
        return self.observation()

    def set_goal(self, goal):
        """Retarget mid-episode (used by the waypoint follower)."""
        if not goal_reachable(goal, self.params):
            raise ValueError(f"goal {goal} outside the reachable workspace annulus")
        self.goal = (float(goal[0]), float(goal[1]))

    def step(self, action):
        if not isinstance(action, ActionDelta):
            action = ActionDelta(float(action[0]), float(action[1]))
        action = action.clipped()
        self.angles = clip_and_couple(self.angles.theta1 + action.dtheta1,
                                      self.angles.theta3 + action.dtheta3)
        norm_cmd = self.backend.input_scaler.transform(self.angles.as_array())
        self.window = np.vstack([self.window[1:], norm_cmd])
        tip = self.backend.advance(self.angles, self.window)
        self.tip = self._observe_tip(tip)
        self.step_count += 1
        reward = compute_reward(self.tip, self.goal, action, self.config.lam)
        reason = check_termination(self.tip, self.goal, self.step_count,
                                   self.config.epsilon, self.config.t_max)
        info = {
            "tip": self.tip,
            "distance": math.hypot(self.tip[0] - self.goal[0],
                                   self.tip[1] - self.goal[1]),
            "reason": reason,
            "step": self.step_count,
            "angles": self.angles,
        }
        return self.observation(), reward, reason != "none", info

    # -- helpers ----------------------------------------------------------

    def _observe_tip(self, tip):
        if self.config.noise_sigma > 0.0:
            noise = self.rng.normal(0.0, self.config.noise_sigma, size=2)
            return (tip[0] + noise[0], tip[1] + noise[1])
        return (float(tip[0]), float(tip[1]))

    def observation(self) -> np.ndarray:
        tip_n = self.scaler.transform(np.asarray(self.tip))
        goal_n = self.scaler.transform(np.asarray(self.goal))
        return np.concatenate([tip_n, goal_n])
