"""Synthetic ground-truth plant for the magnetic catheter rig.

First-order servo lag drives the actual angles toward the commanded ones; a
Bouc-Wen state on the steering angle supplies rate-independent hysteresis;
polar kinematics map (theta1, theta3, z) to the planar tip position.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import THETA2_OFFSET, ServoAngles, TipPosition

DT_DEFAULT = 0.1  # 10 Hz sample period, seconds


@dataclass(frozen=True)
class PlantParams:
    tau_s: float = 0.15        # servo lag time constant, s
    a_bw: float = 1.0          # Bouc-Wen A
    beta_bw: float = 0.05      # Bouc-Wen beta, 1/deg
    gamma_bw: float = 0.05     # Bouc-Wen gamma, 1/deg
    k_h: float = 0.8           # hysteresis contribution of z to the bend angle
    k_phi: float = 0.6         # bend gain, deg tip angle per deg servo
    phi0: float = 0.0          # bend offset, deg
    r0: float = 20.0           # tip radius at zero insertion, mm
    k_r: float = 0.26          # insertion gain, mm/deg
    substeps: int = 10         # Euler sub-steps per sample
    output_noise_sigma: float = 0.0  # mm, per axis

    def __post_init__(self):
        if self.tau_s <= 0:
            raise ValueError("tau_s must be positive")
        if self.beta_bw + self.gamma_bw <= 0:
            raise ValueError("beta_bw + gamma_bw must be positive")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if self.r0 <= 0 or self.k_r < 0:
            raise ValueError("r0 must be positive and k_r non-negative")
        if self.output_noise_sigma < 0:
            raise ValueError("output_noise_sigma must be non-negative")

    @property
    def z_max(self) -> float:
        """Bound on |z| for the first-order Bouc-Wen form."""
        return self.a_bw / (self.beta_bw + self.gamma_bw)


@dataclass(frozen=True)
class PlantState:
    angles: ServoAngles        # actual (lagged) servo angles
    z: float = 0.0             # hysteresis internal state, deg


def rest_state(command: ServoAngles) -> PlantState:
    """State with the servos settled on `command` and no hysteresis memory."""
    return PlantState(angles=command, z=0.0)


def equilibrium_tip(theta1: float, theta3: float, z: float,
                    params: PlantParams) -> TipPosition:
    """Closed-form tip with frozen hysteresis state (the v -> 0 fixed point)."""
    phi = math.radians(params.k_phi * (theta1 + params.k_h * z) + params.phi0)
    r = params.r0 + params.k_r * theta3
    return TipPosition(r * math.cos(phi), r * math.sin(phi))


def plant_step(state: PlantState, command: ServoAngles, params: PlantParams,
               dt: float = DT_DEFAULT, rng: np.random.Generator | None = None
               ) -> tuple[PlantState, TipPosition]:
    """Advance the plant one sample period under `command`.

    Integrates the lag and Bouc-Wen dynamics with `params.substeps` explicit
    Euler sub-steps, then evaluates the tip kinematics. Gaussian output noise
    is added when `params.output_noise_sigma` > 0 and an rng is supplied.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    th1 = state.angles.theta1
    th3 = state.angles.theta3
    z = state.z
    c1 = command.theta1
    c3 = command.theta3
    h = dt / params.substeps
    z_bound = params.z_max * (1.0 + 1e-9)
    for _ in range(params.substeps):
        th1 += (h / params.tau_s) * (c1 - th1)
        th3 += (h / params.tau_s) * (c3 - th3)
        v = (c1 - th1) / params.tau_s
        z += h * (params.a_bw * v
                  - params.beta_bw * abs(v) * z
                  - params.gamma_bw * v * abs(z))
        if abs(z) > z_bound:
            raise RuntimeError(
                f"hysteresis state |z|={abs(z):.6g} exceeded bound {params.z_max:.6g}; "
                "command rate too large for the sub-step size"
            )
    tip = equilibrium_tip(th1, th3, z, params)
    if params.output_noise_sigma > 0.0 and rng is not None:
        noise = rng.normal(0.0, params.output_noise_sigma, size=2)
        tip = TipPosition(tip.x + noise[0], tip.y + noise[1])
    # Lagged angles stay inside the commanded range (convex combination), so
    # the coupled triple can be formed directly.
    new_state = PlantState(angles=ServoAngles(th1, th1 + THETA2_OFFSET, th3), z=z)
    return new_state, tip


def simulate(initial: PlantState, commands, params: PlantParams,
             dt: float = DT_DEFAULT, rng: np.random.Generator | None = None
             ) -> tuple[np.ndarray, PlantState]:
    """Fold plant_step over a command sequence.

    `commands` is a sequence of ServoAngles or an array [n, 3]. Returns the
    tip positions as an array [n, 2] (mm) and the final state.
    """
    cmds = list(commands)
    if len(cmds) == 0:
        raise ValueError("command sequence must be non-empty")
    tips = np.empty((len(cmds), 2), dtype=float)
    state = initial
    for i, cmd in enumerate(cmds):
        if not isinstance(cmd, ServoAngles):
            cmd = ServoAngles(float(cmd[0]), float(cmd[1]), float(cmd[2]))
        state, tip = plant_step(state, cmd, params, dt=dt, rng=rng)
        tips[i, 0] = tip.x
        tips[i, 1] = tip.y
    return tips, state
