import math

import numpy as np
import pytest

from magcath.core import ServoAngles, clip_and_couple
from magcath.plant import (PlantParams, PlantState, equilibrium_tip,
                           plant_step, rest_state, simulate)


def angles(t1, t3):
    return clip_and_couple(t1, t3)


def run_sweep(params, start, end, rate=20.0, theta3=40.0, dt=0.1, hold_steps=0):
    """Ramp theta1 from rest at `start` to `end`; returns (final tip, final state)."""
    n = math.ceil(abs(end - start) / rate / dt) + 1
    direction = 1.0 if end > start else -1.0
    cmds = []
    for i in range(n):
        t1 = start + direction * rate * i * dt
        t1 = min(t1, end) if direction > 0 else max(t1, end)
        cmds.append(angles(t1, theta3))
    cmds.extend([angles(end, theta3)] * hold_steps)
    tips, state = simulate(rest_state(cmds[0]), cmds, params)
    return tips[-1], state


class TestEquilibriumTip:
    def test_neutral(self, default_params):
        tip = equilibrium_tip(0.0, 0.0, 0.0, default_params)
        assert (tip.x, tip.y) == (20.0, 0.0)

    def test_bent_inserted(self, default_params):
        # r = 20 + 0.26*40 = 30.4, phi = 0.6*(-45) = -27 deg
        tip = equilibrium_tip(-45.0, 40.0, 0.0, default_params)
        assert tip.x == pytest.approx(27.09, abs=0.01)
        assert tip.y == pytest.approx(-13.80, abs=0.01)

    def test_hysteretic_offset(self, default_params):
        # phi = 0.6*(-45 + 0.8*10) = -22.2 deg
        tip = equilibrium_tip(-45.0, 40.0, 10.0, default_params)
        assert tip.x == pytest.approx(28.14, abs=0.01)
        assert tip.y == pytest.approx(-11.49, abs=0.01)


class TestPlantStep:
    def test_rest_is_fixed_point(self, default_params):
        cmd = angles(0.0, 0.0)
        state = rest_state(cmd)
        new_state, tip = plant_step(state, cmd, default_params, dt=0.1)
        assert tip.x == pytest.approx(20.0, abs=1e-12)
        assert tip.y == pytest.approx(0.0, abs=1e-12)
        assert new_state.z == 0.0

    def test_invalid_dt(self, default_params):
        state = rest_state(angles(0.0, 0.0))
        with pytest.raises(ValueError):
            plant_step(state, angles(0.0, 0.0), default_params, dt=0.0)

    def test_z_bounded(self, default_params):
        # Protocol-scale steps (<= 60 deg per sample) never push |z| past the
        # closed-form bound.
        state = rest_state(angles(-60.0, 40.0))
        rng = np.random.default_rng(3)
        z_max = default_params.z_max
        for _ in range(400):
            jump = rng.uniform(-60.0, 60.0)
            cmd = angles(state.angles.theta1 + jump, 40.0)
            state, _ = plant_step(state, cmd, default_params)
            assert abs(state.z) <= z_max * (1.0 + 1e-9)

    def test_extreme_jump_rejected(self, default_params):
        # A full-range instantaneous jump exceeds what the fixed sub-step
        # integrator can track; the step must fail loudly, not corrupt z.
        state = rest_state(angles(-175.0, 40.0))
        with pytest.raises(RuntimeError):
            for _ in range(5):
                state, _ = plant_step(state, angles(85.0, 40.0), default_params)

    def test_param_validation(self):
        with pytest.raises(ValueError):
            PlantParams(tau_s=0.0)
        with pytest.raises(ValueError):
            PlantParams(beta_bw=0.0, gamma_bw=0.0)
        with pytest.raises(ValueError):
            PlantParams(substeps=0)

    def test_z_max_formula(self):
        assert PlantParams().z_max == pytest.approx(10.0)
        assert PlantParams(beta_bw=0.03, gamma_bw=0.05).z_max == pytest.approx(12.5)


class TestSimulate:
    def test_converges_to_equilibrium(self, default_params):
        # Hold >= 30 tau at a fixed command; final tip matches the closed form
        # evaluated at the settled hysteresis state.
        hold = int(30 * default_params.tau_s / 0.1) + 1
        cmds = [angles(-45.0, 40.0)] * hold
        tips, state = simulate(rest_state(angles(0.0, 0.0)), cmds, default_params)
        eq = equilibrium_tip(-45.0, 40.0, state.z, default_params)
        assert abs(tips[-1, 0] - eq.x) < 0.01
        assert abs(tips[-1, 1] - eq.y) < 0.01

    def test_deterministic_without_noise(self, default_params):
        cmds = [angles(10.0 * math.sin(0.3 * i), 20.0) for i in range(50)]
        t1, _ = simulate(rest_state(cmds[0]), cmds, default_params)
        t2, _ = simulate(rest_state(cmds[0]), cmds, default_params)
        assert np.array_equal(t1, t2)

    def test_noise_deterministic_under_seed(self):
        params = PlantParams(output_noise_sigma=0.1)
        cmds = [angles(5.0 * i, 0.0) for i in range(10)]
        t1, _ = simulate(rest_state(cmds[0]), cmds, params,
                         rng=np.random.default_rng(7))
        t2, _ = simulate(rest_state(cmds[0]), cmds, params,
                         rng=np.random.default_rng(7))
        assert np.array_equal(t1, t2)

    def test_empty_commands_rejected(self, default_params):
        with pytest.raises(ValueError):
            simulate(rest_state(angles(0, 0)), [], default_params)

    def test_radius_matches_insertion_at_equilibrium(self, default_params):
        hold = int(30 * default_params.tau_s / 0.1)
        for theta3 in (0.0, 24.0, 64.0, 88.0):
            cmds = [angles(-30.0, theta3)] * hold
            tips, _ = simulate(rest_state(cmds[0]), cmds, default_params)
            r = math.hypot(tips[-1, 0], tips[-1, 1])
            assert r == pytest.approx(default_params.r0
                                      + default_params.k_r * theta3, abs=1e-6)


class TestHysteresis:
    def test_branch_separation_at_least_1p5mm(self, default_params):
        fwd, _ = run_sweep(default_params, -175.0, -45.0)
        rev, _ = run_sweep(default_params, 85.0, -45.0)
        sep = math.hypot(fwd[0] - rev[0], fwd[1] - rev[1])
        assert sep >= 1.5

    def test_no_hysteresis_branches_coincide(self):
        params = PlantParams(k_h=0.0)
        settle = int(5 * params.tau_s / 0.1) + 1
        fwd, _ = run_sweep(params, -175.0, -45.0, hold_steps=settle)
        rev, _ = run_sweep(params, 85.0, -45.0, hold_steps=settle)
        sep = math.hypot(fwd[0] - rev[0], fwd[1] - rev[1])
        assert sep <= 0.05

    def test_sinusoid_closes_a_loop(self, default_params):
        # Rising vs falling crossings of the same angle give different tips.
        cmds = []
        for i in range(200):
            t = i * 0.1
            cmds.append(angles(60.0 * math.sin(2.0 * math.pi * 0.5 * t), 40.0))
        tips, _ = simulate(rest_state(cmds[0]), cmds, default_params)
        th1 = np.array([c.theta1 for c in cmds])
        rising = [i for i in range(2, 200) if th1[i - 1] < -45.0 <= th1[i]]
        falling = [i for i in range(2, 200) if th1[i - 1] > -45.0 >= th1[i]]
        assert rising and falling
        d = math.hypot(tips[rising[-1], 0] - tips[falling[-1], 0],
                       tips[rising[-1], 1] - tips[falling[-1], 1])
        assert d > 0.5
