"""Excitation profiles, data acquisition against the plant, CSV persistence,
and windowed dataset construction for surrogate training."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import plant as plant_mod
from .core import (THETA1_RANGE, THETA2_OFFSET, THETA3_RANGE, MinMaxScaler,
                   ServoAngles, clip_and_couple, fit_scaler)

DT = 0.1
WINDOW = 10
CSV_HEADER = ["timestamp", "Servo1", "Servo2", "Servo3", "X", "Y"]

SWEEP_RATE_RANGE = (10.0, 30.0)
SINUSOID_AMP_RANGE = (30.0, 90.0)
SINUSOID_FREQ_RANGE = (0.1, 1.0)
STEP_SIZES = (10.0, 30.0, 60.0)
THETA3_DISCRETE = tuple(float(v) for v in range(0, 89, 8))  # 0, 8, ..., 88
THETA3_RATE_RANGE = (10.0, 50.0)


class ProtocolError(ValueError):
    """Profile parameters outside the acquisition protocol."""


def _protocol_check(ok: bool, message: str, strict: bool):
    if ok:
        return
    if strict:
        raise ProtocolError(message)
    warnings.warn(message, stacklevel=3)


@dataclass
class TrajectoryTrial:
    """One acquisition run: commanded angles and measured tips at 10 Hz."""

    trial_id: str
    dt: float
    timestamps: np.ndarray   # [n] seconds
    angles: np.ndarray       # [n, 3] commanded servo angles, deg
    tips: np.ndarray         # [n, 2] tip position, mm
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float)
        self.angles = np.asarray(self.angles, dtype=float)
        self.tips = np.asarray(self.tips, dtype=float)
        n = self.timestamps.size
        if self.angles.shape != (n, 3) or self.tips.shape != (n, 2):
            raise ValueError(f"trial {self.trial_id}: inconsistent array shapes")
        if n >= 2:
            gaps = np.diff(self.timestamps)
            if np.any(gaps <= 0) or np.any(np.abs(gaps - self.dt) > 1e-9):
                raise ValueError(f"trial {self.trial_id}: timestamps not uniform at dt")
        coupling = self.angles[:, 1] - self.angles[:, 0]
        if np.any(np.abs(coupling - THETA2_OFFSET) > 1e-9):
            raise ValueError(f"trial {self.trial_id}: theta2 coupling violated")

    def __len__(self):
        return self.timestamps.size


def gen_linear_sweep(start: float, end: float, rate: float,
                     dt: float = DT, strict: bool = False) -> np.ndarray:
    """Constant-rate ramp of theta1 from `start` to `end`, sampled at 10 Hz.

    The last sample is clamped at `end`, so the series always reaches the
    target exactly even when the travel time is not a multiple of dt.
    """
    if rate <= 0:
        raise ValueError("sweep rate must be positive")
    if start == end:
        raise ValueError("sweep start and end must differ")
    _protocol_check(SWEEP_RATE_RANGE[0] <= rate <= SWEEP_RATE_RANGE[1],
                    f"sweep rate {rate} deg/s outside protocol range {SWEEP_RATE_RANGE}",
                    strict)
    travel = abs(end - start)
    n = math.ceil(travel / rate / dt) + 1
    direction = 1.0 if end > start else -1.0
    t = np.arange(n) * dt
    series = start + direction * rate * t
    if direction > 0:
        np.minimum(series, end, out=series)
    else:
        np.maximum(series, end, out=series)
    return series


def gen_sinusoid(amplitude: float, freq: float, phase_deg: float,
                 duration: float, dt: float = DT, strict: bool = False) -> np.ndarray:
    """Harmonic theta1 profile A*sin(2*pi*f*t + phase), sampled at 10 Hz."""
    if duration <= 0 or freq <= 0:
        raise ValueError("duration and frequency must be positive")
    _protocol_check(SINUSOID_AMP_RANGE[0] <= amplitude <= SINUSOID_AMP_RANGE[1],
                    f"sinusoid amplitude {amplitude} outside {SINUSOID_AMP_RANGE}",
                    strict)
    _protocol_check(SINUSOID_FREQ_RANGE[0] <= freq <= SINUSOID_FREQ_RANGE[1],
                    f"sinusoid frequency {freq} outside {SINUSOID_FREQ_RANGE}",
                    strict)
    _protocol_check(0.0 <= phase_deg < 360.0,
                    f"sinusoid phase {phase_deg} outside [0, 360)", strict)
    n = int(round(duration / dt))
    t = np.arange(n) * dt
    return amplitude * np.sin(2.0 * math.pi * freq * t + math.radians(phase_deg))


def gen_step_profile(step_sizes, hold: float = 3.0, start_level: float = 0.0,
                     dt: float = DT, strict: bool = False) -> np.ndarray:
    """Piecewise-constant theta1: `start_level`, then one jump per step size.

    Each level (including the first) is held for `hold` seconds. Step sizes
    are signed; their magnitudes come from the protocol set {10, 30, 60}.
    """
    if hold <= 0:
        raise ValueError("hold must be positive")
    sizes = [float(s) for s in step_sizes]
    for s in sizes:
        _protocol_check(abs(s) in (0.0,) + STEP_SIZES,
                        f"step size {s} not in protocol set {STEP_SIZES}", strict)
    n_hold = int(round(hold / dt))
    levels = np.concatenate([[start_level], start_level + np.cumsum(sizes)])
    return np.repeat(levels, n_hold)


def gen_theta3_profile(mode: str, param, n: int, dt: float = DT,
                       strict: bool = False) -> np.ndarray:
    """Insertion-angle series aligned with a theta1 series of length `n`.

    mode "discrete": `param` is a constant value from the protocol set.
    mode "continuous": `param` is (rate, start); signed rate in deg/s, values
    clipped to the theta3 range once the limit is reached.
    """
    if n < 1:
        raise ValueError("series length must be >= 1")
    if mode == "discrete":
        value = float(param)
        _protocol_check(value in THETA3_DISCRETE,
                        f"theta3 value {value} not in protocol set", strict)
        return np.full(n, value)
    if mode == "continuous":
        rate, start = float(param[0]), float(param[1])
        _protocol_check(THETA3_RATE_RANGE[0] <= abs(rate) <= THETA3_RATE_RANGE[1],
                        f"theta3 rate {rate} outside protocol range", strict)
        t = np.arange(n) * dt
        return np.clip(start + rate * t, THETA3_RANGE[0], THETA3_RANGE[1])
    raise ValueError(f"unknown theta3 mode {mode!r}")


def build_commands(theta1_series, theta3_series) -> np.ndarray:
    """Pair theta1/theta3 series into clipped, coupled command rows [n, 3]."""
    th1 = np.asarray(theta1_series, dtype=float)
    th3 = np.asarray(theta3_series, dtype=float)
    if th1.shape != th3.shape:
        raise ValueError("theta1 and theta3 series lengths differ")
    out = np.empty((th1.size, 3), dtype=float)
    for i in range(th1.size):
        a = clip_and_couple(th1[i], th3[i])
        out[i] = (a.theta1, a.theta2, a.theta3)
    return out


# --- campaign construction -------------------------------------------------

SWEEP_RATES = (10.0, 15.0, 20.0, 25.0, 30.0)
SINUSOID_AMPS = (30.0, 45.0, 60.0, 75.0, 90.0)
SINUSOID_FREQS = (0.1, 0.2, 0.5, 1.0)


def default_campaign(trials_per_family: int = 40, seed: int = 0) -> list[dict]:
    """Build the default acquisition campaign (~160 trials in four families).

    Families mirror the acquisition protocol: full-range linear sweeps in both
    directions, sinusoids over an amplitude/frequency grid, step responses,
    and combined motions with continuous insertion ramps. Randomized details
    (phases, step signs, ramp rates) come from `seed`.
    """
    rng = np.random.default_rng(seed)
    specs = []

    # Linear sweeps: rates x directions, theta3 held at discrete values.
    sweep_theta3 = (0.0, 40.0, 64.0, 88.0)
    combos = [(r, d) for r in SWEEP_RATES for d in ("fwd", "rev")]
    i = 0
    while len(specs) < trials_per_family:
        rate, direction = combos[i % len(combos)]
        th3 = sweep_theta3[(i // len(combos)) % len(sweep_theta3)]
        specs.append({
            "family": "sweep", "rate": rate, "direction": direction,
            "theta3_mode": "discrete", "theta3": th3,
        })
        i += 1

    # Sinusoids: amplitude/frequency grid, random phase, mixed theta3 modes.
    n0 = len(specs)
    combos = [(a, f) for a in SINUSOID_AMPS for f in SINUSOID_FREQS]
    i = 0
    while len(specs) - n0 < trials_per_family:
        amp, freq = combos[i % len(combos)]
        phase = float(rng.uniform(0.0, 360.0))
        duration = float(min(max(4.0 / freq, 12.0), 30.0))
        if i % 2 == 0:
            th3_mode, th3 = "discrete", THETA3_DISCRETE[i % len(THETA3_DISCRETE)]
        else:
            rate = float(rng.uniform(*THETA3_RATE_RANGE)) * (1 if i % 4 == 1 else -1)
            start = 0.0 if rate > 0 else 88.0
            th3_mode, th3 = "continuous", (rate, start)
        specs.append({
            "family": "sinusoid", "amplitude": amp, "freq": freq, "phase": phase,
            "duration": duration, "theta3_mode": th3_mode, "theta3": th3,
        })
        i += 1

    # Step responses: 3-5 random signed steps, start level randomized.
    for i in range(trials_per_family):
        n_steps = int(rng.integers(3, 6))
        sizes = [float(rng.choice(STEP_SIZES)) * float(rng.choice((-1, 1)))
                 for _ in range(n_steps)]
        start = float(rng.uniform(-120.0, 30.0))
        th3 = THETA3_DISCRETE[i % len(THETA3_DISCRETE)]
        specs.append({
            "family": "step", "sizes": sizes, "start": start, "hold": 3.0,
            "theta3_mode": "discrete", "theta3": th3,
        })

    # Combined motions: sweeps or sinusoids with continuous insertion ramps.
    n0 = len(specs)
    i = 0
    while len(specs) - n0 < trials_per_family:
        rate = float(rng.uniform(*THETA3_RATE_RANGE)) * (1 if i % 2 == 0 else -1)
        start = 0.0 if rate > 0 else 88.0
        if i % 2 == 0:
            amp, freq = SINUSOID_AMPS[i % 5], SINUSOID_FREQS[i % 4]
            specs.append({
                "family": "combined", "kind": "sinusoid", "amplitude": amp,
                "freq": freq, "phase": float(rng.uniform(0.0, 360.0)),
                "duration": float(min(max(4.0 / freq, 12.0), 30.0)),
                "theta3_mode": "continuous", "theta3": (rate, start),
            })
        else:
            sweep_rate = SWEEP_RATES[i % 5]
            direction = "fwd" if (i // 2) % 2 == 0 else "rev"
            specs.append({
                "family": "combined", "kind": "sweep", "rate": sweep_rate,
                "direction": direction,
                "theta3_mode": "continuous", "theta3": (rate, start),
            })
        i += 1

    for idx, spec in enumerate(specs):
        spec["trial_id"] = f"{spec['family']}_{idx:03d}"
    return specs


def profile_series(spec: dict, dt: float = DT,
                   settle_hold: float = 1.5) -> tuple[np.ndarray, np.ndarray]:
    """Expand a campaign spec into aligned (theta1, theta3) series."""
    family = spec["family"]
    kind = spec.get("kind", family)
    if kind == "sweep":
        lo, hi = THETA1_RANGE
        start, end = (lo, hi) if spec["direction"] == "fwd" else (hi, lo)
        th1 = gen_linear_sweep(start, end, spec["rate"], dt=dt)
        if settle_hold > 0:
            th1 = np.concatenate([th1, np.full(int(round(settle_hold / dt)), th1[-1])])
    elif kind == "sinusoid":
        th1 = gen_sinusoid(spec["amplitude"], spec["freq"], spec["phase"],
                           spec["duration"], dt=dt)
    elif kind == "step":
        th1 = gen_step_profile(spec["sizes"], hold=spec.get("hold", 3.0),
                               start_level=spec.get("start", 0.0), dt=dt)
    else:
        raise ValueError(f"unknown profile kind {kind!r}")
    th3 = gen_theta3_profile(spec["theta3_mode"], spec["theta3"], th1.size, dt=dt)
    return th1, th3


def acquire_trial(spec: dict, params: plant_mod.PlantParams, seed: int,
                  dt: float = DT) -> TrajectoryTrial:
    """Simulate one campaign spec against the plant from an equilibrium start."""
    th1, th3 = profile_series(spec, dt=dt)
    commands = build_commands(th1, th3)
    rng = np.random.default_rng(seed)
    first = ServoAngles(*commands[0])
    state = plant_mod.rest_state(first)
    tips = np.empty((commands.shape[0], 2), dtype=float)
    tip0 = plant_mod.equilibrium_tip(first.theta1, first.theta3, 0.0, params)
    tips[0] = (tip0.x, tip0.y)
    if params.output_noise_sigma > 0.0:
        tips[0] += rng.normal(0.0, params.output_noise_sigma, size=2)
    if commands.shape[0] > 1:
        tips[1:], state = plant_mod.simulate(state, commands[1:], params,
                                             dt=dt, rng=rng)
    return TrajectoryTrial(
        trial_id=spec["trial_id"],
        dt=dt,
        timestamps=np.arange(commands.shape[0]) * dt,
        angles=commands,
        tips=tips,
        meta={"spec": spec, "seed": seed},
    )


def run_acquisition(campaign: list[dict], params: plant_mod.PlantParams,
                    out_dir, seed: int = 0, dt: float = DT) -> list[TrajectoryTrial]:
    """Simulate every campaign trial and persist CSVs plus a manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(seed).generate_state(len(campaign))
    trials = []
    manifest = []
    for spec, trial_seed in zip(campaign, seeds):
        trial = acquire_trial(spec, params, int(trial_seed), dt=dt)
        try:
            write_trial_csv(trial, out_dir / f"{trial.trial_id}.csv")
        except OSError as exc:
            raise OSError(f"failed writing trial {trial.trial_id}: {exc}") from exc
        trials.append(trial)
        manifest.append({
            "trial_id": trial.trial_id,
            "n_samples": len(trial),
            "seed": int(trial_seed),
            "spec": _jsonable(spec),
        })
    manifest_doc = {
        "dt": dt,
        "seed": seed,
        "n_trials": len(trials),
        "n_samples": int(sum(len(t) for t in trials)),
        "trials": manifest,
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest_doc, fh, indent=2)
        fh.write("\n")
    return trials


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def write_trial_csv(trial: TrajectoryTrial, path):
    """Write one trial as CSV with full-precision decimal values."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for i in range(len(trial)):
            row = [trial.timestamps[i], *trial.angles[i], *trial.tips[i]]
            writer.writerow([repr(float(v)) for v in row])


def read_trial_csv(path, dt: float = DT, trial_id: str | None = None,
                   meta: dict | None = None) -> TrajectoryTrial:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected CSV header {header}")
        rows = np.array([[float(v) for v in row] for row in reader])
    if rows.size == 0:
        raise ValueError(f"{path}: no data rows")
    return TrajectoryTrial(
        trial_id=trial_id or path.stem,
        dt=dt,
        timestamps=rows[:, 0],
        angles=rows[:, 1:4],
        tips=rows[:, 4:6],
        meta=meta or {},
    )


def load_trials(data_dir) -> list[TrajectoryTrial]:
    """Load a full acquisition directory via its manifest."""
    data_dir = Path(data_dir)
    with open(data_dir / "manifest.json") as fh:
        manifest = json.load(fh)
    trials = []
    for entry in manifest["trials"]:
        trials.append(read_trial_csv(
            data_dir / f"{entry['trial_id']}.csv",
            dt=manifest["dt"],
            trial_id=entry["trial_id"],
            meta={"spec": entry["spec"], "seed": entry["seed"]},
        ))
    return trials


# --- windowing -------------------------------------------------------------

@dataclass
class WindowedDataset:
    """Sliding windows ready for sequence training, in normalized units."""

    inputs: np.ndarray        # [N, WINDOW, 3] normalized angles
    targets: np.ndarray       # [N, WINDOW, 2] normalized tips
    input_scaler: MinMaxScaler
    output_scaler: MinMaxScaler
    provenance: list          # (trial_id, start_index) per window

    def __len__(self):
        return self.inputs.shape[0]


def split_counts(n_trials: int, split=(0.7, 0.15, 0.15)) -> tuple[int, int, int]:
    """Per-trial split sizes: floor each fraction, remainder goes to train."""
    if len(split) != 3 or abs(sum(split) - 1.0) > 1e-9:
        raise ValueError("split must be three fractions summing to 1")
    n_val = int(math.floor(split[1] * n_trials))
    n_test = int(math.floor(split[2] * n_trials))
    n_train = n_trials - n_val - n_test
    return n_train, n_val, n_test


def windowize_and_split(trials, split=(0.7, 0.15, 0.15), seed: int = 0,
                        window: int = WINDOW
                        ) -> tuple[WindowedDataset, WindowedDataset, WindowedDataset]:
    """Assign whole trials to train/val/test, then cut stride-1 windows.

    Trials shorter than the window length are skipped with a warning. Scalers
    are fitted on the train split only and shared by all three datasets so no
    statistics leak from validation or test.
    """
    usable = []
    for t in trials:
        if len(t) < window:
            warnings.warn(f"trial {t.trial_id} shorter than window; skipped")
            continue
        usable.append(t)
    if not usable:
        raise ValueError("no trial long enough to window")

    order = np.random.default_rng(seed).permutation(len(usable))
    n_train, n_val, n_test = split_counts(len(usable), split)
    groups = {
        "train": [usable[i] for i in order[:n_train]],
        "val": [usable[i] for i in order[n_train:n_train + n_val]],
        "test": [usable[i] for i in order[n_train + n_val:]],
    }
    if not groups["train"]:
        raise ValueError("train split is empty")

    input_scaler = fit_scaler(np.concatenate([t.angles for t in groups["train"]]))
    output_scaler = fit_scaler(np.concatenate([t.tips for t in groups["train"]]))

    def build(group):
        ins, outs, prov = [], [], []
        for t in group:
            a = input_scaler.transform(t.angles)
            p = output_scaler.transform(t.tips)
            for s in range(len(t) - window + 1):
                ins.append(a[s:s + window])
                outs.append(p[s:s + window])
                prov.append((t.trial_id, s))
        if ins:
            return WindowedDataset(np.stack(ins), np.stack(outs),
                                   input_scaler, output_scaler, prov)
        return WindowedDataset(np.zeros((0, window, 3)), np.zeros((0, window, 2)),
                               input_scaler, output_scaler, prov)

    return build(groups["train"]), build(groups["val"]), build(groups["test"])
