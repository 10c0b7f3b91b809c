"""Train, validate, persist, and serve the stacked-LSTM tip predictor."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nn, plant as plant_mod, protocol
from .core import MinMaxScaler, ServoAngles
from .protocol import WINDOW, WindowedDataset

COVERAGE_BANDS = (1.0, 2.0, 3.0)


@dataclass
class TrainConfig:
    batch_size: int = 128
    lr: float = 1e-3
    max_epochs: int = 300
    lr_factor: float = 0.5
    lr_patience: int = 10
    stop_patience: int = 30
    dropout: float = 0.2
    hidden: int = 64
    seed: int = 0


class SurrogateModel:
    """Trained sequence regressor plus the scalers it was fitted with."""

    def __init__(self, net: nn.SequenceRegressor, input_scaler: MinMaxScaler,
                 output_scaler: MinMaxScaler, history: list | None = None):
        self.net = net
        self.input_scaler = input_scaler
        self.output_scaler = output_scaler
        self.history = history or []

    def predict_normalized(self, inputs: np.ndarray) -> np.ndarray:
        """Inference on already-normalized windows [N, 10, 3] -> [N, 10, 2]."""
        return self.net.forward(inputs, training=False)

    def predict_window(self, window_raw) -> np.ndarray:
        """Predict the 10-step tip sequence (mm) for one raw-angle window.

        Windows shorter than 10 rows are left-padded with zeros in normalized
        space, matching how the control environment fills its input early in
        an episode. Note normalized zero is the channel minimum, not a
        physically neutral command.
        """
        window_raw = np.asarray(window_raw, dtype=float)
        if window_raw.ndim != 2 or window_raw.shape[1] != 3:
            raise ValueError("window must be [k, 3] raw angles")
        k = window_raw.shape[0]
        if k > WINDOW:
            raise ValueError(f"window longer than {WINDOW}")
        norm = np.zeros((WINDOW, 3))
        if k:
            norm[WINDOW - k:] = self.input_scaler.transform(window_raw)
        pred = self.net.forward(norm[None], training=False)[0]
        return self.output_scaler.inverse(pred)

    def save(self, base_path):
        meta = {
            "input_scaler": self.input_scaler.to_dict(),
            "output_scaler": self.output_scaler.to_dict(),
            "architecture": {
                "in_dim": self.net.in_dim,
                "hidden": self.net.hidden,
                "out_dim": self.net.out_dim,
                "dropout": self.net.dropout,
            },
        }
        nn.save_checkpoint(base_path, self.net.params(), meta)

    @classmethod
    def load(cls, base_path) -> "SurrogateModel":
        params, meta = nn.load_checkpoint(base_path)
        arch = meta["architecture"]
        net = nn.SequenceRegressor(arch["in_dim"], arch["hidden"], arch["out_dim"],
                                   arch["dropout"], rng=np.random.default_rng(0))
        nn.assign_params(net.params(), params)
        return cls(net,
                   MinMaxScaler.from_dict(meta["input_scaler"]),
                   MinMaxScaler.from_dict(meta["output_scaler"]))


def _dataset_loss(net, ds: WindowedDataset, chunk=2048) -> float:
    total = 0.0
    n = len(ds)
    for s in range(0, n, chunk):
        pred = net.forward(ds.inputs[s:s + chunk], training=False)
        diff = pred - ds.targets[s:s + chunk]
        total += float(np.sum(diff * diff))
    return total / (n * ds.targets.shape[1] * ds.targets.shape[2])


def train_surrogate(train_ds: WindowedDataset, val_ds: WindowedDataset,
                    config: TrainConfig | None = None) -> SurrogateModel:
    """Mini-batch Adam training with patience-based LR halving and early stop.

    Returns the model at its best validation loss. Fully deterministic for a
    fixed config and datasets.
    """
    config = config or TrainConfig()
    if len(train_ds) == 0 or len(val_ds) == 0:
        raise ValueError("train and val datasets must be non-empty")
    rng = np.random.default_rng(config.seed)
    net = nn.SequenceRegressor(3, config.hidden, 2, config.dropout, rng)
    opt = nn.Adam(net.params(), lr=config.lr)

    best_val = math.inf
    best_params = nn.copy_params(net.params())
    stale = 0          # epochs since last improvement
    lr_stale = 0       # epochs since last improvement or LR cut
    history = []

    n = len(train_ds)
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        train_loss = 0.0
        for s in range(0, n, config.batch_size):
            idx = order[s:s + config.batch_size]
            net.zero_grads()
            pred, cache = net.forward(train_ds.inputs[idx], training=True,
                                      rng=rng, want_cache=True)
            loss, dpred = nn.mse_loss(pred, train_ds.targets[idx])
            net.backward(dpred, cache)
            opt.step(net.grads())
            train_loss += loss * idx.size
        train_loss /= n

        val_loss = _dataset_loss(net, val_ds)
        if not math.isfinite(val_loss):
            raise FloatingPointError(
                f"validation loss diverged at epoch {epoch}; history={history}")

        event = ""
        if val_loss < best_val:
            best_val = val_loss
            best_params = nn.copy_params(net.params())
            stale = 0
            lr_stale = 0
        else:
            stale += 1
            lr_stale += 1
            if lr_stale >= config.lr_patience:
                opt.lr *= config.lr_factor
                lr_stale = 0
                event = f"lr->{opt.lr:.2e}"
        history.append({"epoch": epoch, "train_loss": train_loss,
                        "val_loss": val_loss, "lr": opt.lr, "event": event})
        if stale >= config.stop_patience:
            history[-1]["event"] = (event + ";" if event else "") + "early_stop"
            break

    nn.assign_params(net.params(), best_params)
    return SurrogateModel(net, train_ds.input_scaler, train_ds.output_scaler,
                          history)


@dataclass
class ValidationReport:
    """Accuracy summary in millimetres over a held-out dataset."""

    rmse_overall: float
    rmse_x: float
    rmse_y: float
    mae_overall: float
    mae_x: float
    mae_y: float
    coverage: dict          # band (mm) -> fraction of per-axis abs errors inside
    max_abs_error: float
    n_points: int

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in
             ("rmse_overall", "rmse_x", "rmse_y", "mae_overall", "mae_x",
              "mae_y", "max_abs_error", "n_points")}
        d["coverage"] = {f"{band:g}mm": frac for band, frac in self.coverage.items()}
        return d


def compute_report(pred_mm: np.ndarray, target_mm: np.ndarray,
                   bands=COVERAGE_BANDS) -> ValidationReport:
    """Error metrics for paired predictions/targets, both [M, 2] in mm."""
    pred_mm = np.asarray(pred_mm, dtype=float)
    target_mm = np.asarray(target_mm, dtype=float)
    if pred_mm.shape != target_mm.shape or pred_mm.ndim != 2:
        raise ValueError("pred/target must both be [M, 2]")
    err = pred_mm - target_mm
    abs_err = np.abs(err)
    rmse_x = float(np.sqrt(np.mean(err[:, 0] ** 2)))
    rmse_y = float(np.sqrt(np.mean(err[:, 1] ** 2)))
    mae_x = float(np.mean(abs_err[:, 0]))
    mae_y = float(np.mean(abs_err[:, 1]))
    pooled = abs_err.reshape(-1)
    coverage = {float(b): float(np.mean(pooled <= b)) for b in bands}
    return ValidationReport(
        rmse_overall=float(math.sqrt((rmse_x ** 2 + rmse_y ** 2) / 2.0)),
        rmse_x=rmse_x,
        rmse_y=rmse_y,
        mae_overall=(mae_x + mae_y) / 2.0,
        mae_x=mae_x,
        mae_y=mae_y,
        coverage=coverage,
        max_abs_error=float(pooled.max()),
        n_points=pred_mm.shape[0],
    )


def validate(model: SurrogateModel, test_ds: WindowedDataset,
             per_step: bool = False, chunk=2048) -> ValidationReport:
    """Evaluate on a windowed dataset, in mm after inverse scaling.

    The headline metric uses the final step of each window; `per_step=True`
    pools every step instead.
    """
    if len(test_ds) == 0:
        raise ValueError("test dataset is empty")
    preds = []
    for s in range(0, len(test_ds), chunk):
        preds.append(model.predict_normalized(test_ds.inputs[s:s + chunk]))
    pred = np.concatenate(preds)
    pred_mm = test_ds.output_scaler.inverse(pred)
    target_mm = test_ds.output_scaler.inverse(test_ds.targets)
    if per_step:
        return compute_report(pred_mm.reshape(-1, 2), target_mm.reshape(-1, 2))
    return compute_report(pred_mm[:, -1, :], target_mm[:, -1, :])


# --- hysteresis branch test --------------------------------------------------

def sinusoid_arrival_phase(amplitude=60.0, freq=0.5, target=-45.0,
                           dt=protocol.DT) -> tuple[float, int]:
    """Phase (deg, in [0, 360)) putting a decreasing-phase crossing of
    `target` exactly on a sample instant; returns (phase, sample index)."""
    # Decreasing-phase crossing: sin(x) = target/A with cos(x) < 0.
    x_cross = math.pi - math.asin(target / amplitude)
    t_cross = x_cross / (2.0 * math.pi * freq)
    k = math.ceil(t_cross / dt)
    phase_rad = x_cross - 2.0 * math.pi * freq * k * dt
    return math.degrees(phase_rad) % 360.0, k


def branch_profiles(theta3=40.0, sweep_rate=20.0, amplitude=60.0, freq=0.5,
                    target=-45.0, settle_s=0.0) -> dict:
    """The three approach profiles that reach `target` with distinct histories.

    With `settle_s` > 0 each profile holds the target after arrival, so the
    servo lag decays and only the hysteresis memory distinguishes branches.
    """
    lo, hi = -175.0, 85.0
    fwd = protocol.gen_linear_sweep(lo, target, sweep_rate)
    rev = protocol.gen_linear_sweep(hi, target, sweep_rate)
    phase, k = sinusoid_arrival_phase(amplitude, freq, target)
    sin = protocol.gen_sinusoid(amplitude, freq, phase, duration=(k + 1) * protocol.DT)
    hold = np.full(int(round(settle_s / protocol.DT)), float(target))
    profiles = {}
    for name, th1 in (("forward", fwd), ("reverse", rev), ("sinusoid", sin)):
        if hold.size:
            th1 = np.concatenate([th1, hold])
        th3_series = protocol.gen_theta3_profile("discrete", theta3, th1.size)
        profiles[name] = protocol.build_commands(th1, th3_series)
    return profiles


@dataclass
class BranchReport:
    branches: dict = field(default_factory=dict)     # name -> per-branch record
    separations: dict = field(default_factory=dict)  # pair -> plant tip distance

    def to_dict(self) -> dict:
        return {"branches": self.branches, "separations": self.separations}


def hysteresis_branch_test(model: SurrogateModel | None,
                           params: plant_mod.PlantParams,
                           theta3=40.0, sweep_rate=20.0,
                           settle_s=0.0) -> BranchReport:
    """Drive the plant to the same configuration along three histories.

    Records the plant tip on each branch at arrival (or after `settle_s` of
    holding the target), the surrogate prediction from the corresponding
    command window when a model is given, and pairwise plant-tip separations.
    Branch identity lives in the recent command history, so predictions are
    meaningful at arrival, while the hysteresis-free control comparison needs
    settled readings.
    """
    report = BranchReport()
    arrival_tips = {}
    for name, commands in branch_profiles(theta3, sweep_rate,
                                          settle_s=settle_s).items():
        first = ServoAngles(*commands[0])
        state = plant_mod.rest_state(first)
        tips, state = plant_mod.simulate(state, commands, params)
        plant_tip = tips[-1]
        record = {
            "plant_tip": [float(plant_tip[0]), float(plant_tip[1])],
            "arrival_command": [float(v) for v in commands[-1]],
        }
        if model is not None:
            window = commands[-WINDOW:]
            pred = model.predict_window(window)[-1]
            record["model_tip"] = [float(pred[0]), float(pred[1])]
            record["error_mm"] = float(np.hypot(pred[0] - plant_tip[0],
                                                pred[1] - plant_tip[1]))
        report.branches[name] = record
        arrival_tips[name] = plant_tip
    names = list(arrival_tips)
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            a, b = arrival_tips[names[i]], arrival_tips[names[j]]
            report.separations[f"{names[i]}_vs_{names[j]}"] = float(
                np.hypot(a[0] - b[0], a[1] - b[1]))
    return report
