"""Shared domain types: servo angles, tip positions, actions, min-max scaling."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Servo limits in degrees. Servo 2 is mechanically coupled to servo 1
# (same shaft, opposite magnet), so theta2 is never commanded independently.
THETA1_RANGE = (-175.0, 85.0)
THETA2_RANGE = (5.0, 265.0)
THETA3_RANGE = (0.0, 88.0)
THETA2_OFFSET = 180.0

# Per-step command increment bound, degrees.
ACTION_LIMIT = 5.0


class DegenerateChannelError(ValueError):
    """A data channel is constant, so min-max scaling is undefined."""


def _clip(v, lo, hi):
    return min(max(v, lo), hi)


@dataclass(frozen=True)
class ServoAngles:
    """Commanded or actual servo triple (degrees), with theta2 = theta1 + 180."""

    theta1: float
    theta2: float
    theta3: float

    def as_array(self) -> np.ndarray:
        return np.array([self.theta1, self.theta2, self.theta3], dtype=float)


@dataclass(frozen=True)
class TipPosition:
    """Catheter tip coordinates in the planar workspace (millimetres)."""

    x: float
    y: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)

    def distance_to(self, other: "TipPosition") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class ActionDelta:
    """Incremental command for (theta1, theta3); theta2 follows theta1."""

    dtheta1: float
    dtheta3: float

    def clipped(self) -> "ActionDelta":
        if not (math.isfinite(self.dtheta1) and math.isfinite(self.dtheta3)):
            raise ValueError(f"non-finite action ({self.dtheta1}, {self.dtheta3})")
        return ActionDelta(
            _clip(self.dtheta1, -ACTION_LIMIT, ACTION_LIMIT),
            _clip(self.dtheta3, -ACTION_LIMIT, ACTION_LIMIT),
        )


def clip_and_couple(raw_theta1: float, raw_theta3: float) -> ServoAngles:
    """Clip commanded angles to servo limits and enforce the theta2 coupling.

    Idempotent: in-range inputs pass through unchanged.
    """
    if not (math.isfinite(raw_theta1) and math.isfinite(raw_theta3)):
        raise ValueError(f"non-finite servo command ({raw_theta1}, {raw_theta3})")
    t1 = _clip(raw_theta1, *THETA1_RANGE)
    t3 = _clip(raw_theta3, *THETA3_RANGE)
    return ServoAngles(t1, t1 + THETA2_OFFSET, t3)


class MinMaxScaler:
    """Per-channel affine map of [min, max] onto [0, 1].

    Inputs outside the fitted range map linearly outside [0, 1]; no clipping
    is applied so the transform stays invertible everywhere.
    """

    def __init__(self, mins, maxs):
        self.mins = np.atleast_1d(np.asarray(mins, dtype=float))
        self.maxs = np.atleast_1d(np.asarray(maxs, dtype=float))
        if self.mins.shape != self.maxs.shape:
            raise ValueError("scaler min/max shape mismatch")
        if np.any(~np.isfinite(self.mins)) or np.any(~np.isfinite(self.maxs)):
            raise ValueError("non-finite scaler bounds")
        if np.any(self.maxs <= self.mins):
            raise DegenerateChannelError(
                f"max must exceed min per channel: mins={self.mins}, maxs={self.maxs}"
            )
        self.span = self.maxs - self.mins

    @property
    def n_channels(self) -> int:
        return self.mins.size

    def transform(self, x):
        return (np.asarray(x, dtype=float) - self.mins) / self.span

    def inverse(self, u):
        return self.mins + np.asarray(u, dtype=float) * self.span

    def to_dict(self) -> dict:
        return {"mins": self.mins.tolist(), "maxs": self.maxs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "MinMaxScaler":
        return cls(d["mins"], d["maxs"])

    def __eq__(self, other):
        return (
            isinstance(other, MinMaxScaler)
            and np.array_equal(self.mins, other.mins)
            and np.array_equal(self.maxs, other.maxs)
        )


def fit_scaler(samples) -> MinMaxScaler:
    """Fit a MinMaxScaler to observed samples, shape [n] or [n, channels]."""
    arr = np.asarray(samples, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.shape[0] < 2:
        raise ValueError(f"need at least 2 samples per channel, got {arr.shape[0]}")
    mins = arr.min(axis=0)
    maxs = arr.max(axis=0)
    if np.any(maxs <= mins):
        bad = np.nonzero(maxs <= mins)[0].tolist()
        raise DegenerateChannelError(f"constant channel(s) {bad}: cannot fit scaler")
    return MinMaxScaler(mins, maxs)


def normalize(x, scaler: MinMaxScaler):
    return scaler.transform(x)


def denormalize(u, scaler: MinMaxScaler):
    return scaler.inverse(u)
