"""Wrist force buffering and contact decisions for monitored descents.

The sensor is read at a fixed rate into a sliding one-second window; the
stop rule compares the window mean against a baseline captured while the arm
was stationary, relative to the baseline's own magnitude so the rule is
insensitive to the rig's static load. Placement and safety classifications
look only at the gripper height when a stop fires.
"""

from __future__ import annotations

import csv
import enum

import numpy as np

from .core import ForceConfig, WorkspaceConfig

_REFRESH_EVERY = 4096  # recompute the running sum exactly, bounding FP drift


class ForceDecision(enum.Enum):
    CONTINUE = "continue"
    STOP = "stop"


class ForceBuffer:
    """Fixed-capacity FIFO of 3-axis samples with an O(1) running mean."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self._buf = np.zeros((capacity, 3))
        self._head = 0
        self._count = 0
        self._sum = np.zeros(3)
        self._pushes = 0

    @property
    def capacity(self) -> int:
        return self._buf.shape[0]

    def __len__(self) -> int:
        return self._count

    @property
    def full(self) -> bool:
        return self._count == self.capacity

    def push(self, sample) -> None:
        v = np.asarray(sample, dtype=float)
        if v.shape != (3,):
            raise ValueError(f"expected a 3-axis sample, got shape {v.shape}")
        if self._count == self.capacity:
            self._sum -= self._buf[self._head]
        else:
            self._count += 1
        self._buf[self._head] = v
        self._sum += v
        self._head = (self._head + 1) % self.capacity
        self._pushes += 1
        if self._pushes % _REFRESH_EVERY == 0:
            self._sum = self._buf[:self._count].sum(axis=0)

    def mean(self) -> np.ndarray:
        if self._count == 0:
            raise ValueError("mean of an empty buffer")
        return self._sum / self._count


def buffer_capacity(config: ForceConfig) -> int:
    return int(round(config.rate * config.buffer_seconds))


def init_baseline(samples, config: ForceConfig) -> np.ndarray:
    """Mean of stationary samples; requires a full window's worth."""
    arr = np.asarray([np.asarray(s, dtype=float) for s in samples])
    need = buffer_capacity(config)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError("samples must be a sequence of 3-axis vectors")
    if arr.shape[0] < need:
        raise ValueError(
            f"baseline needs at least {need} samples, got {arr.shape[0]}")
    return arr.mean(axis=0)


def deviation(buffer: ForceBuffer, baseline: np.ndarray, axis: str) -> float:
    """Current window-mean deviation from baseline on the configured axis."""
    mean = buffer.mean()
    if axis == "vector":
        return float(np.linalg.norm(mean - baseline))
    if axis == "z":
        return float(abs(mean[2] - baseline[2]))
    raise ValueError(f"axis must be 'vector' or 'z', got {axis!r}")


def stop_threshold(baseline: np.ndarray, config: ForceConfig) -> float:
    if config.axis == "z":
        magnitude = abs(float(baseline[2]))
    else:
        magnitude = float(np.linalg.norm(baseline))
    return config.threshold * max(magnitude, config.floor)


def update_and_check(buffer: ForceBuffer, sample, baseline: np.ndarray,
                     config: ForceConfig) -> tuple[ForceDecision, float]:
    """Push one sample and evaluate the stop rule (strict inequality)."""
    buffer.push(sample)
    dev = deviation(buffer, baseline, config.axis)
    if dev > stop_threshold(baseline, config):
        return ForceDecision.STOP, dev
    return ForceDecision.CONTINUE, dev


def vial_placed(grip_z: float, config: WorkspaceConfig) -> bool:
    """After a stop: is the vial sitting on the rack's top surface?

    The gripper holds the vial ``grip_height`` above its bottom, so a bottom
    resting on the rack puts the gripper at exactly rack height plus grip
    height; anything at or above that is a surface impact rather than an
    in-slot jam.
    """
    return grip_z >= config.rack.height + config.vial.grip_height


def safety_stop(grip_z: float, config: WorkspaceConfig) -> bool:
    """After a stop: is the gripper impossibly deep (below half rack height)?"""
    return grip_z < 0.5 * config.rack.height


def write_force_trace(path, rows) -> None:
    """Dump a monitored descent as CSV: t, fx, fy, fz, mean_dev, decision."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["t", "fx", "fy", "fz", "mean_dev", "decision"])
        for t, sample, dev, decision in rows:
            v = np.asarray(sample, dtype=float)
            writer.writerow([f"{t:.6f}", f"{v[0]:.6f}", f"{v[1]:.6f}",
                             f"{v[2]:.6f}", f"{dev:.6f}", decision])
