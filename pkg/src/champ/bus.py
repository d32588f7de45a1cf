"""Deterministic discrete-event model of the shared multi-drop bus.

Per-frame wall time with n devices attached follows the contention
model

    T(n) = t_compute + n * (t_tx + t_host) + n^2 * t_contend

where t_tx is the serialized bus transfer time for one input frame,
t_host the host coordination cost per device, and t_contend a
quadratic contention coefficient. ``calibrate`` fits the three device
parameters to measured (n, fps) rows by least squares in per-frame-time
space; ``simulate_broadcast`` replays the same physics event by event
and must agree with the closed form.
"""

from __future__ import annotations

import csv
import heapq
import json
from dataclasses import dataclass, asdict
from typing import Any, Iterable

import numpy as np
from scipy.optimize import nnls


class BusError(Exception):
    pass


class InvalidDeviceCount(BusError):
    pass


class InsufficientData(BusError):
    pass


class ScheduleInPast(BusError):
    pass


@dataclass(frozen=True)
class BusConfig:
    """Bus-level constants shared by every device family."""

    raw_bandwidth_bps: float = 5e9
    per_transfer_overhead_ms: float = 0.0
    protocol_efficiency: float = 0.8

    def __post_init__(self):
        if self.raw_bandwidth_bps <= 0:
            raise BusError("raw_bandwidth_bps must be > 0")
        if not (0.0 < self.protocol_efficiency <= 1.0):
            raise BusError("protocol_efficiency must be in (0, 1]")
        if self.per_transfer_overhead_ms < 0:
            raise BusError("per_transfer_overhead_ms must be >= 0")


@dataclass
class DeviceProfile:
    """Calibrated per-device-family timing parameters (milliseconds)."""

    name: str
    t_compute_ms: float
    t_host_ms: float
    t_contend_ms: float
    frame_bytes: int

    def __post_init__(self):
        if self.t_compute_ms <= 0:
            raise BusError("t_compute_ms must be > 0")
        if min(self.t_host_ms, self.t_contend_ms) < 0 or self.frame_bytes < 0:
            raise BusError("profile parameters must be >= 0")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "DeviceProfile":
        return cls(**json.loads(text))


def transfer_time_ms(size_bytes: int, config: BusConfig) -> float:
    """Time to move size_bytes over the bus, including fixed per-transfer
    host setup cost."""
    if size_bytes < 0:
        raise BusError("size must be >= 0")
    effective_bps = config.raw_bandwidth_bps * config.protocol_efficiency
    return config.per_transfer_overhead_ms + size_bytes * 8 / effective_bps * 1000.0


def frame_time_ms(profile: DeviceProfile, n_devices: int, config: BusConfig) -> float:
    if n_devices < 1:
        raise InvalidDeviceCount(f"n_devices must be >= 1, got {n_devices}")
    t_tx = transfer_time_ms(profile.frame_bytes, config)
    return (
        profile.t_compute_ms
        + n_devices * (t_tx + profile.t_host_ms)
        + n_devices**2 * profile.t_contend_ms
    )


def predict_fps(profile: DeviceProfile, n_devices: int, config: BusConfig) -> float:
    return 1000.0 / frame_time_ms(profile, n_devices, config)


@dataclass
class CalibrationResult:
    profile: DeviceProfile
    rms_ms: float
    clamped: bool  # True when the unconstrained best fit needed a negative parameter


def calibrate(
    measurements: Iterable[tuple[int, float]],
    config: BusConfig,
    frame_bytes: int,
    name: str = "calibrated",
) -> CalibrationResult:
    """Fit (t_compute, t_host, t_contend) to measured (n, fps) rows.

    The fit minimizes squared error on per-frame times 1000/fps, where
    the model is linear in the parameters. Parameters are constrained
    non-negative; if the unconstrained optimum would go negative, the
    non-negative optimum is used instead and reported via ``clamped``.
    """
    rows = sorted(set((int(n), float(fps)) for n, fps in measurements))
    ns = np.array([n for n, _ in rows], dtype=float)
    fps = np.array([f for _, f in rows], dtype=float)
    if len(set(ns)) < 3:
        raise InsufficientData(f"need >= 3 distinct device counts, got {sorted(set(ns))}")
    if np.any(fps <= 0):
        raise InsufficientData("all fps measurements must be > 0")
    if np.any(ns < 1):
        raise InvalidDeviceCount("device counts must be >= 1")

    y = 1000.0 / fps
    t_tx = transfer_time_ms(frame_bytes, config)
    design = np.stack([np.ones_like(ns), ns, ns**2], axis=1)
    rhs = y - ns * t_tx

    unconstrained, *_ = np.linalg.lstsq(design, rhs, rcond=None)
    clamped = bool(np.min(unconstrained) < -1e-9)
    params = nnls(design, rhs)[0] if clamped else np.maximum(unconstrained, 0.0)

    # t_compute = 0 would make the model degenerate; nudge onto the open set
    t_compute = max(float(params[0]), 1e-9)
    profile = DeviceProfile(
        name=name,
        t_compute_ms=t_compute,
        t_host_ms=float(params[1]),
        t_contend_ms=float(params[2]),
        frame_bytes=int(frame_bytes),
    )
    predicted = np.array([frame_time_ms(profile, int(n), config) for n in ns])
    rms = float(np.sqrt(np.mean((predicted - y) ** 2)))
    return CalibrationResult(profile=profile, rms_ms=rms, clamped=clamped)


def load_measurements_csv(path) -> list[tuple[int, float]]:
    """Calibration fixture format: CSV with columns n,fps."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append((int(row["n"]), float(row["fps"])))
    return out


# --- event queue -------------------------------------------------------------


class EventQueue:
    """Priority queue of (time, event) with a monotone clock.

    Ties break by insertion order, which makes every simulation built
    on top of it deterministic under a fixed schedule of calls.
    """

    def __init__(self, start_ms: float = 0.0):
        self.now: float = start_ms
        self._heap: list[tuple[float, int, Any]] = []
        self._counter = 0

    def __len__(self) -> int:
        return len(self._heap)

    def schedule(self, at_ms: float, event: Any) -> None:
        if at_ms < self.now:
            raise ScheduleInPast(f"cannot schedule at {at_ms} ms; clock is at {self.now} ms")
        heapq.heappush(self._heap, (at_ms, self._counter, event))
        self._counter += 1

    def peek_time(self) -> float | None:
        return self._heap[0][0] if self._heap else None

    def step(self) -> tuple[float, Any] | None:
        """Pop the earliest event and advance the clock to its time.
        Returns None when the queue is empty."""
        if not self._heap:
            return None
        at, _, event = heapq.heappop(self._heap)
        self.now = at
        return at, event


# --- broadcast load test ------------------------------------------------------


def simulate_broadcast(
    profile: DeviceProfile, n_devices: int, n_frames: int, config: BusConfig
) -> float:
    """Event-driven replay of the broadcast load test: every frame goes
    to all n devices at once, transfers serialized on the bus, devices
    computing in parallel, host coordination and contention charged per
    frame. Returns the measured frames/second over n_frames (no warmup:
    the first frame counts)."""
    if n_devices < 1:
        raise InvalidDeviceCount(f"n_devices must be >= 1, got {n_devices}")
    if n_frames < 1:
        raise BusError("n_frames must be >= 1")

    t_tx = transfer_time_ms(profile.frame_bytes, config)
    host_ms = n_devices * profile.t_host_ms + n_devices**2 * profile.t_contend_ms

    queue = EventQueue()
    frames_done = 0
    pending_computes = 0
    end_time = 0.0

    queue.schedule(0.0, ("frame_start", 0))
    while True:
        popped = queue.step()
        if popped is None:
            break
        now, event = popped
        kind = event[0]
        if kind == "frame_start":
            # host prep for this frame, then the bus serializes one
            # transfer per device
            queue.schedule(now + host_ms, ("transfer", event[1], 0))
        elif kind == "transfer":
            _, frame_idx, device = event
            done = now + t_tx
            queue.schedule(done, ("compute", frame_idx, device))
            if device + 1 < n_devices:
                queue.schedule(done, ("transfer", frame_idx, device + 1))
        elif kind == "compute":
            _, frame_idx, device = event
            pending_computes += 1
            queue.schedule(now + profile.t_compute_ms, ("result", frame_idx, device))
        elif kind == "result":
            _, frame_idx, device = event
            pending_computes -= 1
            if pending_computes == 0:
                frames_done += 1
                end_time = now
                if frames_done < n_frames:
                    queue.schedule(now, ("frame_start", frames_done))
    return n_frames * 1000.0 / end_time
