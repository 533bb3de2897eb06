"""Temporal smoothing of per-frame positions with a constant-velocity Kalman filter.

Per-frame localization of video is noisier than still images (occlusion,
motion blur, outright failures); filtering the position track compensates.
The state is 3D position plus velocity; missing frames and measurements
failing the Mahalanobis gate are bridged by prediction alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyInputError


@dataclass(frozen=True)
class TrackParams:
    """Filter tuning.

    `process_noise` is the white-noise acceleration spectral density
    (m^2/s^3); `measurement_variance` the per-axis position noise (m^2);
    `gate_threshold` the Mahalanobis distance beyond which a measurement is
    treated as an outlier; `frame_interval` the nominal frame spacing.
    """

    process_noise: float = 1.0
    measurement_variance: float = 0.25
    gate_threshold: float = 3.0
    frame_interval: float = 0.1

    def __post_init__(self):
        if min(
            self.process_noise,
            self.measurement_variance,
            self.gate_threshold,
            self.frame_interval,
        ) <= 0:
            raise ValueError("all tracking parameters must be positive")


@dataclass
class TrackState:
    """Filtered state at one timestamp."""

    position: np.ndarray
    velocity: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.velocity = np.asarray(self.velocity, dtype=np.float64).reshape(3)
        self.covariance = np.asarray(self.covariance, dtype=np.float64).reshape(6, 6)
        if np.max(np.abs(self.covariance - self.covariance.T)) > 1e-12:
            raise ValueError("covariance must be symmetric")


def _transition(dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Constant-velocity transition and discrete white-noise-acceleration Q."""
    f = np.eye(6)
    f[:3, 3:] = dt * np.eye(3)
    q11 = dt**3 / 3.0
    q12 = dt**2 / 2.0
    q = np.zeros((6, 6))
    q[:3, :3] = q11 * np.eye(3)
    q[:3, 3:] = q12 * np.eye(3)
    q[3:, :3] = q12 * np.eye(3)
    q[3:, 3:] = dt * np.eye(3)
    return f, q


def smooth_trajectory(
    measurements: Sequence[tuple[float, np.ndarray | None]],
    params: TrackParams | None = None,
) -> list[TrackState]:
    """Filter an ordered list of (timestamp, position-or-None) measurements.

    Returns one state per timestamp. A None measurement, or one whose
    innovation exceeds the Mahalanobis gate, only propagates the prediction.
    The covariance update uses the Joseph form so it stays symmetric PSD.

    Raises:
        EmptyInputError: no measurements given.
    """
    params = params or TrackParams()
    if len(measurements) == 0:
        raise EmptyInputError("no measurements to smooth")
    times = np.array([t for t, _ in measurements], dtype=np.float64)
    if np.any(np.diff(times) <= 0):
        raise ValueError("timestamps must be strictly increasing")

    h = np.zeros((3, 6))
    h[:, :3] = np.eye(3)
    r = params.measurement_variance * np.eye(3)
    q_density = params.process_noise

    # Initialize on the first real measurement; leading gaps just replay it.
    first_z = next((np.asarray(z, dtype=np.float64) for _, z in measurements if z is not None), None)
    if first_z is None:
        raise ValueError("at least one measurement must be present")

    x = np.zeros(6)
    x[:3] = first_z
    p = np.zeros((6, 6))
    p[:3, :3] = params.measurement_variance * np.eye(3)
    # Velocity is unobserved at initialization; give it a broad prior scaled
    # to covering one frame interval.
    v_sigma2 = max(params.measurement_variance, 1.0) / params.frame_interval**2
    p[3:, 3:] = v_sigma2 * np.eye(3)

    states: list[TrackState] = []
    initialized = False
    prev_t = times[0]
    for (t, z) in measurements:
        if not initialized:
            if z is not None:
                initialized = True
            states.append(TrackState(position=x[:3].copy(), velocity=x[3:].copy(), covariance=p.copy()))
            prev_t = t
            continue

        dt = t - prev_t
        f, q = _transition(dt)
        x = f @ x
        p = f @ p @ f.T + q_density * q
        p = 0.5 * (p + p.T)

        if z is not None:
            z = np.asarray(z, dtype=np.float64).reshape(3)
            innovation = z - h @ x
            s = h @ p @ h.T + r
            maha2 = float(innovation @ np.linalg.solve(s, innovation))
            if maha2 <= params.gate_threshold**2:
                k = np.linalg.solve(s.T, (p @ h.T).T).T
                x = x + k @ innovation
                ikh = np.eye(6) - k @ h
                p = ikh @ p @ ikh.T + k @ r @ k.T
                p = 0.5 * (p + p.T)

        states.append(TrackState(position=x[:3].copy(), velocity=x[3:].copy(), covariance=p.copy()))
        prev_t = t
    return states
