"""Rotations and time-indexed random rotation schedules.

Conventions
-----------
* Quaternions are ``(w, x, y, z)`` with unit norm.
* Euler angles are ``(roll, pitch, yaw)`` in degrees, composed intrinsically
  Z-Y-X: the rotation is ``Rz(yaw) @ Ry(pitch) @ Rx(roll)``.
* Angles stay in degrees everywhere; radians only appear inside trig calls.
* Schedules interpolate the Euler angles themselves, linearly between knots.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from magloc.errors import ContractError


def quat_from_euler(angles_deg) -> np.ndarray:
    """Vectorised Euler (roll, pitch, yaw) degrees -> unit quaternions (..., 4)."""
    a = np.radians(np.asarray(angles_deg, dtype=np.float64)) * 0.5
    cr, cp, cy = np.cos(a[..., 0]), np.cos(a[..., 1]), np.cos(a[..., 2])
    sr, sp, sy = np.sin(a[..., 0]), np.sin(a[..., 1]), np.sin(a[..., 2])
    q = np.stack(
        [
            cr * cp * cy + sr * sp * sy,
            sr * cp * cy - cr * sp * sy,
            cr * sp * cy + sr * cp * sy,
            cr * cp * sy - sr * sp * cy,
        ],
        axis=-1,
    )
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_multiply(a, b) -> np.ndarray:
    """Hamilton product ``a * b`` (apply ``b`` first, then ``a``)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def rotate_vectors(q, v) -> np.ndarray:
    """Rotate vectors ``v`` (..., 3) by quaternions ``q`` (..., 4), broadcasting.

    Uses ``v + 2w (u x v) + 2 u x (u x v)`` with ``u`` the vector part.
    """
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    w = q[..., :1]
    u = q[..., 1:]
    uv = np.cross(u, v)
    return v + 2.0 * w * uv + 2.0 * np.cross(u, uv)


@dataclass(frozen=True)
class Rotation:
    """Unit quaternion rotation. Construct through the helpers, not raw."""

    w: float = 1.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def __post_init__(self):
        n = math.sqrt(self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z)
        if not n > 0 or not math.isfinite(n):
            raise ContractError("rotation quaternion must be finite and nonzero")
        if n != 1.0:
            for name in ("w", "x", "y", "z"):
                object.__setattr__(self, name, getattr(self, name) / n)

    @classmethod
    def identity(cls) -> "Rotation":
        return cls()

    @classmethod
    def from_quaternion(cls, q) -> "Rotation":
        w, x, y, z = (float(c) for c in q)
        return cls(w, x, y, z)

    @classmethod
    def from_axis_angle(cls, axis, angle_deg: float) -> "Rotation":
        axis = np.asarray(axis, dtype=np.float64)
        norm = np.linalg.norm(axis)
        if norm == 0:
            raise ContractError("rotation axis must be nonzero")
        half = math.radians(angle_deg) / 2
        x, y, z = axis / norm * math.sin(half)
        return cls(math.cos(half), x, y, z)

    @property
    def quaternion(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def as_matrix(self) -> np.ndarray:
        return rotate_vectors(self.quaternion, np.eye(3)).T

    def inverse(self) -> "Rotation":
        return Rotation(self.w, -self.x, -self.y, -self.z)

    def __mul__(self, other: "Rotation") -> "Rotation":
        return Rotation.from_quaternion(quat_multiply(self.quaternion, other.quaternion))

    def apply(self, v) -> np.ndarray:
        return rotate_vectors(self.quaternion, v)

    def angle_deg(self) -> float:
        return math.degrees(2 * math.atan2(math.sqrt(self.x**2 + self.y**2 + self.z**2), abs(self.w)))


def rot_from_euler(roll: float, pitch: float, yaw: float) -> Rotation:
    """Intrinsic Z-Y-X rotation: yaw about z, then pitch about y, then roll about x."""
    return Rotation.from_quaternion(quat_from_euler([roll, pitch, yaw]))


def apply(r: Rotation, v) -> np.ndarray:
    return r.apply(v)


@dataclass(frozen=True)
class EulerKnots:
    """Normally distributed (roll, pitch, yaw) knots every ``period`` seconds."""

    angles: np.ndarray  # (K, 3) degrees
    sigma: float
    period: float

    def __post_init__(self):
        a = np.array(self.angles, dtype=np.float64)
        if a.ndim != 2 or a.shape[1] != 3 or len(a) < 2:
            raise ContractError(f"knot angles must be (K>=2, 3), got {a.shape}")
        a.setflags(write=False)
        object.__setattr__(self, "angles", a)

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.angles)) * self.period

    @property
    def end(self) -> float:
        return (len(self.angles) - 1) * self.period


@dataclass(frozen=True)
class RotationSchedule:
    knots: EulerKnots

    def angles_at(self, t) -> np.ndarray:
        """Piecewise-linear Euler angles at time(s) ``t`` (seconds)."""
        t_arr = np.asarray(t, dtype=np.float64)
        if np.any(t_arr < 0) or np.any(t_arr > self.knots.end):
            raise ContractError(f"time outside schedule [0, {self.knots.end}]")
        u = t_arr / self.knots.period
        nearest = np.rint(u)
        # snap to knots so knot times reproduce the knot angles exactly
        u = np.where(np.abs(u - nearest) < 1e-9, nearest, u)
        last = len(self.knots.angles) - 2
        n = np.clip(np.floor(u), 0, last).astype(np.int64)
        f = (u - n)[..., None]
        a = self.knots.angles
        return (1.0 - f) * a[n] + f * a[n + 1]

    def quaternions_at(self, t) -> np.ndarray:
        return quat_from_euler(self.angles_at(t))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "roll", "pitch", "yaw"])
            for ti, (r, p, y) in zip(self.knots.times, self.knots.angles):
                w.writerow([repr(float(ti)), repr(float(r)), repr(float(p)), repr(float(y))])

    @classmethod
    def from_csv(cls, path, sigma: float = float("nan")) -> "RotationSchedule":
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        period = float(rows[1, 0] - rows[0, 0])
        return cls(EulerKnots(rows[:, 1:4], sigma=sigma, period=period))


def sample_schedule(sigma: float, period: float, duration: float, seed: int) -> RotationSchedule:
    """Draw ``ceil(duration / period) + 1`` knots with each angle ~ N(0, sigma) degrees."""
    if sigma < 0:
        raise ContractError(f"sigma must be >= 0, got {sigma}")
    if period <= 0 or duration <= 0:
        raise ContractError("period and duration must be positive")
    count = math.ceil(duration / period) + 1
    rng = np.random.default_rng(seed)
    angles = rng.normal(0.0, sigma, size=(count, 3)) if sigma > 0 else np.zeros((count, 3))
    return RotationSchedule(EulerKnots(angles, sigma=sigma, period=period))


def rotation_at(schedule: RotationSchedule, t: float) -> Rotation:
    return Rotation.from_quaternion(quat_from_euler(schedule.angles_at(float(t))))
