"""Synthetic buildings: Earth field plus magnetic dipoles, walked along corridors.

World frame: x east, y north, z up (meters).  A static accelerometer reads
``(0, 0, -9.81)`` in the world frame.  The device yaw follows the walking
heading, and a device rotated by ``R`` reads ``R.T @ v_world``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from magloc.data.trial import TARGET_RATE, BuildingSet, Trial
from magloc.errors import ConfigError
from magloc.geometry import quat_from_euler, rotate_vectors

GRAVITY = 9.81
# mu0 / (4 pi) in uT * m^3 / (A * m^2)
DIPOLE_SCALE = 0.1


@dataclass(frozen=True)
class SynthConfig:
    extent: tuple[float, float] = (40.0, 20.0)
    earth_field: tuple[float, float, float] = (0.0, 20.0, -44.0)
    dipole_count: int = 8
    dipole_moment: float = 3000.0
    dipole_depth: tuple[float, float] = (1.5, 3.0)
    waypoint_count: int = 14
    walk_speed: float = 1.2
    acc_noise: float = 0.05
    mag_noise: float = 0.1
    seed: int = 0
    trial_count: int = 6
    corridor_spacing: float = 10.0
    device_height: float = 1.0
    device_yaw: bool = True
    rate: float = TARGET_RATE

    def __post_init__(self):
        object.__setattr__(self, "extent", tuple(float(v) for v in self.extent))
        object.__setattr__(self, "earth_field", tuple(float(v) for v in self.earth_field))
        object.__setattr__(self, "dipole_depth", tuple(float(v) for v in self.dipole_depth))
        problems = []
        if self.walk_speed <= 0:
            problems.append("walk_speed must be > 0")
        if min(self.extent) <= 0:
            problems.append("extent must be positive")
        if self.dipole_count < 0:
            problems.append("dipole_count must be >= 0")
        if self.waypoint_count < 2:
            problems.append("waypoint_count must be >= 2")
        if self.trial_count < 1:
            problems.append("trial_count must be >= 1")
        if self.corridor_spacing <= 0 or self.corridor_spacing > min(self.extent):
            problems.append("corridor_spacing must be in (0, min(extent)]")
        if problems:
            raise ConfigError("; ".join(problems))

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "SynthConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @property
    def building(self) -> str:
        return f"synthetic-{self.seed}"


@dataclass(frozen=True)
class Dipoles:
    positions: np.ndarray  # (D, 3) m
    moments: np.ndarray  # (D, 3) A m^2

    def field(self, points) -> np.ndarray:
        """Dipole field in uT at world points (N, 3): scale * (3 r^(m.r^) - m) / |r|^3."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        out = np.zeros_like(points)
        for p, m in zip(self.positions, self.moments):
            r = points - p
            d = np.linalg.norm(r, axis=1, keepdims=True)
            rhat = r / d
            out += DIPOLE_SCALE * (3.0 * rhat * (rhat @ m)[:, None] - m) / d**3
        return out


def world_field(config: SynthConfig, dipoles: Dipoles, points) -> np.ndarray:
    return np.asarray(config.earth_field) + dipoles.field(points)


def make_dipoles(config: SynthConfig, rng: np.random.Generator) -> Dipoles:
    w, h = config.extent
    margin = 2.0
    n = config.dipole_count
    xy = rng.uniform([-margin, -margin], [w + margin, h + margin], size=(n, 2))
    lo, hi = config.dipole_depth
    z = config.device_height - rng.uniform(lo, hi, size=n)
    direction = rng.normal(size=(n, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    magnitude = config.dipole_moment * rng.uniform(0.5, 1.5, size=n)
    return Dipoles(np.column_stack([xy, z]), direction * magnitude[:, None])


def corridor_nodes(config: SynthConfig) -> np.ndarray:
    """Lattice of corridor junctions, inset from the walls."""
    w, h = config.extent
    s = config.corridor_spacing

    def axis(length):
        count = int(np.floor(length / s))
        inset = (length - (count - 1) * s) / 2 if count > 1 else length / 2
        return inset + s * np.arange(max(count, 1))

    xs, ys = axis(w), axis(h)
    return np.array([(x, y) for y in ys for x in xs])


def random_walk(nodes: np.ndarray, spacing: float, count: int, rng: np.random.Generator) -> np.ndarray:
    """Waypoints of a non-backtracking random walk on the corridor lattice."""
    d = np.linalg.norm(nodes[:, None] - nodes[None], axis=-1)
    adjacent = np.abs(d - spacing) < 1e-6
    path = [int(rng.integers(len(nodes)))]
    prev = -1
    for _ in range(count - 1):
        options = np.flatnonzero(adjacent[path[-1]])
        if len(options) > 1:
            options = options[options != prev]
        prev = path[-1]
        path.append(int(rng.choice(options)))
    return nodes[path]


def walk(waypoints: np.ndarray, speed: float, rate: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Constant-speed traversal: returns times, xy positions and heading (deg)."""
    seg = np.diff(waypoints, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    keep = seg_len > 0
    seg, seg_len = seg[keep], seg_len[keep]
    starts = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = starts[-1]
    t = np.arange(int(np.floor(total / speed * rate)) + 1) / rate
    s = np.minimum(t * speed, total)
    idx = np.clip(np.searchsorted(starts, s, side="right") - 1, 0, len(seg) - 1)
    frac = (s - starts[idx]) / seg_len[idx]
    xy = waypoints[:-1][keep][idx] + frac[:, None] * seg[idx]
    heading = np.degrees(np.arctan2(seg[idx, 1], seg[idx, 0]))
    return t, xy, heading


def synth_generate(config: SynthConfig) -> BuildingSet:
    """Deterministically generate ``trial_count`` walks through one building."""
    rng = np.random.default_rng(config.seed)
    dipoles = make_dipoles(config, rng)
    nodes = corridor_nodes(config)
    trials = []
    for k in range(config.trial_count):
        trng = np.random.default_rng([config.seed, k + 1])
        waypoints = random_walk(nodes, config.corridor_spacing, config.waypoint_count, trng)
        t, xy, heading = walk(waypoints, config.walk_speed, config.rate)
        pos = np.column_stack([xy, np.full(len(t), config.device_height)])
        yaw = heading if config.device_yaw else np.zeros_like(heading)
        q = quat_from_euler(np.column_stack([np.zeros_like(yaw), np.zeros_like(yaw), yaw]))
        q_inv = q * np.array([1.0, -1.0, -1.0, -1.0])
        b_world = world_field(config, dipoles, pos)
        g_world = np.broadcast_to([0.0, 0.0, -GRAVITY], b_world.shape)
        mag = rotate_vectors(q_inv, b_world)
        acc = rotate_vectors(q_inv, g_world)
        if config.mag_noise > 0:
            mag = mag + trng.normal(0.0, config.mag_noise, size=mag.shape)
        if config.acc_noise > 0:
            acc = acc + trng.normal(0.0, config.acc_noise, size=acc.shape)
        trials.append(Trial(config.building, f"trial_{k + 1}", t, mag, acc, pos, rate=config.rate))
    w, h = config.extent
    return BuildingSet(config.building, tuple(trials), "synthetic", (0.0, 0.0, w, h))
