"""Ground-truth trajectory generator with simplified server kinematics.

Objects are addressed by a flat index: 0..10 are left players 1..11,
11..21 are right players 1..11 and 22 is the ball.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

N_PLAYERS = 22
BALL = 22
N_OBJECTS = 23

PITCH_HALF_LENGTH = 52.5
PITCH_HALF_WIDTH = 34.0
PITCH_MARGIN = 5.0
PITCH_BOUNDS = np.array([PITCH_HALF_LENGTH + PITCH_MARGIN, PITCH_HALF_WIDTH + PITCH_MARGIN])

KICKABLE_DISTANCE = 1.0
MAX_TURN = 45.0


class Vec2(NamedTuple):
    x: float
    y: float


def object_index(side: str, unum: int) -> int:
    """Map ``("L", 9)`` style ids to the flat object index. ``unum`` 0 is the ball."""
    if unum == 0:
        return BALL
    if not 1 <= unum <= 11:
        raise ValueError(f"uniform number out of range: {unum}")
    if side == "L":
        return unum - 1
    if side == "R":
        return 10 + unum
    raise ValueError(f"unknown side: {side!r}")


def object_name(index: int) -> str:
    if index == BALL:
        return "B"
    if 0 <= index < 11:
        return f"L{index + 1}"
    if 11 <= index < 22:
        return f"R{index - 10}"
    raise ValueError(f"object index out of range: {index}")


def parse_object(name: str) -> int:
    """Inverse of :func:`object_name`; accepts ``L9``, ``R5`` or ``B``."""
    name = name.strip().upper()
    if name in ("B", "BALL"):
        return BALL
    if len(name) < 2 or name[0] not in "LR" or not name[1:].isdigit():
        raise ValueError(f"bad object id: {name!r}")
    return object_index(name[0], int(name[1:]))


def normalize_angle(deg):
    """Wrap degrees into [-180, 180)."""
    return (np.asarray(deg, dtype=float) + 180.0) % 360.0 - 180.0


@dataclass(frozen=True)
class KinematicsConfig:
    player_decay: float = 0.4
    ball_decay: float = 0.94
    player_speed_max: float = 1.05
    ball_speed_max: float = 3.0
    player_accel_max: float = 1.0
    player_dash_max: float = 0.6
    ball_accel_max: float = 2.7
    episode_len: int = 6000

    def __post_init__(self):
        for name in ("player_speed_max", "ball_speed_max", "player_accel_max", "player_dash_max", "ball_accel_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("player_decay", "ball_decay"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.episode_len < 0:
            raise ValueError("episode_len must be >= 0")

    def limits(self, kind: str) -> tuple[float, float, float]:
        """(decay, speed_max, accel_max) for ``kind`` in {"player", "ball"}."""
        if kind == "player":
            return self.player_decay, self.player_speed_max, self.player_accel_max
        if kind == "ball":
            return self.ball_decay, self.ball_speed_max, self.ball_accel_max
        raise ValueError(f"unknown object kind: {kind!r}")


@dataclass(frozen=True)
class ObjectState:
    pos: Vec2
    vel: Vec2
    body_dir: float | None = None


def _clamp_norm(v: np.ndarray, limit: float) -> np.ndarray:
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    scale = np.where(norm > limit, limit / np.maximum(norm, 1e-300), 1.0)
    return v * scale


def step_arrays(pos, vel, accel, decay, speed_max):
    """Vectorized kinematic update for arrays of shape (n, 2).

    accelerate -> clamp speed -> move -> decay, then clamp to the pitch
    margin and zero the velocity on any clamped axis.
    """
    v = _clamp_norm(vel + accel, speed_max)
    new_pos = pos + v
    new_vel = v * decay
    clamped = np.clip(new_pos, -PITCH_BOUNDS, PITCH_BOUNDS)
    new_vel = np.where(clamped != new_pos, 0.0, new_vel)
    return clamped, new_vel


def step_object(s: ObjectState, accel: Vec2, cfg: KinematicsConfig, kind: str = "player") -> ObjectState:
    decay, speed_max, accel_max = cfg.limits(kind)
    a = np.array(accel, dtype=float)
    p = np.array(s.pos, dtype=float)
    v = np.array(s.vel, dtype=float)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(p)) and np.all(np.isfinite(v))):
        raise ValueError("non-finite object state or acceleration")
    if np.hypot(*a) > accel_max * (1 + 1e-12):
        raise ValueError(f"|accel| exceeds accel_max={accel_max} for {kind}")
    new_pos, new_vel = step_arrays(p[None], v[None], a[None], decay, speed_max)
    return ObjectState(Vec2(*map(float, new_pos[0])), Vec2(*map(float, new_vel[0])), s.body_dir)


@dataclass
class WorldState:
    """One cycle of ground truth. ``pos``/``vel`` hold all 23 objects."""

    cycle: int
    pos: np.ndarray  # (23, 2)
    vel: np.ndarray  # (23, 2)
    body_dir: np.ndarray  # (22,)

    @property
    def ball(self) -> ObjectState:
        return ObjectState(Vec2(*self.pos[BALL]), Vec2(*self.vel[BALL]))

    @property
    def players(self) -> list[ObjectState]:
        return [self.player_state(i) for i in range(N_PLAYERS)]

    def player_state(self, index: int) -> ObjectState:
        return ObjectState(Vec2(*self.pos[index]), Vec2(*self.vel[index]), float(self.body_dir[index]))

    def copy(self) -> "WorldState":
        return WorldState(self.cycle, self.pos.copy(), self.vel.copy(), self.body_dir.copy())


@lru_cache(maxsize=None)
def _formation_table() -> dict:
    text = resources.files("obsdenoise").joinpath("formation.json").read_text()
    return json.loads(text)


def formation(name: str = "kickoff") -> np.ndarray:
    """(22, 2) positions for both teams; right team is the point mirror of the left."""
    table = _formation_table()[name]
    left = np.array([table[str(u)] for u in range(1, 12)], dtype=float)
    return np.concatenate([left, -left])


def kickoff_state() -> WorldState:
    pos = np.zeros((N_OBJECTS, 2))
    pos[:N_PLAYERS] = formation("kickoff")
    body = np.zeros(N_PLAYERS)
    body[11:] = -180.0
    return WorldState(0, pos, np.zeros((N_OBJECTS, 2)), body)


@dataclass(frozen=True)
class Actions:
    accel: np.ndarray  # (22, 2)
    turn: np.ndarray  # (22,) degrees, |turn| <= MAX_TURN
    kick: np.ndarray | None  # ball acceleration or None


@lru_cache(maxsize=64)
def _wander_params(seed: int):
    rng = np.random.default_rng([seed, 0x5EED])
    freq = rng.uniform(1 / 900, 1 / 200, size=(N_PLAYERS, 2, 3))
    phase = rng.uniform(0, 2 * np.pi, size=(N_PLAYERS, 2, 3))
    amp = rng.uniform(0.5, 1.0, size=(N_PLAYERS, 2, 3))
    amp /= amp.sum(axis=2, keepdims=True)
    reach = np.full((N_PLAYERS, 2), 16.0)
    reach[[0, 11]] = (3.0, 4.0)  # goalies stay home
    scan_freq = rng.uniform(1 / 40, 1 / 12, size=N_PLAYERS)
    scan_phase = rng.uniform(0, 2 * np.pi, size=N_PLAYERS)
    return freq, phase, amp * reach[:, :, None], scan_freq, scan_phase


def scripted_policy(state: WorldState, seed: int, cfg: KinematicsConfig | None = None) -> Actions:
    """Deterministic stand-in for team behaviour.

    Each player steers toward a formation slot shifted with the ball plus a
    smooth seeded wander; the nearest player of each team chases the ball and
    kicks it toward the opposing goal when in range. Bodies track the ball
    with a seeded scanning sway.
    """
    cfg = cfg or KinematicsConfig()
    freq, phase, amp, scan_freq, scan_phase = _wander_params(seed)
    t = state.cycle
    pos = state.pos[:N_PLAYERS]
    vel = state.vel[:N_PLAYERS]
    ball = state.pos[BALL]

    # team-relative frame: the right team sees a point-mirrored world
    sign = np.repeat([1.0, -1.0], 11)[:, None]
    rel_ball = ball[None, :] * sign
    home = formation("play") * sign
    slot = home * (0.6, 0.55) + rel_ball * (0.55, 0.45)
    wander = (amp * np.sin(2 * np.pi * freq * t + phase)).sum(axis=2)
    target = (slot + wander) * sign
    target[[0, 11], 0] = np.clip(target[[0, 11], 0], -52.0, 52.0)

    dist_to_ball = np.linalg.norm(pos - ball, axis=1)
    chasers = [int(np.argmin(dist_to_ball[:11])), 11 + int(np.argmin(dist_to_ball[11:]))]
    target[chasers] = ball + state.vel[BALL] * 2.0

    # critically damped steering, bounded by accel_max
    accel = 0.15 * (target - pos) - 0.5 * vel
    accel = _clamp_norm(accel, min(cfg.player_dash_max, cfg.player_accel_max) * (1 - 1e-9))

    to_ball = np.degrees(np.arctan2(ball[1] - pos[:, 1], ball[0] - pos[:, 0]))
    sway = 50.0 * np.sin(2 * np.pi * scan_freq * t + scan_phase)
    desired = normalize_angle(to_ball + sway)
    turn = np.clip(normalize_angle(desired - state.body_dir), -MAX_TURN, MAX_TURN)

    kick = None
    kicker = min(chasers, key=lambda i: dist_to_ball[i])
    if dist_to_ball[kicker] <= KICKABLE_DISTANCE:
        rng = np.random.default_rng([seed, t, 1])
        goal_x = PITCH_HALF_LENGTH if kicker < 11 else -PITCH_HALF_LENGTH
        aim = math.atan2(-ball[1], goal_x - ball[0]) + rng.uniform(-1.2, 1.2)
        power = rng.uniform(0.8, 1.0) * cfg.ball_accel_max
        kick = power * np.array([math.cos(aim), math.sin(aim)]) - state.vel[BALL]
        kick = _clamp_norm(kick, cfg.ball_accel_max * (1 - 1e-9))
    return Actions(accel, turn, kick)


def world_step(state: WorldState, actions: Actions, cfg: KinematicsConfig) -> WorldState:
    pos = np.empty_like(state.pos)
    vel = np.empty_like(state.vel)
    pos[:N_PLAYERS], vel[:N_PLAYERS] = step_arrays(
        state.pos[:N_PLAYERS], state.vel[:N_PLAYERS], actions.accel, cfg.player_decay, cfg.player_speed_max
    )
    ball_accel = np.zeros((1, 2)) if actions.kick is None else actions.kick[None]
    bp, bv = step_arrays(state.pos[BALL:], state.vel[BALL:], ball_accel, cfg.ball_decay, cfg.ball_speed_max)
    pos[BALL], vel[BALL] = bp[0], bv[0]
    body = normalize_angle(state.body_dir + actions.turn)
    return WorldState(state.cycle + 1, pos, vel, body)


class Trajectory:
    """Stacked states of one episode: ``pos``/``vel`` are (T, 23, 2), ``body_dir`` (T, 22)."""

    def __init__(self, pos: np.ndarray, vel: np.ndarray, body_dir: np.ndarray, seed: int | None = None):
        self.pos = pos
        self.vel = vel
        self.body_dir = body_dir
        self.seed = seed

    def __len__(self) -> int:
        return len(self.pos)

    def __getitem__(self, cycle: int) -> WorldState:
        if cycle < 0:
            cycle += len(self)
        return WorldState(cycle, self.pos[cycle].copy(), self.vel[cycle].copy(), self.body_dir[cycle].copy())

    def __iter__(self) -> Iterator[WorldState]:
        return (self[i] for i in range(len(self)))


def run_episode(cfg: KinematicsConfig, seed: int) -> Trajectory:
    n = cfg.episode_len + 1
    pos = np.empty((n, N_OBJECTS, 2))
    vel = np.empty((n, N_OBJECTS, 2))
    body = np.empty((n, N_PLAYERS))
    state = kickoff_state()
    for t in range(n):
        pos[t], vel[t], body[t] = state.pos, state.vel, state.body_dir
        if t + 1 < n:
            state = world_step(state, scripted_policy(state, seed, cfg), cfg)
    return Trajectory(pos, vel, body, seed)


TRAJECTORY_COLUMNS = ("cycle", "side", "unum", "x", "y", "vx", "vy", "body_dir")


def write_trajectory_csv(traj: Trajectory, path: str | Path, header_comment: str | None = None) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        for t in range(len(traj)):
            for i in range(N_OBJECTS):
                if i == BALL:
                    side, unum, body = "B", 0, ""
                else:
                    name = object_name(i)
                    side, unum, body = name[0], int(name[1:]), f"{traj.body_dir[t, i]:.4f}"
                x, y = traj.pos[t, i]
                vx, vy = traj.vel[t, i]
                w.writerow((t, side, unum, f"{x:.6f}", f"{y:.6f}", f"{vx:.6f}", f"{vy:.6f}", body))


def read_trajectory_csv(path: str | Path) -> Trajectory:
    with Path(path).open(newline="") as fh:
        rows = [r for r in csv.DictReader(line for line in fh if not line.startswith("#"))]
    n = max(int(r["cycle"]) for r in rows) + 1
    pos = np.zeros((n, N_OBJECTS, 2))
    vel = np.zeros((n, N_OBJECTS, 2))
    body = np.zeros((n, N_PLAYERS))
    for r in rows:
        t = int(r["cycle"])
        i = object_index(r["side"], int(r["unum"]))
        pos[t, i] = float(r["x"]), float(r["y"])
        vel[t, i] = float(r["vx"]), float(r["vy"])
        if i != BALL:
            body[t, i] = float(r["body_dir"])
    return Trajectory(pos, vel, body)
