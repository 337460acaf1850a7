"""Visual sensor model: view cone, quantized distance, rounded angle, pos_count belief."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .world import BALL, N_OBJECTS, Vec2, WorldState, normalize_angle, object_name

VIEW_POLICIES = ("narrow", "normal", "wide", "rotate", "ball_distance")

# absorbs representation error when a ratio should land exactly on .5
_HALF_NUDGE = 1e-9


class ViewWidth(enum.Enum):
    NARROW = (60.0, 1)
    NORMAL = (120.0, 2)
    WIDE = (180.0, 3)

    @property
    def angle(self) -> float:
        return self.value[0]

    @property
    def cost(self) -> int:
        """Cycles until the sensor is available again."""
        return self.value[1]

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_label(cls, label: str) -> "ViewWidth":
        try:
            return cls[label.upper()]
        except KeyError:
            raise ValueError(f"unknown view width {label!r}") from None


@dataclass(frozen=True)
class NoiseConfig:
    dist_qstep: float = 0.1
    dist_outstep: float = 0.1
    visible_distance: float = 60.0
    view_policy: str = "ball_distance"
    # ball-distance policy thresholds (m): Narrow below the first, Normal below the second
    narrow_within: float = 15.0
    normal_within: float = 30.0

    def __post_init__(self):
        if self.dist_qstep <= 0 or self.dist_outstep <= 0:
            raise ValueError("quantization steps must be positive")
        if self.visible_distance <= 0:
            raise ValueError("visible_distance must be positive")
        if self.view_policy not in VIEW_POLICIES:
            raise ValueError(f"unknown view policy {self.view_policy!r}; choose from {sorted(VIEW_POLICIES)}")


def _rint(x):
    """Round half away from zero."""
    x = np.asarray(x, dtype=float)
    return np.copysign(np.floor(np.abs(x) + 0.5 + _HALF_NUDGE), x)


def quantize(v, q: float):
    """``q * rint(v / q)`` with half-away rounding; grid values are cleaned to 12 decimals."""
    if not q > 0:
        raise ValueError("quantization step must be positive")
    v = np.asarray(v, dtype=float)
    out = np.round(_rint(v / q) * q, 12) + 0.0  # + 0.0 folds -0.0
    return float(out) if out.ndim == 0 else out


def observe_distance(d, cfg: NoiseConfig = NoiseConfig()):
    """Server-style distance reading: quantize in log space, then on a linear grid."""
    d = np.asarray(d, dtype=float)
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise ValueError("distance must be finite and non-negative")
    with np.errstate(divide="ignore"):
        logd = np.log(np.where(d > 0, d, 1.0))
    out = quantize(np.exp(quantize(logd, cfg.dist_qstep)), cfg.dist_outstep)
    out = np.where(d > 0, out, 0.0)
    return float(out) if out.ndim == 0 else out


def observe_angle(a):
    """Round to integer degrees and wrap into [-180, 179]."""
    n = _rint(a)
    out = ((n + 180.0) % 360.0 - 180.0).astype(int)
    return int(out) if out.ndim == 0 else out


def relative_polar(observer_pos, body_dir: float, obj_pos):
    """True (distance, bearing) of ``obj_pos`` as seen from the observer; bearing in [-180, 180)."""
    delta = np.asarray(obj_pos, dtype=float) - np.asarray(observer_pos, dtype=float)
    dist = np.hypot(delta[..., 0], delta[..., 1])
    bearing = normalize_angle(np.degrees(np.arctan2(delta[..., 1], delta[..., 0])) - body_dir)
    return dist, bearing


def visible(observer_pos, body_dir: float, obj_pos, vw: ViewWidth, cfg: NoiseConfig = NoiseConfig()):
    dist, bearing = relative_polar(observer_pos, body_dir, obj_pos)
    out = (dist <= cfg.visible_distance) & (np.abs(bearing) <= vw.angle / 2)
    return bool(out) if np.ndim(out) == 0 else out


# --- view schedule ----------------------------------------------------------

_ROTATION = (ViewWidth.NARROW, ViewWidth.NORMAL, ViewWidth.WIDE)
_ROTATION_PERIOD = sum(v.cost for v in _ROTATION)


def view_schedule(cycle: int, policy: str = "rotate") -> tuple[ViewWidth, bool]:
    """Width in use at ``cycle`` and whether a sighting arrives, for cycle-driven policies.

    A sighting at width w is followed by ``w.cost - 1`` blind cycles. The
    ``rotate`` policy cycles Narrow, Normal, Wide.
    """
    if cycle < 0:
        raise ValueError("cycle must be >= 0")
    if policy in ("narrow", "normal", "wide"):
        vw = ViewWidth.from_label(policy)
        return vw, cycle % vw.cost == 0
    if policy == "rotate":
        phase = cycle % _ROTATION_PERIOD
        start = 0
        for vw in _ROTATION:
            if phase < start + vw.cost:
                return vw, phase == start
            start += vw.cost
    raise ValueError(f"view_schedule needs a cycle-driven policy, got {policy!r}")


class ViewScheduler:
    """Stateful scheduler; also handles the state-dependent ``ball_distance`` policy.

    When the sensor becomes ready a width is chosen, a sighting is taken and
    the sensor is blocked for ``cost - 1`` further cycles.
    """

    def __init__(self, cfg: NoiseConfig = NoiseConfig()):
        self.cfg = cfg
        self.ready_at = 0
        self.current = ViewWidth.NARROW

    def step(self, cycle: int, ball_distance: float | None = None) -> tuple[ViewWidth, bool]:
        policy = self.cfg.view_policy
        if policy != "ball_distance":
            self.current, sees = view_schedule(cycle, policy)
            return self.current, sees
        if cycle < self.ready_at:
            return self.current, False
        if ball_distance is None:
            raise ValueError("ball_distance policy needs the observer-ball distance")
        if ball_distance < self.cfg.narrow_within:
            self.current = ViewWidth.NARROW
        elif ball_distance < self.cfg.normal_within:
            self.current = ViewWidth.NORMAL
        else:
            self.current = ViewWidth.WIDE
        self.ready_at = cycle + self.current.cost
        return self.current, True


# --- observations -----------------------------------------------------------


@dataclass(frozen=True)
class RawSighting:
    obj: int
    quantized_dist: float
    angle_deg: int


@dataclass(frozen=True)
class Observation:
    cycle: int
    observer: int
    observer_pos: Vec2
    observer_body: float
    view_width: ViewWidth
    sightings: tuple[RawSighting, ...] = ()

    def sighting(self, obj: int) -> RawSighting | None:
        for s in self.sightings:
            if s.obj == obj:
                return s
        return None


def sense(
    world: WorldState,
    observer: int,
    vw: ViewWidth,
    cfg: NoiseConfig = NoiseConfig(),
    objects: Sequence[int] | None = None,
    full_scan: bool = False,
) -> Observation:
    """Noisy view of ``world`` from ``observer``.

    ``objects`` restricts which objects are considered (all others by default).
    ``full_scan`` drops the cone test; it is used only for the kickoff scan
    that initializes a belief.
    """
    if not 0 <= observer < BALL:
        raise ValueError(f"observer must be a player index, got {observer}")
    idx = np.array([i for i in (range(N_OBJECTS) if objects is None else objects) if i != observer], dtype=int)
    opos = world.pos[observer]
    body = float(world.body_dir[observer])
    sightings: list[RawSighting] = []
    if len(idx):
        dist, bearing = relative_polar(opos, body, world.pos[idx])
        mask = dist <= cfg.visible_distance
        if not full_scan:
            mask &= np.abs(bearing) <= vw.angle / 2
        if mask.any():
            dq = observe_distance(dist[mask], cfg)
            ang = observe_angle(bearing[mask])
            sightings = [RawSighting(int(i), float(q), int(a)) for i, q, a in zip(idx[mask], dq, ang)]
    return Observation(world.cycle, observer, Vec2(*map(float, opos)), body, vw, tuple(sightings))


OBS_LOG_COLUMNS = ("cycle", "observer", "object", "quantized_dist", "angle_deg", "view_width", "seen_flag")


def observation_rows(obs: Observation, objects: Iterable[int]):
    """One log row per tracked object; unsighted objects get empty readings."""
    for obj in objects:
        s = obs.sighting(obj)
        yield (obs.cycle, object_name(obs.observer), object_name(obj),
               "" if s is None else f"{s.quantized_dist:.1f}", "" if s is None else s.angle_deg,
               obs.view_width.label, int(s is not None))


def write_observation_log(observations: Iterable[Observation], objects: Sequence[int], path: str | Path,
                          header: str = "") -> None:
    with Path(path).open("w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OBS_LOG_COLUMNS)
        for obs in observations:
            w.writerows(observation_rows(obs, objects))


# --- belief -----------------------------------------------------------------

Estimator = Callable[[RawSighting, Vec2, float], Vec2]


@dataclass
class Belief:
    """Per-object tracked estimate for one observer.

    ``pos_count[i]`` is the number of cycles since object ``i`` was last
    sighted; -1 marks an object never sighted.
    """

    cycle: int = -1
    est_pos: np.ndarray = field(default_factory=lambda: np.zeros((N_OBJECTS, 2)))
    est_vel: np.ndarray = field(default_factory=lambda: np.zeros((N_OBJECTS, 2)))
    pos_count: np.ndarray = field(default_factory=lambda: np.full(N_OBJECTS, -1, dtype=int))

    def initialized(self, obj: int) -> bool:
        return bool(self.pos_count[obj] >= 0)

    def copy(self) -> "Belief":
        return Belief(self.cycle, self.est_pos.copy(), self.est_vel.copy(), self.pos_count.copy())


def update_belief(b: Belief, obs: Observation, estimator: Estimator) -> Belief:
    if b.cycle >= 0 and obs.cycle != b.cycle + 1:
        raise ValueError(f"observation cycle {obs.cycle} does not follow belief cycle {b.cycle}")
    out = b.copy()
    out.cycle = obs.cycle
    seen = np.zeros(N_OBJECTS, dtype=bool)
    for s in obs.sightings:
        new_pos = np.asarray(estimator(s, obs.observer_pos, obs.observer_body), dtype=float)
        i = s.obj
        if b.pos_count[i] >= 0:
            out.est_vel[i] = (new_pos - b.est_pos[i]) / (b.pos_count[i] + 1)
        out.est_pos[i] = new_pos
        out.pos_count[i] = 0
        seen[i] = True
    tracked = ~seen & (b.pos_count >= 0)
    out.pos_count[tracked] += 1
    return out


def sighting_to_global(dist: float, angle_deg: float, observer_pos, body_dir: float) -> Vec2:
    theta = math.radians(body_dir + angle_deg)
    return Vec2(observer_pos[0] + dist * math.cos(theta), observer_pos[1] + dist * math.sin(theta))
