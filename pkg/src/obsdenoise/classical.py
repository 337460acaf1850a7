"""Classical position estimators: quantizer inversion (midpoint), last-seen, dead reckoning."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .sensor import Belief, NoiseConfig, RawSighting, observe_distance, quantize, sighting_to_global
from .world import BALL, KinematicsConfig, Vec2

_BISECT_TOL = 1e-10


class OffGridError(ValueError):
    """Raised for a distance reading the quantizer can never produce."""


@dataclass(frozen=True)
class DistInterval:
    lo: float
    hi: float

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def width(self) -> float:
        return self.hi - self.lo


def _bisect(pred, a: float, b: float) -> float:
    """Boundary between pred(a) == True and pred(b) == False."""
    while b - a > _BISECT_TOL:
        m = 0.5 * (a + b)
        if pred(m):
            a = m
        else:
            b = m
    return 0.5 * (a + b)


@lru_cache(maxsize=4096)
def invert_distance_quantization(dq: float, cfg: NoiseConfig = NoiseConfig()) -> DistInterval:
    """Interval of true distances whose reading is exactly ``dq``.

    The reading is monotone in the true distance, so both edges are found by
    bisection on the reading itself.
    """
    if dq < 0 or not np.isfinite(dq):
        raise OffGridError(f"off-grid input: {dq!r}")
    if quantize(dq, cfg.dist_outstep) != dq:
        raise OffGridError(f"off-grid input: {dq!r} is not on the {cfg.dist_outstep} m grid")
    upper = max(1.0, 2.0 * dq + 1.0)
    while observe_distance(upper, cfg) <= dq:
        upper *= 2.0
    hi = _bisect(lambda d: observe_distance(d, cfg) <= dq, 0.0, upper)
    lo = 0.0 if dq == 0 else _bisect(lambda d: observe_distance(d, cfg) < dq, 0.0, upper)
    interval = DistInterval(lo, hi)
    if not interval.width > 0 or observe_distance(interval.mid, cfg) != dq:
        raise OffGridError(f"off-grid input: no distance reads as {dq!r}")
    return interval


@lru_cache(maxsize=4096)
def detectable_interval(dq: float, cfg: NoiseConfig = NoiseConfig()) -> DistInterval:
    """Inverted interval restricted to distances inside the visible range.

    Only the last cell below the visibility limit is affected: its upper
    edge lies past the range at which anything can be sighted.
    """
    iv = invert_distance_quantization(dq, cfg)
    if iv.lo < cfg.visible_distance < iv.hi:
        return DistInterval(iv.lo, cfg.visible_distance)
    return iv


def helios_estimate(s: RawSighting, observer_pos, body_dir: float, cfg: NoiseConfig = NoiseConfig()) -> Vec2:
    """Global position using the midpoint of the detectable distance interval."""
    mid = detectable_interval(s.quantized_dist, cfg).mid
    return sighting_to_global(mid, s.angle_deg, observer_pos, body_dir)


def naive_estimate(s: RawSighting, observer_pos, body_dir: float, cfg: NoiseConfig | None = None) -> Vec2:
    """Global position taking the quantized reading at face value."""
    return sighting_to_global(s.quantized_dist, s.angle_deg, observer_pos, body_dir)


SIGHTING_ESTIMATORS = {"helios": helios_estimate, "naive": naive_estimate}


def _require(b: Belief, obj: int) -> None:
    if not b.initialized(obj):
        raise ValueError(f"belief for object {obj} is uninitialized")


def last_seen_estimate(b: Belief, obj: int) -> Vec2:
    _require(b, obj)
    return Vec2(*map(float, b.est_pos[obj]))


def decay_sum(decay: float, pos_count):
    """sum_{k=1..n} decay**k, vectorized over ``pos_count``."""
    n = np.asarray(pos_count, dtype=float)
    return decay * (1.0 - decay**n) / (1.0 - decay)


def extrapolate_positions(est_pos, est_vel, pos_count, decay: float) -> np.ndarray:
    est_pos = np.asarray(est_pos, dtype=float)
    return est_pos + np.asarray(est_vel, dtype=float) * decay_sum(decay, pos_count)[..., None]


def extrapolate_estimate(b: Belief, obj: int, cfg: KinematicsConfig = KinematicsConfig()) -> Vec2:
    _require(b, obj)
    decay = cfg.ball_decay if obj == BALL else cfg.player_decay
    out = extrapolate_positions(b.est_pos[obj], b.est_vel[obj], b.pos_count[obj], decay)
    return Vec2(*map(float, out))
