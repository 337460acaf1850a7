"""Aligned (noisy, true) records for one observer/object pair, window extraction and splits."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, fields
from functools import partial
from multiprocessing import Pool
from pathlib import Path
from typing import Sequence

import numpy as np

from .classical import SIGHTING_ESTIMATORS
from .sensor import Belief, NoiseConfig, Observation, ViewScheduler, sense, update_belief
from .world import BALL, KinematicsConfig, object_name, parse_object, run_episode

FEATURE_SCALE_POS = (52.5, 34.0)
FEATURE_SCALE_VEL = 1.05
POS_COUNT_CAP = 30
N_FEATURES = 10
FEATURE_CLIP = 1.2


@dataclass(frozen=True)
class DatasetConfig:
    episodes: int = 40
    seed: int = 0
    observer: str = "L9"
    object: str = "L5"
    warmup: int = 5
    window: int = 5
    filler: str = "helios"
    val_fraction: float = 0.2

    def __post_init__(self):
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        if self.filler not in SIGHTING_ESTIMATORS:
            raise ValueError(f"unknown belief filler {self.filler!r}")
        if self.warmup < self.window - 1:
            raise ValueError("warmup must cover the window history")
        if parse_object(self.observer) == BALL:
            raise ValueError("the observer must be a player")
        if parse_object(self.observer) == parse_object(self.object):
            raise ValueError("observer and object must differ")


@dataclass(frozen=True)
class DatasetRecord:
    """One cycle of one tracked pair. ``helios_*``/``raw_*`` are the last-seen
    positions under midpoint inversion and under the raw reading; ``est_*`` is
    the belief the features are built from."""

    episode: int
    cycle: int
    observer: str
    object: str
    seen: int
    est_x: float
    est_y: float
    est_vx: float
    est_vy: float
    pos_count: int
    obs_x: float
    obs_y: float
    obs_body: float
    true_x: float
    true_y: float
    true_vx: float
    true_vy: float
    helios_x: float
    helios_y: float
    raw_x: float
    raw_y: float


COLUMNS = tuple(f.name for f in fields(DatasetRecord))
_INT_COLUMNS = ("episode", "cycle", "seen", "pos_count")
_STR_COLUMNS = ("observer", "object")


class Dataset:
    """Column store of :class:`DatasetRecord` rows (numpy arrays keyed by column)."""

    def __init__(self, columns: dict[str, np.ndarray], header: str = ""):
        missing = [c for c in COLUMNS if c not in columns]
        if missing:
            raise ValueError(f"dataset is missing columns: {missing}")
        self.columns = columns
        self.header = header

    def __len__(self) -> int:
        return len(self.columns["cycle"])

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def xy(self, prefix: str) -> np.ndarray:
        return np.stack([self.columns[f"{prefix}_x"], self.columns[f"{prefix}_y"]], axis=1)

    def record(self, i: int) -> DatasetRecord:
        return DatasetRecord(*(self.columns[c][i].item() for c in COLUMNS))

    def records(self) -> list[DatasetRecord]:
        return [self.record(i) for i in range(len(self))]

    def take(self, mask_or_index) -> "Dataset":
        return Dataset({k: v[mask_or_index] for k, v in self.columns.items()}, self.header)

    @classmethod
    def concat(cls, parts: Sequence["Dataset"], header: str = "") -> "Dataset":
        return cls({c: np.concatenate([p.columns[c] for p in parts]) for c in COLUMNS}, header)

    @property
    def episodes(self) -> np.ndarray:
        return np.unique(self.columns["episode"])


def generate_episode(
    episode: int,
    seed: int,
    kin: KinematicsConfig,
    noise: NoiseConfig,
    dcfg: DatasetConfig,
    observations: list | None = None,
) -> Dataset:
    """Simulate one episode and record the tracked pair for cycles 1..episode_len.

    The belief is initialized at cycle 0 by a full (cone-free) kickoff scan.
    Every observation, including that scan, is appended to ``observations``
    when a list is given.
    """
    observer, obj = parse_object(dcfg.observer), parse_object(dcfg.object)
    traj = run_episode(kin, seed)
    fillers = {name: partial(fn, cfg=noise) for name, fn in SIGHTING_ESTIMATORS.items()}
    tracks = {"est": dcfg.filler, "helios": "helios", "raw": "naive"}
    beliefs = {k: Belief() for k in tracks}

    world0 = traj[0]
    obs0 = sense(world0, observer, ViewScheduler(noise).current, noise, objects=[obj], full_scan=True)
    for k, filler in tracks.items():
        beliefs[k] = update_belief(beliefs[k], obs0, fillers[filler])
    if observations is not None:
        observations.append(obs0)

    n = kin.episode_len
    out = {c: np.zeros(n, dtype=float) for c in COLUMNS if c not in _STR_COLUMNS}
    scheduler = ViewScheduler(noise)
    for t in range(1, n + 1):
        world = traj[t]
        ball_dist = float(np.hypot(*(world.pos[BALL] - world.pos[observer])))
        vw, sees = scheduler.step(t, ball_dist)
        if sees:
            obs = sense(world, observer, vw, noise, objects=[obj])
        else:
            obs = Observation(t, observer, tuple(world.pos[observer]), float(world.body_dir[observer]), vw)
        for k, filler in tracks.items():
            beliefs[k] = update_belief(beliefs[k], obs, fillers[filler])
        if observations is not None:
            observations.append(obs)
        r = t - 1
        b = beliefs["est"]
        out["cycle"][r] = t
        out["seen"][r] = obs.sighting(obj) is not None
        out["est_x"][r], out["est_y"][r] = b.est_pos[obj]
        out["est_vx"][r], out["est_vy"][r] = b.est_vel[obj]
        out["pos_count"][r] = b.pos_count[obj]
        out["obs_x"][r], out["obs_y"][r] = world.pos[observer]
        out["obs_body"][r] = world.body_dir[observer]
        out["true_x"][r], out["true_y"][r] = world.pos[obj]
        out["true_vx"][r], out["true_vy"][r] = world.vel[obj]
        out["helios_x"][r], out["helios_y"][r] = beliefs["helios"].est_pos[obj]
        out["raw_x"][r], out["raw_y"][r] = beliefs["raw"].est_pos[obj]
    out["episode"][:] = episode
    for c in _INT_COLUMNS:
        out[c] = out[c].astype(np.int64)
    out["observer"] = np.full(n, object_name(observer))
    out["object"] = np.full(n, object_name(obj))
    return Dataset(out)


def _episode_job(args):
    return generate_episode(*args)


def generate_dataset(
    dcfg: DatasetConfig,
    kin: KinematicsConfig = KinematicsConfig(),
    noise: NoiseConfig = NoiseConfig(),
    jobs: int = 1,
    header: str = "",
    observations: list | None = None,
) -> Dataset:
    """Episodes ``i = 0..n-1`` use seed ``dcfg.seed + i``; assembly is ordered by episode id.

    Collecting ``observations`` forces a serial run.
    """
    tasks = [(i, dcfg.seed + i, kin, noise, dcfg) for i in range(dcfg.episodes)]
    if observations is not None:
        parts = [generate_episode(*t, observations=observations) for t in tasks]
    elif jobs > 1:
        with Pool(jobs) as pool:
            parts = pool.map(_episode_job, tasks)
    else:
        parts = [_episode_job(t) for t in tasks]
    return Dataset.concat(parts, header)


def _fmt(col: str, v) -> str:
    if col in _INT_COLUMNS:
        return str(int(v))
    if col in _STR_COLUMNS:
        return str(v)
    return f"{float(v):.6f}"


def write_dataset(ds: Dataset, path: str | Path) -> None:
    path = Path(path)
    buf = io.StringIO()
    if ds.header:
        buf.write(f"# {ds.header}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    cols = [ds.columns[c] for c in COLUMNS]
    for i in range(len(ds)):
        w.writerow([_fmt(c, col[i]) for c, col in zip(COLUMNS, cols)])
    try:
        path.write_text(buf.getvalue())
    except OSError as exc:
        raise OSError(f"cannot write dataset to {path}: {exc}") from exc


def read_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read dataset {path}: {exc}") from exc
    lines = text.splitlines()
    header = ""
    if lines and lines[0].startswith("#"):
        header = lines[0][1:].strip()
        lines = lines[1:]
    reader = csv.reader(lines)
    names = next(reader, None)
    if names is None or tuple(names[: len(COLUMNS)]) != COLUMNS:
        raise ValueError(f"{path}: unexpected dataset columns {names}")
    rows = list(reader)
    raw = list(zip(*rows)) if rows else [()] * len(COLUMNS)
    columns = {}
    for c, values in zip(COLUMNS, raw):
        if c in _INT_COLUMNS:
            columns[c] = np.array(values, dtype=np.int64)
        elif c in _STR_COLUMNS:
            columns[c] = np.array(values, dtype=str)
        else:
            columns[c] = np.array(values, dtype=float)
    return Dataset(columns, header)


# --- features and windows ------------------------------------------------------


def encode_features(seen, est_pos, est_vel, pos_count, obs_pos, obs_body) -> np.ndarray:
    """Per-cycle 10-value feature vectors, clipped to +-1.2.

    Order: seen, est x/y, est vx/vy, capped pos_count, observer x/y,
    sin/cos of observer body direction.
    """
    seen = np.asarray(seen, dtype=float)
    est_pos = np.asarray(est_pos, dtype=float).reshape(-1, 2)
    est_vel = np.asarray(est_vel, dtype=float).reshape(-1, 2)
    obs_pos = np.asarray(obs_pos, dtype=float).reshape(-1, 2)
    body = np.radians(np.asarray(obs_body, dtype=float)).reshape(-1)
    pc = np.minimum(np.asarray(pos_count, dtype=float).reshape(-1), POS_COUNT_CAP) / POS_COUNT_CAP
    feats = np.column_stack(
        [
            seen.reshape(-1),
            est_pos / FEATURE_SCALE_POS,
            est_vel / FEATURE_SCALE_VEL,
            pc,
            obs_pos / FEATURE_SCALE_POS,
            np.sin(body),
            np.cos(body),
        ]
    )
    return np.clip(feats, -FEATURE_CLIP, FEATURE_CLIP)


def encode_window(history: Sequence[DatasetRecord], window: int = 5) -> np.ndarray:
    """(window, 10) feature block from consecutive records, oldest first."""
    if len(history) != window:
        raise ValueError(f"expected {window} records, got {len(history)}")
    cycles = [r.cycle for r in history]
    if any(b - a != 1 for a, b in zip(cycles, cycles[1:])) or len({r.episode for r in history}) != 1:
        raise ValueError(f"window cycles are not consecutive: {cycles}")
    return encode_features(
        [r.seen for r in history],
        [(r.est_x, r.est_y) for r in history],
        [(r.est_vx, r.est_vy) for r in history],
        [r.pos_count for r in history],
        [(r.obs_x, r.obs_y) for r in history],
        [r.obs_body for r in history],
    )


def normalize_position(p) -> np.ndarray:
    return np.asarray(p, dtype=float) / FEATURE_SCALE_POS


def denormalize_position(p) -> np.ndarray:
    return np.asarray(p, dtype=float) * FEATURE_SCALE_POS


@dataclass
class Windows:
    """Stacked window samples plus the per-target metadata evaluation needs."""

    x: np.ndarray  # (N, window, 10)
    y: np.ndarray  # (N, 2) normalized true position at the target cycle
    target_rows: np.ndarray  # row index of each target cycle in the source dataset
    source: Dataset

    def __len__(self) -> int:
        return len(self.x)

    def column(self, name: str) -> np.ndarray:
        return self.source[name][self.target_rows]

    def xy(self, prefix: str) -> np.ndarray:
        return self.source.xy(prefix)[self.target_rows]

    @property
    def episode(self) -> np.ndarray:
        return self.column("episode")

    @property
    def pos_count(self) -> np.ndarray:
        return self.column("pos_count")

    @property
    def true_pos(self) -> np.ndarray:
        return self.xy("true")

    @property
    def distance(self) -> np.ndarray:
        """True observer-object distance at the target cycle."""
        return np.linalg.norm(self.xy("true") - self.xy("obs"), axis=1)

    def subset(self, mask) -> "Windows":
        return Windows(self.x[mask], self.y[mask], self.target_rows[mask], self.source)


def extract_windows(ds: Dataset, window: int = 5, warmup: int = 5) -> Windows:
    """One sample per cycle after the warm-up; windows never cross episodes."""
    ep, cyc = ds["episode"], ds["cycle"]
    if len(ds) > 1:
        order_ok = (ep[1:] > ep[:-1]) | ((ep[1:] == ep[:-1]) & (cyc[1:] > cyc[:-1]))
        if not order_ok.all():
            raise ValueError("dataset records must be sorted by (episode, cycle)")
    est_vel = np.stack([ds["est_vx"], ds["est_vy"]], axis=1)
    feats = encode_features(ds["seen"], ds.xy("est"), est_vel, ds["pos_count"], ds.xy("obs"), ds["obs_body"])
    targets = []
    starts = np.flatnonzero(np.r_[True, ep[1:] != ep[:-1]])
    ends = np.r_[starts[1:], len(ds)]
    for s, e in zip(starts, ends):
        if np.any(np.diff(cyc[s:e]) != 1):
            raise ValueError(f"episode {ep[s]} has a gap in its cycles")
        first = s + max(warmup, window - 1)
        targets.append(np.arange(first, e))
    rows = np.concatenate(targets) if targets else np.zeros(0, dtype=int)
    idx = rows[:, None] + np.arange(-window + 1, 1)[None, :]
    x = feats[idx] if len(rows) else np.zeros((0, window, N_FEATURES))
    y = normalize_position(ds.xy("true")[rows]) if len(rows) else np.zeros((0, 2))
    return Windows(x, y, rows, ds)


def split(items: Dataset | Windows, val_fraction: float = 0.2, seed: int = 0):
    """Episode-granular train/validation split."""
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must lie in (0, 1)")
    ep = items.episode if isinstance(items, Windows) else items["episode"]
    episodes = np.unique(ep)
    if len(episodes) < 2:
        raise ValueError("need at least 2 episodes to split")
    n_val = min(len(episodes) - 1, max(1, int(round(len(episodes) * val_fraction))))
    perm = np.random.default_rng(seed).permutation(episodes)
    val_eps = np.sort(perm[:n_val])
    is_val = np.isin(ep, val_eps)
    pick = items.take if isinstance(items, Dataset) else items.subset
    return pick(~is_val), pick(is_val)
