"""Error grids binned by (pos_count, distance), pairwise winner grids and heatmap output."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import nn
from .classical import extrapolate_positions
from .dataset import Windows
from .models import predict
from .world import KinematicsConfig

# estimator colors follow the figure legends: DNN green, LSTM red, last seen blue
COLORS = {"dnn": "#2ca02c", "lstm": "#d62728", "last_seen": "#1f77b4", "helios": "#9467bd", "extrapolate": "#ff7f0e"}
FALLBACK_COLORS = ("#17becf", "#bcbd22")
INSUFFICIENT_COLOR = "#000000"


def position_error(pred, truth):
    """Euclidean distance; works on single points or (N, 2) arrays."""
    d = np.asarray(pred, dtype=float) - np.asarray(truth, dtype=float)
    out = np.hypot(d[..., 0], d[..., 1])
    return float(out) if out.ndim == 0 else out


# --- estimator registry ---------------------------------------------------------

EstimatorFn = Callable[[Windows, dict], np.ndarray]
_REGISTRY: dict[str, EstimatorFn] = {}


def register(name: str):
    def deco(fn: EstimatorFn) -> EstimatorFn:
        _REGISTRY[name] = fn
        return fn

    return deco


def registered() -> list[str]:
    return sorted(_REGISTRY)


@register("last_seen")
def _last_seen(w: Windows, models: dict) -> np.ndarray:
    return w.xy("est")


@register("helios")
def _helios(w: Windows, models: dict) -> np.ndarray:
    return w.xy("helios")


@register("naive")
def _naive(w: Windows, models: dict) -> np.ndarray:
    return w.xy("raw")


@register("extrapolate")
def _extrapolate(w: Windows, models: dict) -> np.ndarray:
    kin = models.get("kinematics", KinematicsConfig())
    est_vel = np.stack([w.column("est_vx"), w.column("est_vy")], axis=1)
    return extrapolate_positions(w.xy("est"), est_vel, w.pos_count, kin.player_decay)


@register("oracle")
def _oracle(w: Windows, models: dict) -> np.ndarray:
    return w.true_pos


def _model_estimator(name: str) -> EstimatorFn:
    def run(w: Windows, models: dict) -> np.ndarray:
        if name not in models:
            raise KeyError(f"estimator {name!r} needs a trained model")
        return predict(models[name], w.x)

    return run


for _name in ("dnn", "lstm"):
    register(_name)(_model_estimator(_name))


def estimate(name: str, w: Windows, models: dict | None = None) -> np.ndarray:
    if name not in _REGISTRY:
        raise KeyError(f"unknown estimator {name!r}; registered: {', '.join(registered())}")
    return _REGISTRY[name](w, models or {})


# --- grids --------------------------------------------------------------------------


@dataclass
class ErrorGrid:
    """Error sums and counts; rows are pos_count 0..pc_max, columns distance bins.

    pos_count above ``pc_max`` lands in the last row; distances at or beyond
    ``dist_max`` are discarded and tallied.
    """

    name: str = ""
    pc_max: int = 30
    dist_step: float = 2.0
    dist_max: float = 40.0
    sums: np.ndarray = None
    counts: np.ndarray = None
    discarded: int = 0

    def __post_init__(self):
        shape = (self.pc_max + 1, self.n_dist_bins)
        if self.sums is None:
            self.sums = np.zeros(shape)
        if self.counts is None:
            self.counts = np.zeros(shape, dtype=np.int64)
        if self.sums.shape != shape or self.counts.shape != shape:
            raise ValueError(f"grid arrays must have shape {shape}")

    @property
    def n_dist_bins(self) -> int:
        return int(round(self.dist_max / self.dist_step))

    @property
    def binning(self) -> tuple:
        return (self.pc_max, self.dist_step, self.dist_max)

    @property
    def mean(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.counts > 0, self.sums / np.maximum(self.counts, 1), np.nan)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def add(self, errors, pos_count, distance) -> None:
        errors = np.asarray(errors, dtype=float)
        pc = np.minimum(np.asarray(pos_count), self.pc_max).astype(int)
        dist = np.asarray(distance, dtype=float)
        # half-open bins [lo, hi); guard against float error on exact edges
        col = np.floor(dist / self.dist_step + 1e-9).astype(int)
        keep = (col < self.n_dist_bins) & (dist >= 0)
        self.discarded += int((~keep).sum())
        np.add.at(self.sums, (pc[keep], col[keep]), errors[keep])
        np.add.at(self.counts, (pc[keep], col[keep]), 1)

    def merge(self, other: "ErrorGrid") -> "ErrorGrid":
        if self.binning != other.binning:
            raise ValueError("cannot merge grids with different binning")
        return ErrorGrid(self.name, *self.binning, self.sums + other.sums, self.counts + other.counts,
                         self.discarded + other.discarded)


def build_error_grid(
    name: str,
    windows: Windows,
    models: dict | None = None,
    pc_max: int = 30,
    dist_step: float = 2.0,
    dist_max: float = 40.0,
) -> ErrorGrid:
    pred = estimate(name, windows, models)
    grid = ErrorGrid(name, pc_max, dist_step, dist_max)
    grid.add(position_error(pred, windows.true_pos), windows.pos_count, windows.distance)
    return grid


A_WINS, B_WINS, INSUFFICIENT = 0, 1, -1


@dataclass
class ComparisonGrid:
    a: ErrorGrid
    b: ErrorGrid
    min_samples: int = 20
    winner: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.a.binning != self.b.binning:
            raise ValueError("grids have different binning")
        enough = (self.a.counts >= self.min_samples) & (self.b.counts >= self.min_samples)
        ma, mb = np.nan_to_num(self.a.mean), np.nan_to_num(self.b.mean)
        # ties go to A
        self.winner = np.where(~enough, INSUFFICIENT, np.where(mb < ma, B_WINS, A_WINS))

    def share(self, label: int, min_pos_count: int = 0) -> float:
        """Fraction of sufficient cells (rows >= ``min_pos_count``) won by ``label``."""
        rows = self.winner[min_pos_count:]
        populated = rows != INSUFFICIENT
        return float((rows[populated] == label).mean()) if populated.any() else float("nan")


def compare_grids(a: ErrorGrid, b: ErrorGrid, min_samples: int = 20) -> ComparisonGrid:
    return ComparisonGrid(a, b, min_samples)


# --- CSV ----------------------------------------------------------------------------


def _bin_edges(grid: ErrorGrid, col: int) -> tuple[str, str]:
    return f"{col * grid.dist_step:g}", f"{(col + 1) * grid.dist_step:g}"


def grid_to_csv(grid: ErrorGrid, provenance: str = "") -> str:
    buf = io.StringIO()
    buf.write(
        f"# estimator={grid.name} pc_max={grid.pc_max} dist_step={grid.dist_step:g} "
        f"dist_max={grid.dist_max:g} discarded={grid.discarded}"
        + (f" {provenance}" if provenance else "")
        + "\n"
    )
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("pos_count", "dist_lo", "dist_hi", "count", "sum_error", "mean_error"))
    mean = grid.mean
    for r in range(grid.pc_max + 1):
        for c in range(grid.n_dist_bins):
            n = int(grid.counts[r, c])
            w.writerow((r, *_bin_edges(grid, c), n, f"{grid.sums[r, c]:.6f}", f"{mean[r, c]:.6f}" if n else ""))
    return buf.getvalue()


def comparison_to_csv(cmp: ComparisonGrid, provenance: str = "") -> str:
    buf = io.StringIO()
    buf.write(f"# a={cmp.a.name} b={cmp.b.name} min_samples={cmp.min_samples}" + (f" {provenance}" if provenance else "") + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("pos_count", "dist_lo", "dist_hi", "winner", "count_a", "count_b", "mean_a", "mean_b"))
    labels = {A_WINS: cmp.a.name, B_WINS: cmp.b.name, INSUFFICIENT: "insufficient"}
    ma, mb = cmp.a.mean, cmp.b.mean
    for r in range(cmp.a.pc_max + 1):
        for c in range(cmp.a.n_dist_bins):
            na, nb = int(cmp.a.counts[r, c]), int(cmp.b.counts[r, c])
            w.writerow((r, *_bin_edges(cmp.a, c), labels[int(cmp.winner[r, c])], na, nb,
                        f"{ma[r, c]:.6f}" if na else "", f"{mb[r, c]:.6f}" if nb else ""))
    return buf.getvalue()


def _parse_header(line: str) -> dict[str, str]:
    return dict(tok.split("=", 1) for tok in line.lstrip("#").split() if "=" in tok)


def read_grid_csv(path: str | Path) -> ErrorGrid:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ValueError(f"{path}: missing grid header line")
    meta = _parse_header(lines[0])
    grid = ErrorGrid(meta.get("estimator", ""), int(meta["pc_max"]), float(meta["dist_step"]), float(meta["dist_max"]))
    grid.discarded = int(meta.get("discarded", 0))
    rows = list(csv.DictReader(lines[1:]))
    if len(rows) != grid.sums.size:
        raise ValueError(f"{path}: expected {grid.sums.size} cells, found {len(rows)}")
    for row in rows:
        r, c = int(row["pos_count"]), int(round(float(row["dist_lo"]) / grid.dist_step))
        grid.counts[r, c] = int(row["count"])
        grid.sums[r, c] = float(row["sum_error"])
    return grid


# --- SVG heatmaps ------------------------------------------------------------------

CELL = 18
MARGIN_LEFT, MARGIN_TOP, MARGIN_RIGHT, MARGIN_BOTTOM = 60, 40, 150, 50


def _ramp(t: float) -> str:
    """Pale yellow -> dark red."""
    lo, hi = np.array([255, 247, 188]), np.array([153, 0, 13])
    r, g, b = (lo + (hi - lo) * min(max(t, 0.0), 1.0)).round().astype(int)
    return f"#{r:02x}{g:02x}{b:02x}"


def _svg_frame(grid: ErrorGrid, title: str, cells: list[str], legend: list[str]) -> str:
    rows, cols = grid.pc_max + 1, grid.n_dist_bins
    width = MARGIN_LEFT + cols * CELL + MARGIN_RIGHT
    height = MARGIN_TOP + rows * CELL + MARGIN_BOTTOM
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="#ffffff"/>',
        f'<text x="{width / 2:g}" y="20" text-anchor="middle" font-family="sans-serif" font-size="13">{title}</text>',
        *cells,
    ]
    for c in range(0, cols + 1, 5):
        x = MARGIN_LEFT + c * CELL
        out.append(f'<text x="{x}" y="{MARGIN_TOP + rows * CELL + 14}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="10">{c * grid.dist_step:g}</text>')
    for r in range(0, rows, 5):
        y = MARGIN_TOP + (rows - r - 0.5) * CELL
        out.append(f'<text x="{MARGIN_LEFT - 6}" y="{y + 3:g}" text-anchor="end" '
                   f'font-family="sans-serif" font-size="10">{r}</text>')
    out.append(f'<text x="{MARGIN_LEFT + cols * CELL / 2:g}" y="{height - 12}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="12">distance (m)</text>')
    cy = MARGIN_TOP + rows * CELL / 2
    out.append(f'<text x="16" y="{cy:g}" text-anchor="middle" font-family="sans-serif" font-size="12" '
               f'transform="rotate(-90 16 {cy:g})">pos_count</text>')
    out.extend(legend)
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _cell(grid: ErrorGrid, r: int, c: int, color: str) -> str:
    x = MARGIN_LEFT + c * CELL
    y = MARGIN_TOP + (grid.pc_max - r) * CELL
    return f'<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{color}"/>'


def _legend_entry(k: int, color: str, label: str, x0: int) -> list[str]:
    y = MARGIN_TOP + k * 20
    return [f'<rect x="{x0}" y="{y}" width="14" height="14" fill="{color}" stroke="#555555"/>',
            f'<text x="{x0 + 20}" y="{y + 11}" font-family="sans-serif" font-size="11">{label}</text>']


def render_error_svg(grid: ErrorGrid) -> str:
    mean = grid.mean
    top = float(np.nanmax(mean)) if np.isfinite(mean).any() else 0.0
    cells = []
    for r in range(grid.pc_max + 1):
        for c in range(grid.n_dist_bins):
            if grid.counts[r, c] == 0:
                color = INSUFFICIENT_COLOR
            else:
                color = _ramp(mean[r, c] / top if top > 0 else 0.0)
            cells.append(_cell(grid, r, c, color))
    x0 = MARGIN_LEFT + grid.n_dist_bins * CELL + 15
    legend = []
    for k, t in enumerate(np.linspace(0, 1, 5)):
        legend += _legend_entry(k, _ramp(t), f"{t * top:.2f} m", x0)
    legend += _legend_entry(6, INSUFFICIENT_COLOR, "no data", x0)
    return _svg_frame(grid, f"mean error: {grid.name}", cells, legend)


def render_comparison_svg(cmp: ComparisonGrid) -> str:
    color_a = COLORS.get(cmp.a.name, FALLBACK_COLORS[0])
    color_b = COLORS.get(cmp.b.name, FALLBACK_COLORS[1])
    if color_a == color_b:
        color_b = FALLBACK_COLORS[1]
    palette = {A_WINS: color_a, B_WINS: color_b, INSUFFICIENT: INSUFFICIENT_COLOR}
    cells = [_cell(cmp.a, r, c, palette[int(cmp.winner[r, c])])
             for r in range(cmp.a.pc_max + 1) for c in range(cmp.a.n_dist_bins)]
    x0 = MARGIN_LEFT + cmp.a.n_dist_bins * CELL + 15
    legend = (_legend_entry(0, color_a, f"{cmp.a.name} better", x0) + _legend_entry(1, color_b, f"{cmp.b.name} better", x0)
              + _legend_entry(2, INSUFFICIENT_COLOR, "insufficient data", x0))
    return _svg_frame(cmp.a, f"{cmp.a.name} vs {cmp.b.name}", cells, legend)


def render(item: ErrorGrid | ComparisonGrid, out_stem: str | Path, provenance: str = "") -> tuple[Path, Path]:
    """Write ``<stem>.csv`` and ``<stem>.svg``; returns both paths."""
    stem = Path(out_stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(item, ComparisonGrid):
        text, svg = comparison_to_csv(item, provenance), render_comparison_svg(item)
    else:
        text, svg = grid_to_csv(item, provenance), render_error_svg(item)
    csv_path, svg_path = stem.with_suffix(".csv"), stem.with_suffix(".svg")
    csv_path.write_text(text)
    svg_path.write_text(svg)
    return csv_path, svg_path


def load_models(specs: dict[str, str]) -> dict[str, nn.Model]:
    return {name: nn.load_checkpoint(path) for name, path in specs.items()}
