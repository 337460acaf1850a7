import re

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from obsdenoise.classical import helios_estimate
from obsdenoise.dataset import COLUMNS, Dataset, DatasetConfig, extract_windows, generate_dataset
from obsdenoise.evaluation import (
    A_WINS,
    B_WINS,
    INSUFFICIENT,
    ErrorGrid,
    build_error_grid,
    compare_grids,
    estimate,
    grid_to_csv,
    position_error,
    read_grid_csv,
    registered,
    render,
    render_comparison_svg,
    render_error_svg,
)
from obsdenoise.models import ModelSpec, build_model
from obsdenoise.sensor import RawSighting, observe_angle, observe_distance
from obsdenoise.world import KinematicsConfig


@pytest.fixture(scope="module")
def windows():
    ds = generate_dataset(DatasetConfig(episodes=3, seed=11), KinematicsConfig(episode_len=400))
    return extract_windows(ds)


def test_position_error_examples():
    assert position_error((0, 0), (0, 0)) == 0.0
    assert position_error((3, 4), (0, 0)) == 5.0
    assert position_error((1, 2), (4, 6)) == position_error((4, 6), (1, 2))
    np.testing.assert_array_equal(position_error([[3, 4], [0, 0]], [[0, 0], [0, 1]]), [5.0, 1.0])


def test_registry_names():
    assert {"last_seen", "helios", "extrapolate", "dnn", "lstm"} <= set(registered())


def test_unknown_estimator_lists_names(windows):
    with pytest.raises(KeyError, match="last_seen"):
        estimate("kalman", windows)


def test_model_estimator_needs_model(windows):
    with pytest.raises(KeyError):
        estimate("dnn", windows)
    m = build_model(ModelSpec("dnn", (4,)))
    assert estimate("dnn", windows, {"dnn": m}).shape == (len(windows), 2)


def test_oracle_grid_is_zero(windows):
    g = build_error_grid("oracle", windows)
    assert g.total > 0
    assert np.all(g.mean[g.counts > 0] == 0.0)


@pytest.mark.parametrize("name", ["last_seen", "helios", "naive", "extrapolate", "oracle"])
def test_conservation(windows, name):
    g = build_error_grid(name, windows)
    assert g.total + g.discarded == len(windows)
    assert g.counts.shape == (31, 20)


def test_bin_edges_half_open():
    g = ErrorGrid()
    g.add([1.0, 2.0, 3.0, 4.0], [0, 0, 45, 3], [1.999999, 2.0, 39.99, 40.0])
    assert g.counts[0, 0] == 1 and g.counts[0, 1] == 1
    assert g.counts[30, 19] == 1
    assert g.discarded == 1
    assert g.sums[30, 19] == 3.0


@settings(max_examples=50)
@given(st.lists(st.tuples(st.floats(0, 10), st.integers(0, 60), st.floats(0, 80)), max_size=50))
def test_conservation_property(samples):
    g = ErrorGrid()
    if samples:
        e, pc, d = map(np.array, zip(*samples))
        g.add(e, pc, d)
    assert g.total + g.discarded == len(samples)


def test_merge_matches_single_pass():
    rng = np.random.default_rng(0)
    e, pc, d = rng.uniform(0, 5, 200), rng.integers(0, 40, 200), rng.uniform(0, 50, 200)
    whole, a, b = ErrorGrid(), ErrorGrid(), ErrorGrid()
    whole.add(e, pc, d)
    a.add(e[:80], pc[:80], d[:80])
    b.add(e[80:], pc[80:], d[80:])
    m = a.merge(b)
    np.testing.assert_array_equal(m.counts, whole.counts)
    np.testing.assert_allclose(m.sums, whole.sums)
    assert m.discarded == whole.discarded
    with pytest.raises(ValueError):
        a.merge(ErrorGrid(dist_step=4.0))


def stationary_dataset(n_per_pc=25, target=(12.0, 5.0)):
    """Object standing still; last sighting taken ``pos_count`` cycles ago from a fixed observer."""
    rng = np.random.default_rng(4)
    rows = []
    d = float(np.hypot(*target))
    bearing = np.degrees(np.arctan2(target[1], target[0]))
    for pc in range(0, 31):
        for k in range(n_per_pc):
            body = bearing + rng.uniform(-25, 25)
            s = RawSighting(4, float(observe_distance(d)), int(observe_angle(bearing - body)))
            est = helios_estimate(s, (0.0, 0.0), body)
            rows.append((pc, est))
    n = len(rows)
    cols = {c: np.zeros(n) for c in COLUMNS}
    cols["episode"] = np.arange(n)  # one-row episodes keep windows out of the picture
    cols["cycle"] = np.ones(n, dtype=int)
    cols["observer"], cols["object"] = np.full(n, "L9"), np.full(n, "L5")
    cols["pos_count"] = np.array([r[0] for r in rows])
    cols["est_x"] = np.array([r[1][0] for r in rows])
    cols["est_y"] = np.array([r[1][1] for r in rows])
    cols["true_x"][:], cols["true_y"][:] = target
    return extract_windows(Dataset(cols), window=1, warmup=0), d


def test_last_seen_stationary_within_cell(scan):
    w, d = stationary_dataset()
    g = build_error_grid("last_seen", w)
    populated = g.counts > 0
    assert populated[:, :].any(axis=1).all()
    assert np.all(g.mean[populated] <= scan.position_radius(d))


# --- comparisons ---------------------------------------------------------------


def grid_from(counts, means, name):
    g = ErrorGrid(name)
    g.counts[...] = counts
    g.sums[...] = np.asarray(means) * counts
    return g


def test_identical_grids_tie_to_a():
    g = grid_from(30, 1.0, "x")
    cmp = compare_grids(g, grid_from(30, 1.0, "y"))
    assert np.all(cmp.winner == A_WINS)


def test_empty_grids_all_insufficient():
    assert np.all(compare_grids(ErrorGrid("a"), ErrorGrid("b")).winner == INSUFFICIENT)


def test_insufficient_iff_either_below_threshold():
    rng = np.random.default_rng(1)
    ca, cb = rng.integers(0, 40, (31, 20)), rng.integers(0, 40, (31, 20))
    cmp = compare_grids(grid_from(ca, 1.0, "a"), grid_from(cb, 2.0, "b"), min_samples=20)
    np.testing.assert_array_equal(cmp.winner == INSUFFICIENT, (ca < 20) | (cb < 20))


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1))
def test_winner_antisymmetry(seed):
    rng = np.random.default_rng(seed)
    counts = rng.integers(0, 40, (31, 20))
    ma, mb = rng.uniform(0, 5, (31, 20)), rng.uniform(0, 5, (31, 20))
    a, b = grid_from(counts, ma, "a"), grid_from(counts, mb, "b")
    ab, ba = compare_grids(a, b).winner, compare_grids(b, a).winner
    decided = (ab != INSUFFICIENT) & (a.mean != b.mean)
    assert np.all(ab[decided] == 1 - ba[decided])
    np.testing.assert_array_equal(ab == INSUFFICIENT, ba == INSUFFICIENT)


def test_binning_mismatch_rejected():
    with pytest.raises(ValueError):
        compare_grids(ErrorGrid("a"), ErrorGrid("b", dist_max=20.0))


def test_share():
    a = grid_from(30, 1.0, "a")
    b = grid_from(30, 2.0, "b")
    b.sums[5:] = 0.5 * 30
    cmp = compare_grids(a, b)
    assert cmp.winner[0, 0] == A_WINS and cmp.winner[6, 0] == B_WINS
    assert cmp.share(B_WINS, min_pos_count=5) == 1.0
    assert cmp.share(A_WINS) == pytest.approx(5 / 31)


# --- rendering ---------------------------------------------------------------------


def test_csv_has_all_cells_and_round_trips(tmp_path, windows):
    g = build_error_grid("last_seen", windows)
    text = grid_to_csv(g, "config_hash=abc")
    lines = text.splitlines()
    assert lines[0].startswith("# estimator=last_seen") and "config_hash=abc" in lines[0]
    assert len(lines) == 2 + 31 * 20
    path = tmp_path / "g.csv"
    path.write_text(text)
    back = read_grid_csv(path)
    np.testing.assert_array_equal(back.counts, g.counts)
    np.testing.assert_allclose(back.sums, g.sums, atol=1e-5)
    assert back.discarded == g.discarded


def _fills(svg):
    return re.findall(r'<rect x="\d+" y="\d+" width="18" height="18" fill="(#[0-9a-f]{6})"/>', svg)


def test_empty_grid_renders_black():
    fills = _fills(render_error_svg(ErrorGrid("empty")))
    assert len(fills) == 620 and set(fills) == {"#000000"}
    fills = _fills(render_comparison_svg(compare_grids(ErrorGrid("a"), ErrorGrid("b"))))
    assert len(fills) == 620 and set(fills) == {"#000000"}


def test_svg_labels_and_colors():
    a, b = grid_from(30, 1.0, "lstm"), grid_from(30, 2.0, "last_seen")
    b.counts[0, 0] = 0
    svg = render_comparison_svg(compare_grids(a, b))
    assert "pos_count" in svg and "distance (m)" in svg and "insufficient data" in svg
    fills = _fills(svg)
    assert fills.count("#000000") == 1 and fills.count("#d62728") == 619


def test_render_byte_identical(tmp_path, windows):
    g = build_error_grid("helios", windows)
    c1, s1 = render(g, tmp_path / "one" / "grid", "seed=1")
    c2, s2 = render(g, tmp_path / "two" / "grid", "seed=1")
    assert c1.read_bytes() == c2.read_bytes()
    assert s1.read_bytes() == s2.read_bytes()
    assert s1.read_text().startswith("<svg")
