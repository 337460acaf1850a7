"""Command-line entry point: simulate, gen-data, train, eval, heatmap, pipeline, grad-check."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import dataset as ds_mod
from . import evaluation as ev
from . import nn
from .models import ModelSpec, predict, rmse, train_model
from .sensor import write_observation_log
from .world import parse_object, run_episode, write_trajectory_csv

log = logging.getLogger("obsdenoise")

# comparisons mirroring the three published heatmaps: (A, B)
FIGURE_PAIRS = (("dnn", "last_seen"), ("lstm", "last_seen"), ("lstm", "dnn"))


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


def _layers(text: str) -> list[int]:
    try:
        sizes = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"layer sizes must be comma-separated integers: {text!r}") from None
    if not sizes or any(n <= 0 for n in sizes):
        raise argparse.ArgumentTypeError("layer sizes must be positive")
    return sizes


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML file layered over the defaults")
    p.add_argument("--seed", type=int)
    p.add_argument("--episode-len", type=int, help="cycles per episode (default 6000)")
    p.add_argument("--jobs", type=int, help="worker processes for episode generation")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="obsdenoise", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("simulate", help="write ground-truth trajectories as CSV")
    _add_common(p)
    p.add_argument("--episodes", type=int)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("gen-data", help="simulate, sense and record one observer/object pair")
    _add_common(p)
    p.add_argument("--episodes", type=int)
    p.add_argument("--observer")
    p.add_argument("--object")
    p.add_argument("--out", required=True, help="dataset CSV path")
    p.add_argument("--obs-log", help="also write the raw observation log CSV here (serial run)")

    p = sub.add_parser("train", help="train a DNN or LSTM denoiser on a dataset")
    _add_common(p)
    p.add_argument("--model", choices=("dnn", "lstm"), required=True)
    p.add_argument("--layers", type=_layers)
    p.add_argument("--head", type=_layers, help="dense head sizes after the LSTM stack")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--optimizer", choices=("sgd", "adam"))
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")

    p = sub.add_parser("eval", help="error grids and winner grids for a set of estimators")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--estimators", default="last_seen,helios,extrapolate",
                   help="comma list; model estimators as dnn:PATH or lstm:PATH")
    p.add_argument("--grid-out", required=True)
    p.add_argument("--subset", choices=("val", "train", "all"), default="val")
    p.add_argument("--min-samples", type=int)

    p = sub.add_parser("heatmap", help="render a grid CSV, or compare two grid CSVs")
    p.add_argument("--grid", required=True)
    p.add_argument("--compare")
    p.add_argument("--min-samples", type=int, default=20)
    p.add_argument("--out", required=True, help="SVG path")

    p = sub.add_parser("pipeline", help="gen-data -> train dnn and lstm -> eval -> heatmaps")
    _add_common(p)
    p.add_argument("--episodes", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--dnn-layers", type=_layers)
    p.add_argument("--lstm-layers", type=_layers)
    p.add_argument("--out", default="run", help="output directory")

    p = sub.add_parser("grad-check", help="finite-difference check of the network gradients")
    p.add_argument("--model", choices=("dense", "lstm", "stacked", "all"), default="all")
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _flags(args) -> dict:
    """Translate parsed arguments into config overrides."""
    flags: dict = {}

    def put(section, key, value):
        if value is not None:
            flags.setdefault(section, {})[key] = value

    get = lambda name: getattr(args, name, None)  # noqa: E731
    put("dataset", "seed", get("seed"))
    put("dataset", "episodes", get("episodes"))
    put("dataset", "observer", get("observer"))
    put("dataset", "object", get("object"))
    put("kinematics", "episode_len", get("episode_len"))
    put("train", "epochs", get("epochs"))
    put("train", "batch_size", get("batch_size"))
    put("train", "learning_rate", get("lr"))
    put("train", "optimizer", get("optimizer"))
    put("eval", "min_samples", get("min_samples"))
    if get("seed") is not None:
        put("train", "seed", get("seed"))
    if get("model") in ("dnn", "lstm"):
        put(args.model, "layers", get("layers"))
        put(args.model, "head", get("head"))
    put("dnn", "layers", get("dnn_layers"))
    put("lstm", "layers", get("lstm_layers"))
    if get("jobs") is not None:
        flags["jobs"] = args.jobs
    return flags


def _resolve(args) -> config_mod.RunConfig:
    return config_mod.resolve(getattr(args, "config", None), _flags(args))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# --- subcommands ----------------------------------------------------------------


def cmd_simulate(args, cfg):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(cfg.dataset.episodes):
        seed = cfg.dataset.seed + i
        traj = run_episode(cfg.kinematics, seed)
        write_trajectory_csv(traj, out / f"episode_{i:04d}.csv", f"obsdenoise trajectory seed={seed} {cfg.provenance()}")
    print(f"wrote {cfg.dataset.episodes} trajectories to {out}")


def dataset_header(cfg) -> str:
    d = cfg.dataset
    return (f"obsdenoise dataset {cfg.provenance()} seed={d.seed} episodes={d.episodes} observer={d.observer} "
            f"object={d.object} filler={d.filler} warmup={d.warmup}")


def run_gen_data(cfg, out: Path, obs_log: Path | None = None) -> ds_mod.Dataset:
    observations = [] if obs_log else None
    data = ds_mod.generate_dataset(cfg.dataset, cfg.kinematics, cfg.noise, jobs=cfg.jobs, header=dataset_header(cfg),
                                   observations=observations)
    out.parent.mkdir(parents=True, exist_ok=True)
    ds_mod.write_dataset(data, out)
    if obs_log:
        obs_log.parent.mkdir(parents=True, exist_ok=True)
        write_observation_log(observations, [parse_object(cfg.dataset.object)], obs_log, dataset_header(cfg))
    return data


def cmd_gen_data(args, cfg):
    data = run_gen_data(cfg, Path(args.out), Path(args.obs_log) if args.obs_log else None)
    print(f"wrote {len(data)} records to {args.out}")


def _windows(cfg, path) -> tuple:
    data = ds_mod.read_dataset(path)
    windows = ds_mod.extract_windows(data, cfg.dataset.window, cfg.dataset.warmup)
    train, val = ds_mod.split(windows, cfg.dataset.val_fraction, cfg.dataset.seed)
    return windows, train, val


def run_train(cfg, kind: str, train, val, out: Path) -> dict:
    spec: ModelSpec = getattr(cfg, kind)
    result = train_model(spec, train, val, cfg.train)
    result.model.meta["config_hash"] = cfg.hash()
    out.parent.mkdir(parents=True, exist_ok=True)
    nn.save_checkpoint(result.model, out)
    pred = predict(result.model, val.x)
    m = val.pos_count >= cfg.eval.min_pos_count
    return {
        "model": kind,
        "layers": list(spec.layers),
        "best_epoch": result.best_epoch,
        "val_loss": [round(v, 8) for v in result.val_loss],
        "val_rmse": round(rmse(pred, val.true_pos), 6),
        "val_rmse_pos_count_ge_min": round(rmse(pred[m], val.true_pos[m]), 6),
    }


def cmd_train(args, cfg):
    _, train, val = _windows(cfg, args.data)
    summary = run_train(cfg, args.model, train, val, Path(args.out))
    print(json.dumps(summary, sort_keys=True))


def _parse_estimators(text: str) -> tuple[list[str], dict[str, str]]:
    names, paths = [], {}
    for item in filter(None, (t.strip() for t in text.split(","))):
        name, _, path = item.partition(":")
        if name in ("dnn", "lstm") and not path:
            raise CliError("usage", f"estimator {name} needs a checkpoint path ({name}:PATH)")
        if name not in ev.registered():
            raise CliError("validation", f"unknown estimator {name!r}; registered: {', '.join(ev.registered())}")
        names.append(name)
        if path:
            paths[name] = path
    return names, paths


def run_eval(cfg, windows, names: list[str], models: dict, out_dir: Path) -> dict:
    e = cfg.eval
    grids = {n: ev.build_error_grid(n, windows, models, e.pc_max, e.dist_step, e.dist_max) for n in names}
    prov = cfg.provenance()
    for n, g in grids.items():
        ev.render(g, out_dir / f"grid_{n}", prov)
    comparisons = {}
    for a, b in FIGURE_PAIRS:
        if a in grids and b in grids:
            cmp = ev.compare_grids(grids[a], grids[b], e.min_samples)
            ev.render(cmp, out_dir / f"compare_{a}_vs_{b}", prov)
            comparisons[f"{a}_vs_{b}"] = {
                "a_share_pos_count_ge_min": round(cmp.share(ev.A_WINS, e.min_pos_count), 6),
                "sufficient_cells": int((cmp.winner != ev.INSUFFICIENT).sum()),
            }
    m = windows.pos_count >= e.min_pos_count
    metrics = {}
    for n in names:
        pred = ev.estimate(n, windows, models)
        metrics[n] = {
            "rmse": round(rmse(pred, windows.true_pos), 6),
            "rmse_pos_count_ge_min": round(rmse(pred[m], windows.true_pos[m]), 6),
            "discarded": grids[n].discarded,
        }
    summary = {"config_hash": cfg.hash(), "samples": len(windows), "estimators": metrics, "comparisons": comparisons}
    _write_json(out_dir / "metrics.json", summary)
    return summary


def cmd_eval(args, cfg):
    names, paths = _parse_estimators(args.estimators)
    windows, train, val = _windows(cfg, args.data)
    subset = {"val": val, "train": train, "all": windows}[args.subset]
    models = ev.load_models(paths)
    summary = run_eval(cfg, subset, names, models, Path(args.grid_out))
    print(json.dumps(summary["estimators"], sort_keys=True))


def cmd_heatmap(args):
    a = ev.read_grid_csv(args.grid)
    if args.compare:
        item = ev.compare_grids(a, ev.read_grid_csv(args.compare), args.min_samples)
        svg = ev.render_comparison_svg(item)
    else:
        svg = ev.render_error_svg(a)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(svg)
    print(f"wrote {out}")


def cmd_pipeline(args, cfg):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", {"config_hash": cfg.hash(), "config": cfg.to_dict()})
    data_path = out / "dataset.csv"
    run_gen_data(cfg, data_path)
    windows, train, val = _windows(cfg, data_path)
    training = {k: run_train(cfg, k, train, val, out / f"{k}.ckpt") for k in ("dnn", "lstm")}
    _write_json(out / "training.json", training)
    models = ev.load_models({k: out / f"{k}.ckpt" for k in ("dnn", "lstm")})
    summary = run_eval(cfg, val, ["last_seen", "helios", "extrapolate", "dnn", "lstm"], models, out / "grids")
    print(json.dumps(summary["estimators"], sort_keys=True))


def cmd_grad_check(args):
    rng = np.random.default_rng(args.seed)
    models = {
        "dense": lambda r: nn.Model([nn.Flatten(), nn.Dense(12, 8, "tanh", rng=r), nn.Dense(8, 2, rng=r)]),
        "lstm": lambda r: nn.Model([nn.LSTM(3, 5, rng=r), nn.LastStep(), nn.Dense(5, 2, rng=r)]),
        "stacked": lambda r: nn.Model([nn.LSTM(3, 6, rng=r), nn.LSTM(6, 4, rng=r), nn.LastStep(),
                                       nn.Dense(4, 4, "relu", rng=r), nn.Dense(4, 2, rng=r)]),
    }
    chosen = list(models) if args.model == "all" else [args.model]
    ok = True
    for name in chosen:
        model = models[name](rng)
        x, y = rng.normal(size=(8, 4, 3)), rng.normal(size=(8, 2))
        report = nn.grad_check(model, x, y, args.eps, args.tol)
        ok &= report.passed
        print(f"{name}: params={model.n_params} max_rel_error={report.max_rel_error:.3e} "
              f"{'PASS' if report.passed else 'FAIL'}")
    if not ok:
        raise CliError("gradient", "finite-difference check failed")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "heatmap":
            cmd_heatmap(args)
        elif args.command == "grad-check":
            cmd_grad_check(args)
        else:
            cfg = _resolve(args)
            {
                "simulate": cmd_simulate,
                "gen-data": cmd_gen_data,
                "train": cmd_train,
                "eval": cmd_eval,
                "pipeline": cmd_pipeline,
            }[args.command](args, cfg)
    except CliError as exc:
        print(f"error category={exc.category} message={json.dumps(str(exc))}", file=sys.stderr)
        return 2 if exc.category == "usage" else 1
    except OSError as exc:
        print(f"error category=io message={json.dumps(str(exc))}", file=sys.stderr)
        return 1
    except (ValueError, KeyError) as exc:
        print(f"error category=validation message={json.dumps(str(exc))}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
