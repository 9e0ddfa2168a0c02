"""Command-line entry point: ``stoxlstm {train,predict,eval,dump-latents,bench}``.

A JSON config file may hold four sections::

    {"dataset": {...DatasetSpec...}, "model": {...ModelConfig...},
     "train": {...TrainConfig...}, "eval": {"n_samples": 0, "naive_period": 24,
     "max_windows": null}}

Command-line flags override file values. The effective config is written to
``config.json`` in every output directory. Exit codes: 0 ok, 2 config or
data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import numerics as nm
from .dataio import DatasetSpec, export_forecast, export_latents, load_csv, write_csv
from .errors import ConfigError, ContractError, DataError, NumericError
from .generative import forecast, forecast_windows, generate
from .inference import infer
from .metrics import crps_empirical, point_metrics, seasonal_naive
from .model import ModelConfig, init_params, prepare_windows
from .preprocess import pad_patch_generative, pad_patch_inference
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, sliding_windows, train, window_mse

log = logging.getLogger("stoxlstm")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

_MODEL_FLAGS = {
    "lookback": "lookback",
    "horizon": "horizon",
    "patch_size": "patch_size",
    "stride": "stride",
    "d_model": "d_model",
    "d_latent": "d_latent",
    "pattern": "pattern",
}
_TRAIN_FLAGS = {
    "seed": "seed",
    "beta": "beta",
    "kl_direction": "kl_direction",
    "epochs": "epochs",
    "lr": "lr",
    "batch_size": "batch_size",
    "patience": "patience",
    "max_batches": "max_batches_per_epoch",
}
DEFAULT_EVAL = {"n_samples": 0, "naive_period": 24, "max_windows": None}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--data", help="dataset CSV (overrides dataset.path)")
    common.add_argument("--checkpoint", help="checkpoint path (default: <out-dir>/model.ckpt)")
    common.add_argument("--seed", type=int)
    common.add_argument("--lookback", type=int)
    common.add_argument("--horizon", type=int)
    common.add_argument("--patch-size", type=int)
    common.add_argument("--stride", type=int)
    common.add_argument("--d-model", type=int)
    common.add_argument("--d-latent", type=int)
    common.add_argument("--pattern")
    common.add_argument("--beta", type=float)
    common.add_argument("--kl-direction", choices=["paper", "standard"])
    common.add_argument("--epochs", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--batch-size", type=int)
    common.add_argument("--patience", type=int)
    common.add_argument("--max-batches", type=int)
    common.add_argument("--n-samples", type=int)
    common.add_argument("--naive-period", type=int)
    common.add_argument("--max-windows", type=int)
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--out-dir", default="out")
    common.add_argument("--no-stochastic", action="store_true")
    common.add_argument("--no-decomposition", action="store_true")
    common.add_argument("--no-patching", action="store_true")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="stoxlstm", description="Stochastic xLSTM forecasting")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="fit a model and write a checkpoint")
    sub.add_parser("predict", parents=[common], help="forecast the last test window")
    sub.add_parser("eval", parents=[common], help="score the test split")
    sub.add_parser("dump-latents", parents=[common], help="export latent tensors of one window")
    bench = sub.add_parser("bench", parents=[common], help="time the forward pass")
    bench.add_argument("--lengths", default="384,768,1536,3072", help="comma-separated L+T values")
    bench.add_argument("--channels", default="1,2,4", help="comma-separated channel counts")
    bench.add_argument("--repeats", type=int, default=3)
    return parser


def resolve_config(args) -> dict:
    """Merge the config file with flag overrides into plain dicts."""
    cfg = {"dataset": {}, "model": {}, "train": {}, "eval": dict(DEFAULT_EVAL)}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        for key in cfg:
            cfg[key].update(loaded.get(key, {}))
    if args.data:
        cfg["dataset"]["path"] = args.data
    for flag, key in _MODEL_FLAGS.items():
        if getattr(args, flag) is not None:
            cfg["model"][key] = getattr(args, flag)
    for flag, key in _TRAIN_FLAGS.items():
        if getattr(args, flag) is not None:
            cfg["train"][key] = getattr(args, flag)
    for flag in ("n_samples", "naive_period", "max_windows"):
        if getattr(args, flag) is not None:
            cfg["eval"][flag] = getattr(args, flag)
    if args.no_stochastic:
        cfg["model"]["stochastic"] = False
    if args.no_decomposition:
        cfg["model"]["use_decomposition"] = False
    if args.no_patching:
        cfg["model"]["use_patching"] = False
    return cfg


def _model_config(cfg: dict) -> ModelConfig:
    try:
        return ModelConfig.from_dict(cfg["model"])
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _train_config(cfg: dict) -> TrainConfig:
    try:
        return TrainConfig.from_dict(cfg["train"])
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _dataset(cfg: dict):
    if not cfg["dataset"].get("path"):
        raise ConfigError("no dataset path given (--data or dataset.path)")
    return load_csv(DatasetSpec.from_dict(cfg["dataset"]))


def _echo(out_dir: str, cfg: dict, extra: dict | None = None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    payload = dict(cfg)
    if extra:
        payload.update(extra)
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_json(path: str, data: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _checkpoint_path(args) -> str:
    return args.checkpoint or os.path.join(args.out_dir, "model.ckpt")


def _load_model(args, cfg: dict):
    """Load the checkpoint and reject explicit model settings that disagree with it."""
    path = _checkpoint_path(args)
    if not os.path.isfile(path):
        raise ConfigError(f"checkpoint not found: {path}")
    params, mc, _, _ = load_checkpoint(path)
    stored = mc.to_dict()
    clash = {k: (v, stored[k]) for k, v in cfg["model"].items() if k in stored and stored[k] != v}
    if clash:
        raise ConfigError(f"config disagrees with checkpoint: {clash}")
    cfg["model"] = stored
    return params, mc


# -- subcommands ---------------------------------------------------------------
def run_train(args, cfg: dict) -> int:
    mc, tc = _model_config(cfg), _train_config(cfg)
    ds = _dataset(cfg)
    train_rows = ds.split("train")
    val_rows = ds.split("val", mc.lookback) if ds.boundaries[1] > ds.boundaries[0] else None
    _echo(args.out_dir, cfg)
    result = train(train_rows, mc, tc, val_series=val_rows)
    save_checkpoint(_checkpoint_path(args), result.params, mc, tc, {"best_epoch": result.best_epoch})
    cols = ["epoch", "recon", "kl_total", "beta", "total", "val_mse", "lr"]
    write_csv(os.path.join(args.out_dir, "history.csv"), cols, [[row[c] for c in cols] for row in result.history])
    view, index = sliding_windows(train_rows, mc.lookback + mc.horizon)
    windows = view[index[:, 0], index[:, 1]]
    train_mse = window_mse(result.params, windows, mc)
    _write_json(
        os.path.join(args.out_dir, "summary.json"),
        {"best_epoch": result.best_epoch, "epochs_run": len(result.history), "final_train_mse": train_mse},
    )
    log.info("final train MSE %.6f", train_mse)
    return EXIT_OK


def run_predict(args, cfg: dict) -> int:
    params, mc = _load_model(args, cfg)
    ds = _dataset(cfg)
    split = "test" if ds.boundaries[2] > ds.boundaries[1] else "train"
    rows = ds.split(split, mc.lookback)
    L, T = mc.lookback, mc.horizon
    if rows.shape[1] < L + T:
        raise DataError(f"{split} split too short for one window of {L + T}")
    hist, truth = rows[:, -(L + T):-T] if T else rows[:, -L:], rows[:, -T:] if T else rows[:, :0]
    seed = cfg["train"].get("seed", 0)
    point, samples = forecast(hist, params, mc, seed, cfg["eval"]["n_samples"], args.workers)
    _echo(args.out_dir, cfg)
    export_forecast(point, samples, truth, args.out_dir, ds.columns)
    return EXIT_OK


def evaluate_split(params, mc: ModelConfig, rows, n_samples: int, seed: int, naive_period: int, max_windows=None):
    """Metrics of the model and the seasonal-naive baseline over all test windows.

    With ``n_samples == 1`` the CRPS is taken over the point forecast alone,
    which makes it coincide with MAE.
    """
    L, T = mc.lookback, mc.horizon
    view, _ = sliding_windows(rows, L + T)
    C, W = view.shape[:2]
    pick = np.arange(W)
    if max_windows and W > max_windows:
        pick = np.linspace(0, W - 1, max_windows).astype(int)
    windows = view[:, pick]
    truth = windows[..., L:]
    point = np.empty_like(truth)
    samples = np.empty((n_samples,) + truth.shape) if n_samples else None
    for c in range(C):
        hist = windows[c, :, :L]
        point[c] = forecast_windows(hist, params, mc)
        if n_samples == 1:
            # a one-member ensemble is the point forecast itself
            samples[0, c] = point[c]
        elif n_samples:
            rng = np.random.default_rng([seed, c])
            reps = np.repeat(hist, n_samples, axis=0)
            draws = forecast_windows(reps, params, mc, rng)
            samples[:, c] = draws.reshape(len(pick), n_samples, T).transpose(1, 0, 2)
    flat = lambda a: a.reshape(a.shape[:-2] + (-1,))  # noqa: E731  [.., C, W, T] -> [.., C, W*T]
    report = point_metrics(flat(truth), flat(point))
    if n_samples:
        report.crps = crps_empirical(flat(samples), flat(truth))
    naive = seasonal_naive(windows[..., :L], T, naive_period)
    baseline = point_metrics(flat(truth), flat(naive))
    return report, baseline


def run_eval(args, cfg: dict) -> int:
    params, mc = _load_model(args, cfg)
    ds = _dataset(cfg)
    split = "test" if ds.boundaries[2] > ds.boundaries[1] else "train"
    rows = ds.split(split, mc.lookback)
    ev = cfg["eval"]
    report, baseline = evaluate_split(
        params, mc, rows, ev["n_samples"], cfg["train"].get("seed", 0), ev["naive_period"], ev["max_windows"]
    )
    _echo(args.out_dir, cfg)
    cols = ["mae", "mse", "mape", "rmse", "crps"]
    rows_out = [["stoxlstm", *[report.as_row()[c] if report.as_row()[c] is not None else float("nan") for c in cols]]]
    rows_out.append(["seasonal_naive", *[baseline.as_row()[c] if baseline.as_row()[c] is not None else float("nan") for c in cols]])
    write_csv(os.path.join(args.out_dir, "eval.csv"), ["model", *cols], rows_out)
    _write_json(
        os.path.join(args.out_dir, "eval.json"),
        {"split": split, "model": report.as_row(), "seasonal_naive": baseline.as_row()},
    )
    return EXIT_OK


def run_dump_latents(args, cfg: dict) -> int:
    params, mc = _load_model(args, cfg)
    ds = _dataset(cfg)
    split = "test" if ds.boundaries[2] > ds.boundaries[1] else "train"
    rows = ds.split(split, mc.lookback)
    L, T = mc.lookback, mc.horizon
    if rows.shape[1] < L + T:
        raise DataError(f"{split} split too short for one window of {L + T}")
    window = rows[:, :L + T]
    seed = cfg["train"].get("seed", 0)
    with nm.no_grad():
        prep = prepare_windows(window[:, :L], mc, window[:, L:])
        gen = generate(pad_patch_generative(prep.history, T, mc.P, mc.S), params, mc)
        post = infer(pad_patch_inference(prep.target, mc.P, mc.S, L), params, mc, np.random.default_rng(seed))
    _echo(args.out_dir, cfg)
    for c, name in enumerate(ds.columns):
        export_latents(gen, post, os.path.join(args.out_dir, f"latents_{name}"), index=c)
    return EXIT_OK


def _fit_exponent(xs, ys) -> float:
    slope, _ = np.polyfit(np.log(xs), np.log(ys), 1)
    return float(slope)


def time_forward(mc: ModelConfig, channels: int, repeats: int, seed: int = 0) -> float:
    params = init_params(mc, seed)
    x = np.random.default_rng(seed).standard_normal((channels, mc.lookback))
    forecast(x, params, mc)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        forecast(x, params, mc)
        best = min(best, time.perf_counter() - t0)
    return best


def run_bench(args, cfg: dict) -> int:
    base = dict(cfg["model"])
    lengths = [int(v) for v in args.lengths.split(",")]
    channels = [int(v) for v in args.channels.split(",")]
    rows = []

    def config_for(total):
        horizon = total // 4
        return ModelConfig.from_dict({**base, "lookback": total - horizon, "horizon": horizon})

    length_times = []
    for total in lengths:
        mc = config_for(total)
        t = time_forward(mc, channels[0], args.repeats)
        length_times.append(t)
        rows.append(["length", total, channels[0], mc.N + 1, t])
    channel_times = []
    for c in channels:
        mc = config_for(lengths[0])
        t = time_forward(mc, c, args.repeats)
        channel_times.append(t)
        rows.append(["channels", lengths[0], c, mc.N + 1, t])
    report = {
        "length_exponent": _fit_exponent(lengths, length_times) if len(lengths) > 1 else float("nan"),
        "channel_exponent": _fit_exponent(channels, channel_times) if len(channels) > 1 else float("nan"),
        "lengths": lengths,
        "length_seconds": length_times,
        "channels": channels,
        "channel_seconds": channel_times,
    }
    _echo(args.out_dir, cfg)
    write_csv(os.path.join(args.out_dir, "bench.csv"), ["sweep", "length", "channels", "patches", "seconds"], rows)
    _write_json(os.path.join(args.out_dir, "bench.json"), report)
    print(f"fitted growth exponent vs L+T: {report['length_exponent']:.3f}")
    return EXIT_OK


COMMANDS = {
    "train": run_train,
    "predict": run_predict,
    "eval": run_eval,
    "dump-latents": run_dump_latents,
    "bench": run_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, DataError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
