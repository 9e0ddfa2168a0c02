"""RAdam, cosine schedule, the training loop and checkpoint files.

Checkpoint layout (all integers little-endian)::

    b"STOXCKPT"                 8-byte magic
    uint32 version              currently 1
    uint64 header_len
    header_len bytes            UTF-8 JSON: version, model_config,
                                train_config, params=[{name, shape, offset}]
    payload                     float64 '<f8' values, parameters back to back

Offsets count float64 elements from the start of the payload.
"""

from __future__ import annotations

import json
import logging
import math
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numerics as nm
from .errors import ConfigError, ContractError, DataError, NumericError
from .generative import decode, forecast_windows, generate
from .inference import infer
from .loss import DIRECTIONS, ElboReport, elbo_loss
from .model import ModelConfig, init_params, prepare_windows
from .preprocess import pad_patch_generative, pad_patch_inference

log = logging.getLogger(__name__)

MAGIC = b"STOXCKPT"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    lr: float = 1e-3
    lr_min: float = 0.0
    epochs: int = 10
    batch_size: int = 32
    beta: float = 500.0
    seed: int = 0
    clip_norm: float | None = 1.0
    patience: int = 5
    kl_direction: str = "standard"
    max_batches_per_epoch: int | None = None
    max_val_windows: int | None = None

    def __post_init__(self):
        if self.lr <= 0 or self.lr_min < 0 or self.lr_min > self.lr:
            raise ConfigError(f"need 0 <= lr_min <= lr and lr > 0, got {self.lr_min}, {self.lr}")
        if self.epochs < 0 or self.batch_size < 1 or self.patience < 1:
            raise ConfigError("epochs >= 0, batch_size >= 1 and patience >= 1 required")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive or None")
        if self.beta < 0:
            raise ConfigError("beta must be non-negative")
        if self.kl_direction not in DIRECTIONS:
            raise ConfigError(f"kl_direction must be one of {DIRECTIONS}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


# -- optimizer ----------------------------------------------------------------
@dataclass
class OptimizerState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @property
    def rho_inf(self) -> float:
        return 2.0 / (1.0 - self.beta2) - 1.0


def radam_step(params: dict, grads: dict, state: OptimizerState, lr: float) -> None:
    """One in-place RAdam update.

    Until the variance rectification term is defined (rho_t <= 4) the
    update is bias-corrected momentum SGD.
    """
    if lr <= 0:
        raise ContractError("learning rate must be positive")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient", where=name)
    state.step += 1
    t, b1, b2 = state.step, state.beta1, state.beta2
    rho_inf = state.rho_inf
    b2t = b2**t
    rho_t = rho_inf - 2.0 * t * b2t / (1.0 - b2t)
    rect = None
    if rho_t > 4.0:
        rect = math.sqrt((rho_t - 4) * (rho_t - 2) * rho_inf / ((rho_inf - 4) * (rho_inf - 2) * rho_t))
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.data.shape:
            raise ContractError(f"gradient shape {g.shape} does not match parameter {name} {p.data.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - b1**t)
        if rect is None:
            p.data -= lr * m_hat
        else:
            v_hat = np.sqrt(v / (1 - b2t))
            p.data -= lr * rect * m_hat / (v_hat + state.eps)


def cosine_lr(step: int, total_steps: int, lr_max: float, lr_min: float = 0.0) -> float:
    if not 0 <= step <= total_steps:
        raise ContractError(f"step {step} outside [0, {total_steps}]")
    if total_steps == 0:
        return lr_max
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * step / total_steps))


def clip_grads(grads: dict, clip_norm: float | None) -> float:
    """Scale ``grads`` in place to global norm ``clip_norm``; returns the pre-clip norm."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if clip_norm is not None and norm > clip_norm:
        scale = clip_norm / norm
        for g in grads.values():
            g *= scale
    return norm


# -- data windows -------------------------------------------------------------
def sliding_windows(series, length: int) -> tuple:
    """All stride-1 windows of ``[C, rows]`` as ``(view [C, n, length], index [C*n, 2])``."""
    series = np.atleast_2d(np.asarray(series, dtype=np.float64))
    C, rows = series.shape
    n = rows - length + 1
    if n < 1:
        raise DataError(f"split of {rows} rows is shorter than one window of {length}")
    view = np.lib.stride_tricks.sliding_window_view(series, length, axis=1)
    index = np.stack(np.meshgrid(np.arange(C), np.arange(n), indexing="ij"), axis=-1).reshape(-1, 2)
    return view, index


# -- training -----------------------------------------------------------------
def batch_loss(params: dict, windows, config: ModelConfig, beta: float, kl_direction: str, rng=None) -> ElboReport:
    """Loss of a batch of ``[B, L + T]`` windows on the current tape."""
    L, T = config.lookback, config.horizon
    windows = np.atleast_2d(windows)
    prep = prepare_windows(windows[:, :L], config, windows[:, L:])
    gen_patches = pad_patch_generative(prep.history, T, config.P, config.S)
    inf_patches = pad_patch_inference(prep.target, config.P, config.S, L)
    post = infer(inf_patches, params, config, rng)
    gen = generate(gen_patches, params, config, z_path=post.samples)
    out = decode(gen, params, L, T, full=True)
    return elbo_loss(gen, post, out, prep.target, beta, kl_direction)


def window_mse(params: dict, windows, config: ModelConfig, batch_size: int = 256) -> float:
    """Point-forecast MSE over the horizon of ``[B, L + T]`` windows."""
    L = config.lookback
    errs = []
    for start in range(0, len(windows), batch_size):
        w = windows[start:start + batch_size]
        pred = forecast_windows(w[:, :L], params, config)
        errs.append(((pred - w[:, L:]) ** 2).sum())
    return float(sum(errs) / (len(windows) * config.horizon))


@dataclass
class TrainResult:
    params: dict
    history: list
    best_epoch: int
    final_params: dict


def _snapshot(params: dict) -> dict:
    return {k: v.data.copy() for k, v in params.items()}


def _restore(snapshot: dict) -> dict:
    return {k: nm.parameter(v.copy(), k) for k, v in snapshot.items()}


def train(train_series, model_config: ModelConfig, config: TrainConfig, val_series=None, params=None, callback=None) -> TrainResult:
    """Fit on stride-1 windows of ``train_series`` (``[C, rows]``).

    Channels are pooled as independent univariate windows. The returned
    ``params`` are from the epoch with the lowest validation point MSE
    (or lowest training loss when no validation split is given).
    """
    length = model_config.lookback + model_config.horizon
    view, index = sliding_windows(train_series, length)
    val_windows = None
    if val_series is not None:
        vview, vindex = sliding_windows(val_series, length)
        val_windows = vview[vindex[:, 0], vindex[:, 1]]
        if config.max_val_windows and len(val_windows) > config.max_val_windows:
            pick = np.linspace(0, len(val_windows) - 1, config.max_val_windows).astype(int)
            val_windows = val_windows[pick]

    rng = np.random.default_rng(config.seed)
    if params is None:
        params = init_params(model_config, config.seed)
    opt = OptimizerState()
    n_batches = math.ceil(len(index) / config.batch_size)
    if config.max_batches_per_epoch:
        n_batches = min(n_batches, config.max_batches_per_epoch)
    total_steps = n_batches * config.epochs

    history = []
    best, best_epoch, best_snapshot, stale = math.inf, -1, _snapshot(params), 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(index))
        sums = {"recon": 0.0, "kl_total": 0.0, "total": 0.0}
        lr = config.lr
        for b in range(n_batches):
            lr = cosine_lr(opt.step, total_steps, config.lr, config.lr_min)
            idx = index[order[b * config.batch_size:(b + 1) * config.batch_size]]
            windows = view[idx[:, 0], idx[:, 1]]
            report = batch_loss(params, windows, model_config, config.beta, config.kl_direction, rng)
            if not math.isfinite(report.total):
                raise NumericError("non-finite loss", where=f"epoch {epoch} batch {b}")
            for p in params.values():
                p.zero_grad()
            report.loss.backward()
            grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
            clip_grads(grads, config.clip_norm)
            radam_step(params, grads, opt, lr)
            for key in sums:
                sums[key] += getattr(report, key)
        row = {"epoch": epoch, **{k: v / n_batches for k, v in sums.items()}, "beta": config.beta, "lr": lr}
        if val_windows is not None:
            row["val_mse"] = window_mse(params, val_windows, model_config)
            score = row["val_mse"]
        else:
            row["val_mse"] = float("nan")
            score = row["total"]
        history.append(row)
        log.info("epoch %d recon=%.5f kl=%.5f total=%.5f val_mse=%.5f", epoch, row["recon"], row["kl_total"], row["total"], row["val_mse"])
        if callback is not None:
            callback(row)
        if score < best:
            best, best_epoch, best_snapshot, stale = score, epoch, _snapshot(params), 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    return TrainResult(_restore(best_snapshot), history, best_epoch, params)


# -- checkpoints --------------------------------------------------------------
def save_checkpoint(path, params: dict, model_config: ModelConfig, train_config: TrainConfig | None = None, extra: dict | None = None) -> None:
    """Write atomically: temp file in the target directory, then rename."""
    names = sorted(params)
    records, offset = [], 0
    for name in names:
        arr = params[name].data if hasattr(params[name], "data") else np.asarray(params[name])
        records.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
    header = {
        "version": CHECKPOINT_VERSION,
        "model_config": model_config.to_dict(),
        "train_config": train_config.to_dict() if train_config else None,
        "extra": extra or {},
        "params": records,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(
        np.ascontiguousarray(params[n].data if hasattr(params[n], "data") else params[n], dtype="<f8").tobytes()
        for n in names
    )
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(blob)))
            fh.write(blob)
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path):
    """Return ``(params, model_config, train_config_or_None, extra)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(MAGIC):
        raise DataError(f"{path} is not a checkpoint file")
    version, hlen = struct.unpack_from("<IQ", data, len(MAGIC))
    if version != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    start = len(MAGIC) + struct.calcsize("<IQ")
    header = json.loads(data[start:start + hlen].decode("utf-8"))
    values = np.frombuffer(data, dtype="<f8", offset=start + hlen).astype(np.float64)
    params = {}
    for rec in header["params"]:
        count = int(np.prod(rec["shape"])) if rec["shape"] else 1
        arr = values[rec["offset"]:rec["offset"] + count].reshape(rec["shape"])
        params[rec["name"]] = nm.parameter(arr.copy(), rec["name"])
    tc = header.get("train_config")
    return params, ModelConfig.from_dict(header["model_config"]), TrainConfig.from_dict(tc) if tc else None, header.get("extra", {})
