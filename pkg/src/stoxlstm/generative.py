"""Generative model: prior latent transitions, patch recurrence and decoding."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .cells import LatentState, latent_head, output_head, unit_init_state, unit_step
from .errors import ConfigError, DataError
from .model import GEN_PREFIX, ModelConfig, prepare_windows, restore_forecast
from .numerics import Tensor
from .preprocess import PatchSequence, embed, pad_patch_generative


@dataclass
class GenerativeTrace:
    """Per-step outputs of one generative pass.

    ``latents[t - 1]`` holds the prior parameters of ``z_t`` and the sample
    actually used; ``patch_outputs`` and ``hidden`` are ``[B, N + 1, d_model]``.
    """

    latents: list
    patch_outputs: Tensor
    hidden: Tensor
    embedded: Tensor


def as_rng(rng):
    if rng is None or isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def _batched(raw: np.ndarray) -> np.ndarray:
    return raw[None] if raw.ndim == 2 else raw


def generate(
    patches: PatchSequence,
    params: dict,
    config: ModelConfig,
    rng=None,
    z_path=None,
) -> GenerativeTrace:
    """Left-to-right recurrence over ``p_0 .. p_N``.

    Step ``t`` consumes patch ``p_{t-1}`` and emits ``h_t``, ``z_t`` and
    the patch output ``x_{p t}``. Without ``rng`` (or with the model's
    stochastic switch off) latents follow the prior means. When ``z_path``
    is given, those samples replace the prior draws; this is how training
    evaluates the prior along a posterior path.
    """
    g = GEN_PREFIX
    rng = as_rng(rng) if config.stochastic else None
    raw = _batched(patches.raw)
    B, steps = raw.shape[0], raw.shape[1]
    d, dl = config.d_model, config.d_latent
    if z_path is not None and len(z_path) != steps:
        raise ConfigError(f"latent path has {len(z_path)} steps, expected {steps}")

    states = unit_init_state(config.pattern, B, d)
    z_prev = Tensor(np.zeros((B, dl)))
    latents, outputs, hidden, embedded = [], [], [], []
    for t in range(1, steps + 1):
        x_in = embed(raw[:, t - 1, :], params[f"{g}.embed.W"], params[f"{g}.embed.b"])
        states, h = unit_step(states, x_in, params, config.pattern, f"{g}.unit", step=t)
        eps = rng.standard_normal((B, dl)) if rng is not None and z_path is None else None
        lat = latent_head(h, z_prev, params, f"{g}.latent", eps)
        if z_path is not None:
            lat = LatentState(lat.mean, lat.logvar, z_path[t - 1], None)
        out = output_head(lat.sample, h, params, f"{g}.out", config.phi)
        latents.append(lat)
        outputs.append(out)
        hidden.append(h)
        embedded.append(x_in)
        z_prev = lat.sample
    return GenerativeTrace(latents, nm.stack(outputs, 1), nm.stack(hidden, 1), nm.stack(embedded, 1))


def decode(trace: GenerativeTrace, params: dict, L: int, T: int, full: bool = False) -> Tensor:
    """Flatten the patch outputs and map them to ``L + T`` values.

    Returns the last ``T`` entries (the forecast), or all ``L + T`` with
    ``full=True``; the first ``L`` are the history reconstruction.
    """
    W, b = params[f"{GEN_PREFIX}.decode.W"], params[f"{GEN_PREFIX}.decode.b"]
    B, steps, d = trace.patch_outputs.shape
    if W.shape != (steps * d, L + T):
        raise ConfigError(f"decode head has shape {W.shape}, expected {(steps * d, L + T)}")
    out = trace.patch_outputs.reshape(B, steps * d) @ W + b
    return out if full else out[:, L:]


def forecast_windows(history, params: dict, config: ModelConfig, rng=None) -> np.ndarray:
    """Forecast ``[B, T]`` for a batch of univariate histories ``[B, L]``.

    ``rng=None`` propagates means (the point forecast).
    """
    with nm.no_grad():
        prep = prepare_windows(history, config)
        patches = pad_patch_generative(prep.history, config.horizon, config.P, config.S)
        trace = generate(patches, params, config, rng)
        seasonal = decode(trace, params, config.lookback, config.horizon).data
    return restore_forecast(seasonal, prep)


def forecast(x_hist, params: dict, config: ModelConfig, seed: int = 0, n_samples: int = 0, workers: int = 1):
    """Channel-independent forecast of ``[C, L]`` history.

    Returns ``(point [C, T], samples [n_samples, C, T])``. Each channel uses
    its own generator seeded by ``(seed, channel)``, so a channel's output
    never depends on other channels.
    """
    x_hist = np.atleast_2d(np.asarray(x_hist, dtype=np.float64))
    C, L = x_hist.shape
    if L != config.lookback:
        raise ConfigError(f"history length {L} does not match lookback {config.lookback}")
    for c in range(C):
        if not np.all(np.isfinite(x_hist[c])):
            raise DataError(f"non-finite value in channel {c}")

    def one(c):
        point = forecast_windows(x_hist[c:c + 1], params, config)[0]
        if n_samples > 0:
            rng = np.random.default_rng([seed, c])
            reps = np.repeat(x_hist[c:c + 1], n_samples, axis=0)
            samples = forecast_windows(reps, params, config, rng)
        else:
            samples = np.zeros((0, config.horizon))
        return point, samples

    if workers > 1 and C > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(C)))
    else:
        results = [one(c) for c in range(C)]
    point = np.stack([r[0] for r in results])
    samples = np.stack([r[1] for r in results], axis=1) if C else np.zeros((n_samples, 0, config.horizon))
    return point, samples
