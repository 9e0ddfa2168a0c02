"""Inference model: bidirectional recurrence producing the approximate posterior.

Used only during training; forecasting reads ``gen.*`` parameters alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .cells import latent_head, unit_init_state, unit_step
from .generative import _batched, as_rng
from .model import INF_PREFIX, ModelConfig
from .numerics import Tensor
from .preprocess import PatchSequence, embed


@dataclass
class PosteriorTrace:
    """Posterior latents plus forward (``h``) and backward (``g``) hidden states.

    Position ``t`` of ``fwd_hidden`` summarizes patches ``p_0 .. p_{t-1}``;
    position ``t`` of ``bwd_hidden`` summarizes ``p_{t-1} .. p_N``.
    """

    latents: list
    fwd_hidden: Tensor
    bwd_hidden: Tensor
    embedded: Tensor

    @property
    def samples(self) -> list:
        return [lat.sample for lat in self.latents]


def _run(embedded: list, params: dict, config: ModelConfig, prefix: str, reverse: bool) -> list:
    B = embedded[0].shape[0]
    states = unit_init_state(config.pattern, B, config.d_model)
    order = range(len(embedded) - 1, -1, -1) if reverse else range(len(embedded))
    hidden = [None] * len(embedded)
    for j in order:
        states, h = unit_step(states, embedded[j], params, config.pattern, prefix, step=j + 1)
        hidden[j] = h
    return hidden


def posterior_sample_path(fwd_hidden: list, bwd_hidden: list, params: dict, config: ModelConfig, rng=None) -> list:
    """Sequentially draw ``z_1 .. z_{N+1}``; each step conditions on the previous sample."""
    B = fwd_hidden[0].shape[0]
    dl = config.d_latent
    z_prev = Tensor(np.zeros((B, dl)))
    latents = []
    for h, g in zip(fwd_hidden, bwd_hidden):
        eps = rng.standard_normal((B, dl)) if rng is not None else None
        lat = latent_head(nm.concat([h, g], axis=-1), z_prev, params, f"{INF_PREFIX}.latent", eps)
        latents.append(lat)
        z_prev = lat.sample
    return latents


def infer(patches: PatchSequence, params: dict, config: ModelConfig, rng=None) -> PosteriorTrace:
    """Posterior over the latent path given the full window's patches."""
    q = INF_PREFIX
    rng = as_rng(rng) if config.stochastic else None
    raw = _batched(patches.raw)
    embedded = [embed(raw[:, j, :], params[f"{q}.embed.W"], params[f"{q}.embed.b"]) for j in range(raw.shape[1])]
    fwd = _run(embedded, params, config, f"{q}.fwd", reverse=False)
    bwd = _run(embedded, params, config, f"{q}.bwd", reverse=True)
    latents = posterior_sample_path(fwd, bwd, params, config, rng)
    return PosteriorTrace(latents, nm.stack(fwd, 1), nm.stack(bwd, 1), nm.stack(embedded, 1))
