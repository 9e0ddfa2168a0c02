"""Series decomposition, normalization, padding and patching.

All functions here work on plain numpy arrays along the last axis, so a
batch of univariate windows ``[B, L]`` is handled the same as a single one.
Only :func:`embed` records on the gradient tape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError
from .numerics import Tensor, matmul

DEGENERATE_STD = 1e-8


@dataclass
class DecompositionPair:
    trend: np.ndarray
    seasonal: np.ndarray


@dataclass
class PatchSequence:
    """Raw patch windows plus the bookkeeping needed to undo patching.

    ``raw`` has shape ``[..., N + 1, P]``; ``mask`` flags positions that were
    zero padding rather than observed data.
    """

    raw: np.ndarray
    mask: np.ndarray
    L: int
    T: int
    P: int
    S: int
    N: int
    pad_front: int
    pad_back: int

    @property
    def n_patches(self) -> int:
        return self.N + 1


def decompose(x, kernel: int = 25) -> DecompositionPair:
    """Centered moving-average trend with edge replication; seasonal is the rest."""
    x = np.asarray(x, dtype=np.float64)
    if kernel < 1 or kernel % 2 == 0:
        raise ConfigError(f"decomposition kernel must be a positive odd integer, got {kernel}")
    if kernel > x.shape[-1]:
        raise ConfigError(f"decomposition kernel {kernel} exceeds series length {x.shape[-1]}")
    half = kernel // 2
    pad = [(0, 0)] * (x.ndim - 1) + [(half, half)]
    padded = np.pad(x, pad, mode="edge")
    csum = np.cumsum(padded, axis=-1)
    csum = np.concatenate([np.zeros(x.shape[:-1] + (1,)), csum], axis=-1)
    trend = (csum[..., kernel:] - csum[..., :-kernel]) / kernel
    return DecompositionPair(trend=trend, seasonal=x - trend)


def recombine(pair: DecompositionPair) -> np.ndarray:
    return pair.trend + pair.seasonal


def zscore(x):
    """Return ``(normalized, mean, std)`` using the population std.

    A std below 1e-8 marks a degenerate series; it is clamped to 1 so the
    normalized output is just the centered input.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < 2:
        raise ContractError("zscore needs at least two points")
    mean = x.mean(axis=-1, keepdims=True)
    std = x.std(axis=-1, keepdims=True)
    std = np.where(std < DEGENERATE_STD, 1.0, std)
    normalized = (x - mean) / std
    if x.ndim == 1:
        return normalized, float(mean[0]), float(std[0])
    return normalized, mean, std


def zscore_inverse(normalized, mean, std):
    return np.asarray(normalized) * std + mean


def patch_count(L: int, T: int, P: int, S: int) -> int:
    """Index of the last patch, ``N = ceil((L + T + S - P) / S)``."""
    return -(-(L + T + S - P) // S)


def _check_patch_config(L, T, P, S):
    if S < 1 or P < 1:
        raise ConfigError(f"patch size and stride must be positive, got P={P}, S={S}")
    if P < S:
        raise ConfigError(f"patch size {P} smaller than stride {S} would skip data")
    if L + T + S < P:
        raise ConfigError(f"padded length {L + T + S} shorter than one patch ({P})")


def _windows(padded: np.ndarray, observed: np.ndarray, N: int, P: int, S: int):
    # Zero-fill the tail so the last window is complete.
    need = N * S + P
    short = need - padded.shape[-1]
    if short > 0:
        widths = [(0, 0)] * (padded.ndim - 1) + [(0, short)]
        padded = np.pad(padded, widths)
        observed = np.pad(observed, [(0, short)])
    starts = np.arange(N + 1) * S
    idx = starts[:, None] + np.arange(P)[None, :]
    return padded[..., idx], ~observed[idx]


def pad_patch_generative(x, T: int, P: int, S: int) -> PatchSequence:
    """Patch ``[0]*S + x + [0]*T`` into ``N + 1`` windows of length ``P``."""
    x = np.asarray(x, dtype=np.float64)
    L = x.shape[-1]
    _check_patch_config(L, T, P, S)
    N = patch_count(L, T, P, S)
    widths = [(0, 0)] * (x.ndim - 1) + [(S, T)]
    padded = np.pad(x, widths)
    observed = np.zeros(L + T + S, dtype=bool)
    observed[S:S + L] = True
    raw, mask = _windows(padded, observed, N, P, S)
    return PatchSequence(raw, mask, L, T, P, S, N, pad_front=S, pad_back=T)


def pad_patch_inference(x, P: int, S: int, L: int | None = None) -> PatchSequence:
    """Patch ``[0]*S + x`` where ``x`` covers both history and horizon.

    ``L`` only splits the window length into lookback and horizon for the
    bookkeeping fields; the patch count depends on the total length alone.
    """
    x = np.asarray(x, dtype=np.float64)
    L = x.shape[-1] if L is None else L
    T = x.shape[-1] - L
    if T < 0:
        raise ContractError(f"window of length {x.shape[-1]} is shorter than lookback {L}")
    _check_patch_config(L, T, P, S)
    N = patch_count(L, T, P, S)
    widths = [(0, 0)] * (x.ndim - 1) + [(S, 0)]
    padded = np.pad(x, widths)
    observed = np.zeros(L + T + S, dtype=bool)
    observed[S:] = True
    raw, mask = _windows(padded, observed, N, P, S)
    return PatchSequence(raw, mask, L, T, P, S, N, pad_front=S, pad_back=0)


def embed(raw, W: Tensor, b: Tensor) -> Tensor:
    """Affine map from patch length ``P`` to ``d_model``, applied per patch."""
    raw = raw if isinstance(raw, Tensor) else Tensor(raw)
    return matmul(raw, W) + b
