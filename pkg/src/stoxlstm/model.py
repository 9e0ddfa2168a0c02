"""Model configuration, parameter initialization and window preparation."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import cells
from .errors import ConfigError
from .preprocess import decompose, patch_count

GEN_PREFIX = "gen"
INF_PREFIX = "inf"


@dataclass
class ModelConfig:
    lookback: int = 336
    horizon: int = 96
    patch_size: int = 56
    stride: int = 24
    d_model: int = 64
    d_latent: int = 16
    pattern: str = "ms"
    phi: str = "identity"
    kernel: int = 25
    use_decomposition: bool = True
    use_patching: bool = True
    stochastic: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.lookback < 2 or self.horizon < 0:
            raise ConfigError(f"need lookback >= 2 and horizon >= 0, got {self.lookback}, {self.horizon}")
        if self.d_model < 1 or self.d_latent < 1:
            raise ConfigError("d_model and d_latent must be positive")
        cells.check_pattern(self.pattern)
        if self.phi not in ("identity", "tanh"):
            raise ConfigError(f"phi must be 'identity' or 'tanh', got {self.phi!r}")
        P, S = self.P, self.S
        if S < 1 or P < S:
            raise ConfigError(f"need 1 <= stride <= patch size, got P={P}, S={S}")
        if self.lookback + self.horizon + S < P:
            raise ConfigError("lookback + horizon + stride is shorter than one patch")
        if self.use_decomposition and (self.kernel % 2 == 0 or self.kernel > self.lookback):
            raise ConfigError(f"decomposition kernel must be odd and <= lookback, got {self.kernel}")

    @property
    def P(self) -> int:
        return self.patch_size if self.use_patching else 1

    @property
    def S(self) -> int:
        return self.stride if self.use_patching else 1

    @property
    def N(self) -> int:
        return patch_count(self.lookback, self.horizon, self.P, self.S)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def init_params(config: ModelConfig, seed: int = 0) -> dict:
    """Fresh parameters for the generative (``gen.*``) and inference (``inf.*``) models."""
    rng = np.random.default_rng(seed)
    d, dl, P = config.d_model, config.d_latent, config.P
    flat = (config.N + 1) * d
    params = {}

    g = GEN_PREFIX
    cells._affine(rng, params, f"{g}.embed", P, d)
    params.update(cells.init_unit(rng, config.pattern, d, f"{g}.unit"))
    params.update(cells.init_latent_head(rng, d + dl, dl, f"{g}.latent"))
    params.update(cells.init_output_head(rng, dl, d, f"{g}.out"))
    cells._affine(rng, params, f"{g}.decode", flat, config.lookback + config.horizon)

    q = INF_PREFIX
    cells._affine(rng, params, f"{q}.embed", P, d)
    params.update(cells.init_unit(rng, config.pattern, d, f"{q}.fwd"))
    params.update(cells.init_unit(rng, config.pattern, d, f"{q}.bwd"))
    params.update(cells.init_latent_head(rng, 2 * d + dl, dl, f"{q}.latent"))
    return params


def generative_params(params: dict) -> dict:
    return {k: v for k, v in params.items() if k.startswith(GEN_PREFIX + ".")}


@dataclass
class PreparedWindows:
    """Seasonal, instance-normalized inputs plus what is needed to undo it.

    ``history`` is ``[B, L]``; ``target`` is ``[B, L + T]`` when the horizon
    is known (training), else ``None``.
    """

    history: np.ndarray
    target: np.ndarray | None
    mean: np.ndarray
    std: np.ndarray
    trend_hist: np.ndarray
    trend_last: np.ndarray


def prepare_windows(history, config: ModelConfig, future=None) -> PreparedWindows:
    """Normalize by history statistics, then split off a moving-average trend.

    The trend is extrapolated over the horizon by holding its last value.
    """
    history = np.atleast_2d(np.asarray(history, dtype=np.float64))
    mean = history.mean(axis=-1, keepdims=True)
    std = history.std(axis=-1, keepdims=True)
    std = np.where(std < 1e-8, 1.0, std)
    hist_n = (history - mean) / std
    if config.use_decomposition:
        trend = decompose(hist_n, config.kernel).trend
    else:
        trend = np.zeros_like(hist_n)
    trend_last = trend[:, -1:]
    target = None
    if future is not None:
        future = np.atleast_2d(np.asarray(future, dtype=np.float64))
        fut_n = (future - mean) / std - trend_last
        target = np.concatenate([hist_n - trend, fut_n], axis=-1)
    return PreparedWindows(hist_n - trend, target, mean, std, trend, trend_last)


def restore_forecast(seasonal_forecast, prep: PreparedWindows) -> np.ndarray:
    """Add the held trend back and undo instance normalization."""
    return (np.asarray(seasonal_forecast) + prep.trend_last) * prep.std + prep.mean
