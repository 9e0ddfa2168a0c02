"""Point-forecast metrics and the sample-based CRPS.

Multivariate inputs ``[C, T]`` are scored per channel (mean over the
horizon) and then averaged over channels.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ContractError, DimensionError

MAPE_EPS = 1e-8


@dataclass
class EvalReport:
    mae: float
    mse: float
    mape: float
    rmse: float
    crps: float | None = None
    epsilon: float = MAPE_EPS
    per_horizon: dict | None = None

    def as_row(self) -> dict:
        row = asdict(self)
        row.pop("per_horizon")
        return row


def _as_2d(a):
    a = np.asarray(a, dtype=np.float64)
    return a[None, :] if a.ndim == 1 else a


def point_metrics(y, y_hat, eps: float = MAPE_EPS, per_horizon: bool = False) -> EvalReport:
    y, y_hat = _as_2d(y), _as_2d(y_hat)
    if y.shape != y_hat.shape:
        raise DimensionError(f"truth {y.shape} and forecast {y_hat.shape} differ")
    if eps <= 0:
        raise ContractError("MAPE epsilon must be positive")
    err = y - y_hat
    abs_err = np.abs(err)
    sq_err = err * err
    mae = float(np.mean(np.mean(abs_err, axis=-1)))
    mse = float(np.mean(np.mean(sq_err, axis=-1)))
    mape = float(np.mean(100.0 * np.mean(abs_err / (np.abs(y) + eps), axis=-1)))
    rmse = float(np.sqrt(mse))
    horizon = None
    if per_horizon:
        horizon = {"mae": abs_err.mean(axis=0), "mse": sq_err.mean(axis=0)}
    return EvalReport(mae=mae, mse=mse, mape=mape, rmse=rmse, epsilon=eps, per_horizon=horizon)


def crps_per_step(samples, y) -> np.ndarray:
    """Energy-form CRPS at each step: ``E|X - y| - E|X - X'| / 2``.

    ``samples`` is ``[M, ...]`` and ``y`` matches the trailing shape.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.shape[0] < 1:
        raise ContractError("CRPS needs at least one sample")
    y = np.asarray(y, dtype=np.float64)
    first = np.mean(np.abs(samples - y), axis=0)
    if samples.shape[0] == 1:
        return first
    # E|X - X'| over all ordered pairs from sorted samples in O(M log M)
    s = np.sort(samples, axis=0)
    M = s.shape[0]
    weights = (2 * np.arange(1, M + 1) - M - 1).reshape((M,) + (1,) * (s.ndim - 1))
    spread = 2.0 * np.sum(weights * s, axis=0) / (M * M)
    return first - 0.5 * spread


def crps_empirical(samples, y) -> float:
    """Sample CRPS averaged over the horizon (and over channels for ``[M, C, T]``)."""
    per_step = crps_per_step(samples, y)
    if per_step.ndim <= 1:
        return float(np.mean(per_step))
    return float(np.mean(np.mean(per_step, axis=-1)))


def evaluate(y, point, samples=None, eps: float = MAPE_EPS) -> EvalReport:
    """Point metrics plus CRPS when samples ``[M, C, T]`` are supplied."""
    report = point_metrics(y, point, eps)
    if samples is not None and len(samples):
        report.crps = crps_empirical(samples, _as_2d(y))
    return report


def seasonal_naive(history, horizon: int, period: int) -> np.ndarray:
    """Repeat the last ``period`` observations over the horizon."""
    history = np.asarray(history, dtype=np.float64)
    if period < 1 or period > history.shape[-1]:
        raise ContractError(f"period {period} must be in [1, {history.shape[-1]}]")
    last = history[..., -period:]
    reps = -(-horizon // period)
    return np.concatenate([last] * reps, axis=-1)[..., :horizon]
