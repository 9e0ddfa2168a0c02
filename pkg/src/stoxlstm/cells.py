"""Stochastic sLSTM / mLSTM recurrent cells, latent head and output head.

Parameters live in flat ``dict[str, Tensor]`` maps keyed by dotted names;
each ``init_*`` function returns the entries for one component under a
prefix. Step functions take the full map plus that prefix.

Both cells use exponential input gates stabilized by a running log-space
maximum ``m``::

    m_t  = max(log f_t + m_{t-1}, log i_t)
    i'_t = exp(log i_t - m_t)
    f'_t = exp(log f_t + m_{t-1} - m_t)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .errors import ConfigError, NumericError
from .numerics import Tensor

LOGVAR_MIN = -10.0
LOGVAR_MAX = 10.0


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _affine(rng, params, name, d_in, d_out, bias=None):
    params[f"{name}.W"] = nm.parameter(uniform_init(rng, d_in, (d_in, d_out)), f"{name}.W")
    b = np.zeros(d_out) if bias is None else bias
    params[f"{name}.b"] = nm.parameter(b, f"{name}.b")


def _check_finite(pre: Tensor, step):
    if not np.all(np.isfinite(pre.data)):
        raise NumericError("non-finite gate pre-activation", where=f"step {step}")


# -- sLSTM --------------------------------------------------------------------
@dataclass
class SLstmState:
    c: Tensor
    n: Tensor
    h: Tensor
    m: Tensor


def slstm_init_state(batch: int, d_model: int) -> SLstmState:
    z = np.zeros((batch, d_model))
    return SLstmState(Tensor(z), Tensor(z), Tensor(z), Tensor(z))


def init_slstm(rng, d_model: int, prefix: str) -> dict:
    params = {}
    # gate order: cell input y, input i, forget f, output o
    bias = np.zeros(4 * d_model)
    bias[2 * d_model:3 * d_model] = 1.0
    _affine(rng, params, f"{prefix}.in", d_model, 4 * d_model, bias)
    params[f"{prefix}.rec.W"] = nm.parameter(
        uniform_init(rng, d_model, (d_model, 4 * d_model)), f"{prefix}.rec.W"
    )
    return params


def slstm_update(state: SLstmState, y, log_i, log_f, o) -> SLstmState:
    """Gate-level sLSTM recurrence given already-activated gate values."""
    m = nm.maximum(log_f + state.m, log_i)
    i_s = nm.exp(log_i - m)
    f_s = nm.exp(log_f + state.m - m)
    c = f_s * state.c + i_s * y
    n = f_s * state.n + i_s
    h = o * (c / n)
    return SLstmState(c, n, h, m)


def slstm_step(state: SLstmState, x: Tensor, params: dict, prefix: str, step=None) -> SLstmState:
    pre = x @ params[f"{prefix}.in.W"] + state.h @ params[f"{prefix}.rec.W"] + params[f"{prefix}.in.b"]
    _check_finite(pre, step)
    y_pre, i_pre, f_pre, o_pre = nm.split(pre, 4, axis=-1)
    return slstm_update(state, nm.tanh(y_pre), i_pre, f_pre, nm.sigmoid(o_pre))


# -- mLSTM --------------------------------------------------------------------
@dataclass
class MLstmState:
    C: Tensor
    n: Tensor
    h: Tensor
    m: Tensor


def mlstm_init_state(batch: int, d_model: int) -> MLstmState:
    return MLstmState(
        Tensor(np.zeros((batch, d_model, d_model))),
        Tensor(np.zeros((batch, d_model))),
        Tensor(np.zeros((batch, d_model))),
        Tensor(np.zeros((batch, 1))),
    )


def init_mlstm(rng, d_model: int, prefix: str) -> dict:
    params = {}
    _affine(rng, params, f"{prefix}.qkv", d_model, 3 * d_model)
    _affine(rng, params, f"{prefix}.gate", d_model, 2, np.array([0.0, 1.0]))
    _affine(rng, params, f"{prefix}.out", d_model, d_model)
    return params


def memory_update(C, f, i, v, k) -> Tensor:
    """Fused ``f * C + i * v k^T`` for ``C [B, d, d]``, gates ``[B, 1]``, ``v, k [B, d]``."""
    Cd, fd, id_, vd, kd = C.data, f.data[:, :, None], i.data[:, :, None], v.data, k.data
    outer = vd[:, :, None] * kd[:, None, :]
    out = fd * Cd + id_ * outer

    def bw(g):
        gC = g * fd if C.requires_grad else None
        gf = np.einsum("bij,bij->b", g, Cd)[:, None] if f.requires_grad else None
        gk_raw = np.einsum("bij,bi->bj", g, vd)
        gi = np.einsum("bj,bj->b", gk_raw, kd)[:, None] if i.requires_grad else None
        gv = np.einsum("bij,bj->bi", g, kd) * id_[:, :, 0] if v.requires_grad else None
        gk = gk_raw * id_[:, :, 0] if k.requires_grad else None
        return gC, gf, gi, gv, gk

    return Tensor._result(out, (C, f, i, v, k), bw)


def mlstm_update(state: MLstmState, q, k, v, log_i, log_f, o) -> MLstmState:
    """Gate-level mLSTM recurrence; ``log_i``/``log_f`` have shape ``[B, 1]``."""
    m = nm.maximum(log_f + state.m, log_i)
    i_s = nm.exp(log_i - m)
    f_s = nm.exp(log_f + state.m - m)
    B, d = v.shape
    C = memory_update(state.C, f_s, i_s, v, k)
    n = f_s * state.n + i_s * k
    num = (C @ q.reshape(B, d, 1)).reshape(B, d)
    den = nm.maximum(nm.abs_((n * q).sum(axis=-1, keepdims=True)), 1.0)
    h = o * (num / den)
    return MLstmState(C, n, h, m)


def mlstm_step(state: MLstmState, x: Tensor, params: dict, prefix: str, step=None) -> MLstmState:
    d = x.shape[-1]
    qkv = x @ params[f"{prefix}.qkv.W"] + params[f"{prefix}.qkv.b"]
    gates = x @ params[f"{prefix}.gate.W"] + params[f"{prefix}.gate.b"]
    _check_finite(gates, step)
    q, k, v = nm.split(qkv, 3, axis=-1)
    k = k * (1.0 / np.sqrt(d))
    i_pre, f_pre = nm.split(gates, 2, axis=-1)
    o = nm.sigmoid(x @ params[f"{prefix}.out.W"] + params[f"{prefix}.out.b"])
    return mlstm_update(state, q, k, v, i_pre, nm.logsigmoid(f_pre), o)


# -- stacked recurrent unit ---------------------------------------------------
_CELLS = {
    "s": (init_slstm, slstm_init_state, slstm_step),
    "m": (init_mlstm, mlstm_init_state, mlstm_step),
}


def check_pattern(pattern: str) -> None:
    if not pattern or any(ch not in _CELLS for ch in pattern):
        raise ConfigError(f"block pattern must be a non-empty string over 'm'/'s', got {pattern!r}")


def init_unit(rng, pattern: str, d_model: int, prefix: str) -> dict:
    check_pattern(pattern)
    params = {}
    for i, kind in enumerate(pattern):
        params.update(_CELLS[kind][0](rng, d_model, f"{prefix}.block{i}"))
    return params


def unit_init_state(pattern: str, batch: int, d_model: int) -> list:
    return [_CELLS[kind][1](batch, d_model) for kind in pattern]


def unit_step(states: list, x: Tensor, params: dict, pattern: str, prefix: str, step=None):
    """Run every block once with residual connections; returns ``(states, h)``."""
    new_states = []
    u = x
    for i, (kind, st) in enumerate(zip(pattern, states)):
        st = _CELLS[kind][2](st, u, params, f"{prefix}.block{i}", step)
        new_states.append(st)
        u = u + st.h
    return new_states, u


# -- latent and output heads --------------------------------------------------
@dataclass
class LatentState:
    mean: Tensor
    logvar: Tensor
    sample: Tensor
    eps: np.ndarray | None = None


def init_latent_head(rng, d_in: int, d_latent: int, prefix: str) -> dict:
    params = {}
    _affine(rng, params, f"{prefix}.mu", d_in, d_latent)
    _affine(rng, params, f"{prefix}.logvar", d_in, d_latent)
    return params


def reparameterize(mean: Tensor, logvar: Tensor, eps) -> Tensor:
    if eps is None:
        return mean
    return mean + nm.exp(logvar * 0.5) * eps


def latent_head(h: Tensor, z_prev: Tensor, params: dict, prefix: str, eps=None) -> LatentState:
    """Gaussian latent from ``concat(h, z_prev)``; ``eps=None`` returns the mean as sample."""
    inp = nm.concat([h, z_prev], axis=-1)
    mean = inp @ params[f"{prefix}.mu.W"] + params[f"{prefix}.mu.b"]
    logvar = nm.clip(inp @ params[f"{prefix}.logvar.W"] + params[f"{prefix}.logvar.b"], LOGVAR_MIN, LOGVAR_MAX)
    return LatentState(mean, logvar, reparameterize(mean, logvar, eps), eps)


def init_output_head(rng, d_latent: int, d_model: int, prefix: str) -> dict:
    return {
        f"{prefix}.Wz": nm.parameter(uniform_init(rng, d_latent + d_model, (d_latent, d_model)), f"{prefix}.Wz"),
        f"{prefix}.Rz": nm.parameter(uniform_init(rng, d_latent + d_model, (d_model, d_model)), f"{prefix}.Rz"),
        f"{prefix}.b": nm.parameter(np.zeros(d_model), f"{prefix}.b"),
    }


_PHI = {"identity": lambda x: x, "tanh": nm.tanh}


def output_head(z: Tensor, h: Tensor, params: dict, prefix: str, phi: str = "identity") -> Tensor:
    try:
        act = _PHI[phi]
    except KeyError:
        raise ConfigError(f"unknown output activation {phi!r}") from None
    return act(z @ params[f"{prefix}.Wz"] + h @ params[f"{prefix}.Rz"] + params[f"{prefix}.b"])
