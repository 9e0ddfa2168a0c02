import numpy as np
import pytest

from stoxlstm import generative as gen_mod
from stoxlstm import numerics as nm
from stoxlstm.cells import latent_head
from stoxlstm.errors import ConfigError, DataError
from stoxlstm.generative import decode, forecast, forecast_windows, generate
from stoxlstm.model import generative_params, init_params
from stoxlstm.preprocess import pad_patch_generative

from conftest import tiny_config


def _patches(cfg, rng, B=2):
    return pad_patch_generative(rng.standard_normal((B, cfg.lookback)), cfg.horizon, cfg.P, cfg.S)


def test_trace_and_decode_shapes(tiny, rng):
    cfg, params = tiny
    trace = generate(_patches(cfg, rng), params, cfg, rng=1)
    steps = cfg.N + 1
    assert trace.patch_outputs.shape == (2, steps, cfg.d_model)
    assert trace.hidden.shape == (2, steps, cfg.d_model)
    assert len(trace.latents) == steps
    assert decode(trace, params, cfg.lookback, cfg.horizon).shape == (2, cfg.horizon)
    assert decode(trace, params, cfg.lookback, cfg.horizon, full=True).shape == (2, cfg.lookback + cfg.horizon)
    with pytest.raises(ConfigError):
        decode(trace, params, cfg.lookback + 1, cfg.horizon)


def test_future_patch_perturbation_leaves_past_bitwise(tiny, rng):
    cfg, params = tiny
    base = _patches(cfg, rng)
    a = generate(base, params, cfg, rng=5)
    for k in range(1, cfg.N + 1):
        bumped = _patches(cfg, np.random.default_rng(0))
        bumped.raw = base.raw.copy()
        bumped.raw[:, k:, :] += 10.0
        b = generate(bumped, params, cfg, rng=5)
        # step t consumes p_{t-1}, so steps 1..k only see p_0..p_{k-1}
        assert a.hidden.data[:, :k].tobytes() == b.hidden.data[:, :k].tobytes()
        for t in range(k):
            assert a.latents[t].sample.data.tobytes() == b.latents[t].sample.data.tobytes()
        assert not np.array_equal(a.hidden.data[:, k], b.hidden.data[:, k])


def test_prior_is_markov_in_h_and_previous_latent(tiny, rng):
    cfg, params = tiny
    trace = generate(_patches(cfg, rng), params, cfg, rng=9)
    z_prev = nm.Tensor(np.zeros((2, cfg.d_latent)))
    for t, lat in enumerate(trace.latents):
        again = latent_head(nm.Tensor(trace.hidden.data[:, t]), z_prev, params, "gen.latent", lat.eps)
        assert again.mean.data.tobytes() == lat.mean.data.tobytes()
        assert again.sample.data.tobytes() == lat.sample.data.tobytes()
        z_prev = lat.sample


def test_output_head_does_not_feed_back(tiny, rng):
    cfg, params = tiny
    patches = _patches(cfg, rng)
    a = generate(patches, params, cfg)
    changed = dict(params)
    changed["gen.out.Wz"] = nm.parameter(params["gen.out.Wz"].data + 1.0)
    changed["gen.out.b"] = nm.parameter(params["gen.out.b"].data - 2.0)
    b = generate(patches, changed, cfg)
    assert a.hidden.data.tobytes() == b.hidden.data.tobytes()
    assert not np.array_equal(a.patch_outputs.data, b.patch_outputs.data)


def test_forecast_ignores_inference_parameters(tiny, rng):
    cfg, params = tiny
    hist = rng.standard_normal((3, cfg.lookback))
    clean = forecast(hist, params, cfg, seed=4, n_samples=5)
    poisoned = {k: (nm.parameter(np.full_like(v.data, np.nan)) if k.startswith("inf.") else v) for k, v in params.items()}
    dirty = forecast(hist, poisoned, cfg, seed=4, n_samples=5)
    only_gen = forecast(hist, generative_params(params), cfg, seed=4, n_samples=5)
    for a, b, c in zip(clean, dirty, only_gen):
        assert a.tobytes() == b.tobytes() == c.tobytes()


def test_forecast_never_calls_inference(tiny, rng, monkeypatch):
    import stoxlstm.inference as inf_mod

    def boom(*_a, **_k):
        raise AssertionError("inference model used at forecast time")

    monkeypatch.setattr(inf_mod, "infer", boom)
    monkeypatch.setattr(inf_mod, "posterior_sample_path", boom)
    cfg, params = tiny
    forecast(rng.standard_normal((1, cfg.lookback)), params, cfg, n_samples=3)


def test_channel_independence_and_permutation(tiny, rng):
    cfg, params = tiny
    hist = rng.standard_normal((4, cfg.lookback))
    point, samples = forecast(hist, params, cfg, seed=2, n_samples=3)
    # a channel's point forecast does not depend on its neighbours
    solo, _ = forecast(hist[2:3], params, cfg)
    assert solo[0].tobytes() == point[2].tobytes()
    perm = [3, 1, 0, 2]
    p2, _ = forecast(hist[perm], params, cfg)
    np.testing.assert_array_equal(p2, point[perm])
    altered = hist.copy()
    altered[0] += 50
    p3, s3 = forecast(altered, params, cfg, seed=2, n_samples=3)
    assert p3[1:].tobytes() == point[1:].tobytes()
    assert s3[:, 1:].tobytes() == samples[:, 1:].tobytes()


def test_forecast_threads_match_serial(tiny, rng):
    cfg, params = tiny
    hist = rng.standard_normal((5, cfg.lookback))
    a = forecast(hist, params, cfg, seed=1, n_samples=4)
    b = forecast(hist, params, cfg, seed=1, n_samples=4, workers=3)
    assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()


def test_forecast_rejects_bad_input(tiny):
    cfg, params = tiny
    hist = np.zeros((2, cfg.lookback))
    hist[1, 3] = np.nan
    with pytest.raises(DataError, match="channel 1"):
        forecast(hist, params, cfg)
    with pytest.raises(ConfigError):
        forecast(np.zeros((1, cfg.lookback + 1)), params, cfg)


def test_deterministic_switch_gives_means(rng):
    cfg = tiny_config(stochastic=False)
    params = init_params(cfg, 0)
    trace = generate(_patches(cfg, rng), params, cfg, rng=3)
    for lat in trace.latents:
        assert lat.sample is lat.mean
    hist = rng.standard_normal((2, cfg.lookback))
    np.testing.assert_array_equal(forecast_windows(hist, params, cfg, rng=np.random.default_rng(0)), forecast_windows(hist, params, cfg))


def test_samples_spread_around_point(tiny, rng):
    cfg, params = tiny
    point, samples = forecast(rng.standard_normal((1, cfg.lookback)), params, cfg, seed=0, n_samples=200)
    assert samples.shape == (200, 1, cfg.horizon)
    assert samples.std(axis=0).min() > 0


@pytest.mark.parametrize("flags", [dict(use_patching=False), dict(use_decomposition=False), dict(pattern="s"), dict(pattern="mm", phi="tanh")])
def test_ablation_variants_run(flags, rng):
    cfg = tiny_config(**flags)
    params = init_params(cfg, 1)
    point, samples = forecast(rng.standard_normal((2, cfg.lookback)), params, cfg, n_samples=2)
    assert point.shape == (2, cfg.horizon) and np.isfinite(samples).all()


def test_shift_and_scale_equivariance(tiny, rng):
    # instance normalization makes forecasts follow affine changes of the input
    cfg, params = tiny
    hist = rng.standard_normal((1, cfg.lookback))
    base, _ = forecast(hist, params, cfg)
    moved, _ = forecast(3.0 * hist + 7.0, params, cfg)
    np.testing.assert_allclose(moved, 3.0 * base + 7.0, rtol=1e-10)


def test_module_exposes_no_inference_import():
    assert not hasattr(gen_mod, "infer")


def test_zero_network_and_decode_identities(rng):
    cfg = tiny_config(lookback=8, horizon=4, d_model=3)
    params = init_params(cfg, 0)
    for k, v in params.items():
        v.data[:] = 0.0
    params["gen.latent.mu.b"].data[:] = [0.25, -0.5]
    params["gen.out.b"].data[:] = 0.75
    trace = generate(_patches(cfg, rng), params, cfg)
    for lat in trace.latents:
        np.testing.assert_array_equal(lat.mean.data, [[0.25, -0.5]] * 2)
    np.testing.assert_array_equal(trace.patch_outputs.data, 0.75)
    np.testing.assert_array_equal(decode(trace, params, cfg.lookback, cfg.horizon).data, 0.0)
    # (N + 1) * d_model == L + T, so an identity head returns the flattened outputs
    assert (cfg.N + 1) * cfg.d_model == cfg.lookback + cfg.horizon
    params["gen.decode.W"].data[:] = np.eye(12)
    trace = generate(_patches(cfg, rng), init_params(cfg, 1) | {k: params[k] for k in params if k.startswith("gen.decode")}, cfg)
    full = decode(trace, params, cfg.lookback, cfg.horizon, full=True).data
    np.testing.assert_array_equal(full, trace.patch_outputs.data.reshape(2, 12))


def test_default_config_shapes():
    from stoxlstm.model import ModelConfig

    cfg = ModelConfig()
    assert (cfg.lookback, cfg.horizon, cfg.N, cfg.d_model) == (336, 96, 17, 64)
    params = init_params(cfg, 0)
    point, samples = forecast(np.random.default_rng(0).standard_normal((1, 336)), params, cfg)
    assert point.shape == (1, 96) and samples.shape == (0, 1, 96)
