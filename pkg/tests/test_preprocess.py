import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stoxlstm.errors import ConfigError
from stoxlstm.preprocess import (
    decompose,
    pad_patch_generative,
    pad_patch_inference,
    patch_count,
    recombine,
    zscore,
    zscore_inverse,
)


def test_patch_count_default_setting():
    # 336 + 96 + 24 - 56 = 400, 400 / 24 -> 17
    assert patch_count(336, 96, 56, 24) == 17


def test_patch_count_exact_division():
    assert patch_count(8, 4, 4, 4) == 3
    assert patch_count(10, 0, 2, 2) == 5


def test_generative_layout_small():
    ps = pad_patch_generative(np.array([1.0, 2.0, 3.0, 4.0]), T=2, P=2, S=2)
    # padded: 0 0 | 1 2 3 4 | 0 0 ; N = ceil((4+2+2-2)/2) = 3
    assert ps.N == 3
    np.testing.assert_array_equal(ps.raw, [[0, 0], [1, 2], [3, 4], [0, 0]])
    np.testing.assert_array_equal(ps.mask, [[True, True], [False, False], [False, False], [True, True]])


def test_inference_layout_covers_window():
    x = np.arange(1.0, 7.0)
    ps = pad_patch_inference(x, P=2, S=2, L=4)
    assert (ps.L, ps.T, ps.N) == (4, 2, 3)
    np.testing.assert_array_equal(ps.raw, [[0, 0], [1, 2], [3, 4], [5, 6]])


def test_tail_is_zero_filled_when_not_aligned():
    # N = 3 and N*S + P = 13 exceeds the 6 + 2 + 3 = 11 padded values
    ps = pad_patch_generative(np.ones(6), T=2, P=4, S=3)
    assert ps.N == 3
    assert ps.raw.shape == (ps.N + 1, 4)
    assert ps.mask[-1].all()
    assert ps.raw[-1].sum() == 0


def test_patch_rejects_gaps():
    with pytest.raises(ConfigError):
        pad_patch_generative(np.ones(8), T=2, P=2, S=3)


@settings(max_examples=500, deadline=None)
@given(
    st.integers(1, 400), st.integers(0, 200), st.integers(1, 64), st.integers(1, 64)
)
def test_patch_count_matches_ceiling(L, T, P, S):
    if P < S or L + T + S < P:
        return
    n = patch_count(L, T, P, S)
    assert n == int(np.ceil((L + T + S - P) / S))
    # the last window starts inside the padded series and nothing is left over
    assert n * S < L + T + S
    assert n * S + P >= L + T + S
    ps = pad_patch_generative(np.zeros(L), T, P, S)
    assert ps.raw.shape == (n + 1, P)


def test_decompose_constant_and_linear():
    pair = decompose(np.full(30, 2.5), kernel=5)
    np.testing.assert_allclose(pair.trend, 2.5)
    np.testing.assert_allclose(pair.seasonal, 0.0, atol=1e-15)
    line = np.arange(30.0)
    trend = decompose(line, kernel=5).trend
    # interior of a centered average reproduces a line
    np.testing.assert_allclose(trend[2:-2], line[2:-2])
    # edge replication: first value averages 0,0,0,1,2
    assert trend[0] == pytest.approx(0.6)


def test_decompose_matches_convolution(rng):
    x = rng.standard_normal((3, 50))
    k = 7
    padded = np.pad(x, [(0, 0), (3, 3)], mode="edge")
    expected = np.stack([np.convolve(row, np.ones(k) / k, mode="valid") for row in padded])
    pair = decompose(x, k)
    np.testing.assert_allclose(pair.trend, expected, atol=1e-12)
    np.testing.assert_allclose(recombine(pair), x, atol=1e-12)


def test_decompose_rejects_bad_kernel():
    with pytest.raises(ConfigError):
        decompose(np.ones(10), 4)
    with pytest.raises(ConfigError):
        decompose(np.ones(10), 11)


def test_zscore_round_trip_and_degenerate(rng):
    x = rng.standard_normal(40) * 3 + 7
    z, m, s = zscore(x)
    assert isinstance(m, float)
    assert z.mean() == pytest.approx(0.0, abs=1e-12)
    assert z.std() == pytest.approx(1.0)
    np.testing.assert_allclose(zscore_inverse(z, m, s), x)
    z, m, s = zscore(np.full(10, 4.0))
    assert s == 1.0
    np.testing.assert_array_equal(z, 0.0)
