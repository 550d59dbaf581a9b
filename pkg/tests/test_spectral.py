import numpy as np
import pytest

from ropegrad.errors import ShapeError
from ropegrad.spectral import (
    correlate_all_lags,
    correlate_naive,
    dft_naive,
    fft,
    ifft,
    is_pow2,
    next_pow2,
)


def test_pow2_helpers():
    assert [is_pow2(k) for k in (1, 2, 3, 4, 6, 1024)] == [True, True, False, True, False, True]
    assert [next_pow2(k) for k in (1, 2, 3, 5, 1024, 1025)] == [1, 2, 4, 8, 1024, 2048]


def test_impulse_and_dc():
    imp = np.zeros(8)
    imp[0] = 1.0
    np.testing.assert_allclose(fft(imp), np.ones(8), atol=1e-15)
    np.testing.assert_allclose(fft(np.ones(8)), [8, 0, 0, 0, 0, 0, 0, 0], atol=1e-14)


@pytest.mark.parametrize("n", [1, 2, 4, 16, 128])
def test_matches_naive_dft(n):
    rng = np.random.default_rng(n)
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    np.testing.assert_allclose(fft(x), dft_naive(x), atol=1e-12)
    np.testing.assert_allclose(ifft(x), dft_naive(x, inverse=True), atol=1e-12)


@pytest.mark.parametrize("n", [2, 64, 1024])
def test_roundtrip_and_parseval(n):
    rng = np.random.default_rng(100 + n)
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    fx = fft(x)
    assert np.abs(ifft(fx) - x).max() <= 1e-12
    assert abs(np.sum(np.abs(x) ** 2) - np.sum(np.abs(fx) ** 2) / n) <= 1e-10 * n


def test_batched_rows_match_single():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((3, 2, 32))
    out = fft(x)
    for idx in np.ndindex(3, 2):
        np.testing.assert_allclose(out[idx], fft(x[idx]), atol=1e-13)


def test_linearity():
    rng = np.random.default_rng(6)
    x, y = rng.standard_normal((2, 64))
    np.testing.assert_allclose(fft(2.5 * x - y), 2.5 * fft(x) - fft(y), atol=1e-12)


def test_rejects_bad_input():
    with pytest.raises(ShapeError):
        fft(np.ones(6))
    with pytest.raises(ShapeError):
        fft(np.array([1.0, np.nan]))


def test_correlation_golden():
    np.testing.assert_allclose(correlate_all_lags([1.0, 2.0], [1.0, 1.0]), [1, 3, 2], atol=1e-14)
    np.testing.assert_allclose(correlate_naive([1.0, 2.0], [1.0, 1.0]), [1, 3, 2])


@pytest.mark.parametrize("n", [1, 3, 17, 100, 1024])
def test_correlation_matches_naive(n):
    rng = np.random.default_rng(n)
    x, y = rng.standard_normal((2, n))
    np.testing.assert_allclose(correlate_all_lags(x, y), correlate_naive(x, y), atol=1e-10)


def test_correlation_swap_reverses():
    rng = np.random.default_rng(9)
    x, y = rng.standard_normal((2, 20))
    np.testing.assert_allclose(correlate_all_lags(y, x), correlate_all_lags(x, y)[::-1],
                               atol=1e-12)


def test_correlation_length_mismatch():
    with pytest.raises(ShapeError):
        correlate_all_lags(np.ones(3), np.ones(4))
