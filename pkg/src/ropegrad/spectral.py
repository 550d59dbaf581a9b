"""Iterative radix-2 FFT and all-lags cross-correlation.

The transform works on the last axis of a complex array, so a whole batch of
equal-length sequences goes through one call. Bit-reversal permutations and
per-stage twiddles are cached per length.
"""

from functools import lru_cache

import numpy as np

from .errors import ShapeError


def is_pow2(n):
    return n >= 1 and n & (n - 1) == 0


def next_pow2(n):
    return 1 << max(0, int(n - 1).bit_length())


@lru_cache(maxsize=32)
def _plan(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    twiddles = []
    m = 1
    while m < n:
        twiddles.append(np.exp(-1j * np.pi * np.arange(m) / m))
        m *= 2
    return rev, tuple(twiddles)


def fft(buf, inverse=False):
    """DFT along the last axis (``inverse`` divides by the length)."""
    x = np.asarray(buf)
    n = x.shape[-1]
    if not is_pow2(n):
        raise ShapeError(f"fft length must be a power of two, got {n}")
    if not np.all(np.isfinite(x)):
        raise ShapeError("fft input has non-finite entries")
    rev, twiddles = _plan(n)
    lead = x.shape[:-1]
    a = np.take(x, rev, axis=-1).astype(np.complex128)
    b = np.empty_like(a)
    t = np.empty(lead + (n // 2,), dtype=np.complex128)
    m = 1
    for w in twiddles:
        if inverse:
            w = w.conj()
        av = a.reshape(lead + (n // (2 * m), 2, m))
        bv = b.reshape(lead + (n // (2 * m), 2, m))
        tv = t.reshape(lead + (n // (2 * m), m))
        np.multiply(av[..., 1, :], w, out=tv)
        np.add(av[..., 0, :], tv, out=bv[..., 0, :])
        np.subtract(av[..., 0, :], tv, out=bv[..., 1, :])
        a, b = b, a
        m *= 2
    if inverse:
        a /= n
    return a


def ifft(buf):
    return fft(buf, inverse=True)


def padded_fft(x, size):
    """FFT of real rows zero-padded to ``size`` along the last axis."""
    x = np.asarray(x, dtype=np.float64)
    pad = np.zeros(x.shape[:-1] + (size,), dtype=np.complex128)
    pad[..., : x.shape[-1]] = x
    return fft(pad)


def unwrap_lags(circ, n):
    """Reorder a circular correlation into lags ``-(n-1) .. n-1``."""
    size = circ.shape[-1]
    return np.concatenate((circ[..., size - (n - 1) :], circ[..., :n]), axis=-1)


def correlate_all_lags(x, y):
    """``out[t + n - 1] = sum_i x[i + t] * y[i]`` for every lag ``t``.

    Works row-wise on 2-D inputs as well.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"length mismatch: {x.shape} vs {y.shape}")
    n = x.shape[-1]
    size = next_pow2(2 * n)
    fx = padded_fft(x, size)
    fy = padded_fft(y, size)
    circ = ifft(fx * fy.conj()).real
    return unwrap_lags(circ, n)


def correlate_naive(x, y):
    """O(n^2) reference for :func:`correlate_all_lags`."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.size
    out = np.zeros(2 * n - 1)
    for t in range(-(n - 1), n):
        s = 0.0
        for i in range(n):
            if 0 <= i + t < n:
                s += x[i + t] * y[i]
        out[t + n - 1] = s
    return out


def dft_naive(x, inverse=False):
    """O(n^2) reference DFT."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.size
    sign = 1.0 if inverse else -1.0
    k = np.arange(n)
    mat = np.exp(sign * 2j * np.pi * np.outer(k, k) / n)
    out = mat @ x
    return out / n if inverse else out
