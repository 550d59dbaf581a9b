"""Dense algebra helpers: Kronecker products, row-major vectorization, Hadamard.

Matrices are plain ``float64`` numpy arrays. Every product uses the same
first-factor-major pairing, and ``vec`` stacks rows, so that
``(u ⊗ v) · vec(W) == u @ W @ v`` holds without hidden transposes.
"""

import numpy as np

from .errors import ShapeError, SizingError

# Largest number of entries any helper here will allocate.
MAX_ENTRIES = 2**31


def as_matrix(m, name="matrix"):
    """Return ``m`` as a finite 2-D float64 array, raising on anything else."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ShapeError(f"{name} has non-finite entries")
    return a


def as_vector(v, name="vector"):
    a = np.asarray(v, dtype=np.float64)
    if a.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ShapeError(f"{name} has non-finite entries")
    return a


def kron(m, n):
    """Kronecker product with ``out[j0*r + j1, i0*s + i1] = m[j0, i0] * n[j1, i1]``."""
    m = as_matrix(m, "m")
    n = as_matrix(n, "n")
    p, q = m.shape
    r, s = n.shape
    if p * r * q * s > MAX_ENTRIES:
        raise SizingError(f"kron output {p * r}x{q * s} is too large")
    return (m[:, None, :, None] * n[None, :, None, :]).reshape(p * r, q * s)


def rowwise_kron(u, v):
    """Row-wise Kronecker (Khatri-Rao over rows).

    ``out[i, l1*k2 + l2] = u[i, l1] * v[i, l2]``, the same first-factor-major
    pairing as :func:`kron`.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.ndim != 2 or v.ndim != 2:
        raise ShapeError("rowwise_kron expects 2-D inputs")
    if u.shape[0] != v.shape[0]:
        raise ShapeError(f"row count mismatch: {u.shape[0]} vs {v.shape[0]}")
    n, k1 = u.shape
    k2 = v.shape[1]
    if n * k1 * k2 > MAX_ENTRIES:
        raise SizingError(f"rowwise_kron output {n}x{k1 * k2} is too large")
    return (u[:, :, None] * v[:, None, :]).reshape(n, k1 * k2)


def vec(m):
    """Row-major stacking: ``vec(m)[i*q + j] == m[i, j]``."""
    return np.asarray(m, dtype=np.float64).reshape(-1).copy()


def unvec(v, p, q):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size != p * q:
        raise ShapeError(f"cannot unvec length {v.size} into {p}x{q}")
    return v.reshape(p, q).copy()


def hadamard(m, n):
    m = np.asarray(m, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    if m.shape != n.shape:
        raise ShapeError(f"hadamard shape mismatch: {m.shape} vs {n.shape}")
    return m * n


def tensor_trick(a1, x, a2, check=False, atol=1e-12):
    """``vec(a1 @ x @ a2.T)``, optionally cross-checked against ``kron(a1, a2) @ vec(x)``.

    The check materializes an n^2 x d^2 matrix, so keep it to small inputs.
    """
    a1 = as_matrix(a1, "a1")
    x = as_matrix(x, "x")
    a2 = as_matrix(a2, "a2")
    if a1.shape[1] != x.shape[0] or a2.shape[1] != x.shape[1]:
        raise ShapeError(
            f"incompatible shapes {a1.shape}, {x.shape}, {a2.shape} for a1 @ x @ a2.T"
        )
    out = vec(a1 @ x @ a2.T)
    if check:
        ref = kron(a1, a2) @ vec(x)
        scale = max(1.0, float(np.abs(ref).max(initial=0.0)))
        err = float(np.abs(out - ref).max(initial=0.0))
        if err > atol * scale:
            raise AssertionError(f"tensor trick mismatch {err:.3e}")
    return out
