"""Closed-form gradient of the loss with respect to ``x = vec(X1 ⊗ X2)``.

The gradient is ``tilde_A.T @ vec(Gamma)``; :func:`exact_gradient` forms it
without materializing ``tilde_A`` by grouping terms on the lag ``t = j0 - i``:

    T_t[a, c] = sum_i Gamma[i+t, i] * A1[i+t, a] * A2[i, c]
    G         = sum_t vec(T_t) vec(W_t)^T / d      (d^2 x d^2, g = vec(G))

The entrywise oracle below evaluates the seven-part chain rule literally
from the materialized per-query blocks.
"""

from dataclasses import dataclass

import numpy as np

from .model import (
    ForwardState,
    build_tilde_A_block,
    forward,
    lag_index,
    s_of,
    u_of,
    v_of,
)


@dataclass(frozen=True, eq=False)
class GradIntermediates:
    Beta: np.ndarray
    Gamma: np.ndarray
    g: np.ndarray
    state: ForwardState


def compute_beta(state):
    """Row ``j0`` is ``(A3 Y c[j0]^T)^T``, i.e. the matrix ``C @ Vy.T``."""
    return state.C @ state.Vy.T


def compute_gamma(state, beta):
    """Row ``j0`` is ``(diag(s) - s s^T) beta[j0]`` with ``s = S[j0]``; O(n^2) total."""
    sb = state.S * beta
    return sb - state.S * sb.sum(axis=1, keepdims=True)


def lag_sums(inst, gamma):
    """``T_t[a, c]`` for every lag, shape ``(2n-1, d, d)``. O(n^2 d^2)."""
    n, d = inst.n, inst.d
    idx = lag_index(n).ravel()
    out = np.empty((2 * n - 1, d, d))
    for a in range(d):
        ga = gamma * inst.A1[:, a, None]
        for c in range(d):
            w = ga * inst.A2[None, :, c]
            out[:, a, c] = np.bincount(idx, weights=w.ravel(), minlength=2 * n - 1)
    return out


def place_against_weights(weights, lag_table):
    """``vec(sum_t vec(T_t) vec(W_t)^T) / d`` touching only the weight support."""
    n, d = weights.n, weights.d
    t2 = lag_table.reshape(2 * n - 1, d * d)
    cols = np.flatnonzero(weights.support().ravel())
    wv = weights.vec_table()[:, cols]
    big = np.zeros((d * d, d * d))
    big[:, cols] = t2.T @ wv
    return (big / d).ravel()


def exact_gradient(inst, state=None):
    if state is None:
        state = forward(inst)
    beta = compute_beta(state)
    gamma = compute_gamma(state, beta)
    g = place_against_weights(inst.weights, lag_sums(inst, gamma))
    return GradIntermediates(Beta=beta, Gamma=gamma, g=g, state=state)


# Entrywise derivative oracle. ``block`` is the n x d^4 matrix for one query
# row and ``x`` the full parameter vector; ``i`` indexes the d^4 coordinates.

def d_logits(block, i):
    """Part 1: derivative of ``block @ x`` along coordinate ``i``."""
    return block[:, i]


def d_u(block, x, i):
    """Part 2."""
    return u_of(block, x) * block[:, i]


def d_alpha(block, x, i):
    """Part 3."""
    return float(block[:, i] @ u_of(block, x))


def d_s(block, x, i):
    """Part 4."""
    s = s_of(block, x)
    col = block[:, i]
    return -s * float(col @ s) + s * col


def d_inner(inst, block, x, i, i0):
    """Part 5: derivative of ``<s, v_{i0}>``."""
    return float(d_s(block, x, i) @ v_of(inst, i0))


def d_residual(inst, block, x, i, i0):
    """Part 6: the target ``E`` is constant, so this equals Part 5."""
    return d_inner(inst, block, x, i, i0)


def d_loss_entry(inst, block, x, i, j0, i0):
    """Part 7: derivative of ``0.5 * c[j0, i0]**2``."""
    c = float(s_of(block, x) @ v_of(inst, i0)) - inst.E[j0, i0]
    return c * d_residual(inst, block, x, i, i0)


def gradient_entry_oracle(inst, i, blocks=None):
    """Coordinate ``i`` of the gradient, summed literally over all ``(j0, i0)``."""
    x = inst.big_x().ravel()
    total = 0.0
    for j0 in range(inst.n):
        block = blocks[j0] if blocks is not None else build_tilde_A_block(inst, j0)
        for i0 in range(inst.d):
            total += d_loss_entry(inst, block, x, i, j0, i0)
    return total


def oracle_gradient(inst):
    """All ``d^4`` oracle entries, Part 7 applied to every coordinate at once."""
    n, d = inst.n, inst.d
    x = inst.big_x().ravel()
    g = np.zeros(d**4)
    for j0 in range(n):
        block = build_tilde_A_block(inst, j0)
        s = s_of(block, x)
        ds = -np.outer(s, block.T @ s) + s[:, None] * block  # column i is Part 4
        for i0 in range(d):
            v = v_of(inst, i0)
            c = float(s @ v) - inst.E[j0, i0]
            g += c * (v @ ds)
    return g


def chain_to_factors(g, x1, x2):
    """Map the gradient in ``X1 ⊗ X2`` to gradients in ``X1`` and ``X2``."""
    d = x1.shape[0]
    g4 = np.asarray(g, dtype=np.float64).reshape(d, d, d, d)  # [a, c, b, e]
    g1 = np.einsum("acbe,ce->ab", g4, x2)
    g2 = np.einsum("acbe,ab->ce", g4, x1)
    return g1, g2
