import math

import numpy as np
import pytest

from ropegrad.exact import (
    chain_to_factors,
    compute_beta,
    compute_gamma,
    exact_gradient,
    gradient_entry_oracle,
    oracle_gradient,
)
from ropegrad.harness import finite_diff_factors, finite_diff_gradient, gen_instance, relative_linf
from ropegrad.model import Instance, build_tilde_A_block, forward, make_identity_weights, self_consistent

# n = 2, d = 1, identity weights: every quantity is a scalar.
SMALL = dict(a1=(0.6, -0.3), a2=(0.2, -0.5), a3=(0.7, 0.4), x1=0.9, x2=-0.8, y=0.5, e=(0.1, -0.2))


def small_instance():
    p = SMALL
    col = lambda v: np.array(v, dtype=float)[:, None]  # noqa: E731
    return Instance(col(p["a1"]), col(p["a2"]), col(p["a3"]), np.array([[p["x1"]]]),
                    np.array([[p["x2"]]]), np.array([[p["y"]]]), col(p["e"]), 1.0,
                    make_identity_weights(2, 1))


def small_by_hand():
    """dL/dx for L = 0.5 sum_j (sum_i s_ji v_i - e_j)^2, z_ji = a1_j a2_i x."""
    p = SMALL
    x = p["x1"] * p["x2"]
    v = [a * p["y"] for a in p["a3"]]
    total = 0.0
    for j in range(2):
        z = [p["a1"][j] * p["a2"][i] * x for i in range(2)]
        dz = [p["a1"][j] * p["a2"][i] for i in range(2)]
        ex = [math.exp(t) for t in z]
        s = [t / sum(ex) for t in ex]
        c = sum(s[i] * v[i] for i in range(2)) - p["e"][j]
        mean_dz = sum(s[k] * dz[k] for k in range(2))
        total += c * sum(s[i] * (dz[i] - mean_dz) * v[i] for i in range(2))
    return total


def test_small_hand_expansion():
    g = exact_gradient(small_instance()).g
    assert g.shape == (1,)
    assert g[0] == pytest.approx(small_by_hand(), abs=1e-15)
    # Frozen from the hand expansion above.
    assert g[0] == pytest.approx(-0.0012427185013336778, abs=1e-14)


def test_beta_matches_loop():
    inst = gen_instance(1, 5, 2, mode="rotary")
    st = forward(inst)
    beta = compute_beta(st)
    for j0 in range(5):
        for i in range(5):
            want = sum(st.C[j0, i0] * st.Vy[i, i0] for i0 in range(2))
            assert beta[j0, i] == pytest.approx(want, abs=1e-14)


def test_gamma_matches_jacobian_form():
    inst = gen_instance(2, 6, 2, mode="rotary")
    st = forward(inst)
    beta = compute_beta(st)
    gamma = compute_gamma(st, beta)
    for j0 in range(6):
        s = st.S[j0]
        np.testing.assert_allclose(gamma[j0], (np.diag(s) - np.outer(s, s)) @ beta[j0], atol=1e-15)


def test_gamma_annihilates_row_constant_beta():
    st = forward(gen_instance(3, 7, 2))
    beta = np.repeat(np.linspace(-2, 3, 7)[:, None], 7, axis=1)
    assert np.abs(compute_gamma(st, beta)).max() < 1e-15


def test_single_token_zero_gradient():
    for mode in ("identity", "rotary", "general"):
        assert np.all(exact_gradient(gen_instance(0, 1, 2, mode=mode)).g == 0.0)


def test_self_consistent_zero_gradient():
    inst = self_consistent(gen_instance(4, 8, 2, mode="rotary"))
    assert np.abs(exact_gradient(inst).g).max() < 1e-12
    assert np.abs(finite_diff_gradient(inst)).max() <= 1e-9


@pytest.mark.parametrize("mode", ["identity", "rotary", "general"])
@pytest.mark.parametrize("n,d", [(2, 2), (4, 2), (3, 4)])
def test_matches_entrywise_oracle(mode, n, d):
    inst = gen_instance(10 * n + d, n, d, B=1.0, mode=mode)
    g = exact_gradient(inst).g
    np.testing.assert_allclose(oracle_gradient(inst), g, atol=1e-12)


def test_scalar_oracle_entries():
    inst = gen_instance(5, 3, 2, mode="rotary")
    g = exact_gradient(inst).g
    blocks = [build_tilde_A_block(inst, j0) for j0 in range(3)]
    for i in (0, 5, 9, 15):
        assert gradient_entry_oracle(inst, i, blocks) == pytest.approx(g[i], abs=1e-13)


@pytest.mark.parametrize("seed", range(3))
def test_finite_differences(seed):
    inst = gen_instance(seed, 4, 2, B=1.0, mode="rotary")
    g = exact_gradient(inst).g
    assert relative_linf(finite_diff_gradient(inst, h=1e-5), g) <= 1e-5


def test_finite_difference_h_sweep():
    inst = gen_instance(7, 4, 2, B=2.0, mode="rotary")
    g = exact_gradient(inst).g
    coarse = relative_linf(finite_diff_gradient(inst, h=1e-3), g)
    fine = relative_linf(finite_diff_gradient(inst, h=1e-5), g)
    assert fine < coarse


@pytest.mark.parametrize("mode", ["identity", "rotary"])
def test_chain_to_factors(mode):
    inst = gen_instance(8, 5, 2, B=1.0, mode=mode)
    g1, g2 = chain_to_factors(exact_gradient(inst).g, inst.X1, inst.X2)
    fd1, fd2 = finite_diff_factors(inst)
    assert relative_linf(g1, fd1) <= 1e-5
    assert relative_linf(g2, fd2) <= 1e-5


def test_exact_reuses_state():
    inst = gen_instance(9, 6, 2)
    st = forward(inst)
    assert exact_gradient(inst, state=st).state is st
