import numpy as np
import pytest

from ropegrad.errors import RankBudgetError, UnsupportedFastPathError
from ropegrad.exact import exact_gradient
from ropegrad.harness import gen_instance
from ropegrad.lowrank import (
    LowRankFactors,
    approx_beta_factors,
    approx_c,
    fast_contract,
    fast_gradient,
    gamma1_factors,
    gamma2_factors,
    gamma_factors,
    lift_and_factor_A,
    lift_numerator,
    lifted_rank,
    naive_contract,
    rotate_rows,
    trig_features,
)
from ropegrad.model import forward, logit_matrix, make_rotary_weights, self_consistent
from ropegrad.polyexp import PolyApprox, build_poly


def factors_for(inst, eps, shift=None):
    feat = trig_features(inst, shift)
    return lift_and_factor_A(feat, build_poly((0.0, 2 * feat.shift), eps), eps_tag=eps)


def test_rotate_rows_matches_weight_matrices():
    w = make_rotary_weights(5, 4, base=10.0)
    x = np.random.default_rng(0).standard_normal((5, 4))
    rot = rotate_rows(x, w)
    for p in range(5):
        np.testing.assert_allclose(rot[p], x[p] @ w.matrix(p), atol=1e-14)


@pytest.mark.parametrize("mode", ["identity", "rotary"])
def test_features_reproduce_logits(mode):
    inst = gen_instance(1, 40, 4, B=1.0, mode=mode)
    feat = trig_features(inst)
    assert feat.Phi.shape == (40, 5)
    np.testing.assert_allclose(feat.Phi @ feat.Psi.T - feat.shift, logit_matrix(inst), atol=1e-12)
    assert np.all(feat.Phi @ feat.Psi.T >= -1e-12)
    assert np.all(feat.Phi @ feat.Psi.T <= 2 * feat.shift + 1e-12)


def test_features_zero_weights():
    inst = gen_instance(2, 8, 2, mode="rotary").replace(X1=np.zeros((2, 2)), X2=np.zeros((2, 2)))
    feat = trig_features(inst)
    np.testing.assert_allclose(feat.Phi @ feat.Psi.T, feat.shift, atol=1e-15)


def test_general_mode_unsupported():
    with pytest.raises(UnsupportedFastPathError):
        trig_features(gen_instance(0, 4, 2, mode="general"))
    with pytest.raises(UnsupportedFastPathError) as info:
        fast_gradient(gen_instance(0, 4, 2, mode="general"), 1e-2)
    assert info.value.stage == "features"


def test_lift_reproduces_polynomial():
    inst = gen_instance(3, 12, 2, B=1.0, mode="rotary")
    feat = trig_features(inst)
    poly = build_poly((0.0, 2 * feat.shift), 1e-3)
    ua, va = lift_numerator(feat, poly)
    assert ua.shape[1] == lifted_rank(3, poly.degree)
    z = feat.Phi @ feat.Psi.T
    want = sum(c * z**k for k, c in enumerate(poly.coeffs))
    np.testing.assert_allclose(ua @ va.T, want, atol=1e-12)


def test_degree_zero_gives_uniform_rows():
    inst = gen_instance(4, 9, 2, mode="rotary")
    poly = PolyApprox(0, (1.0,), (0.0, 1.0), 0.0)
    f1 = lift_and_factor_A(trig_features(inst), poly)
    assert f1.rank == 1
    np.testing.assert_allclose(f1.dense(), np.full((9, 9), 1 / 9), atol=1e-15)


def test_forward_fidelity_n256():
    inst = gen_instance(0, 256, 4, B=0.5, mode="rotary")
    f1 = factors_for(inst, 1e-4)
    assert np.abs(f1.dense() - forward(inst).S).max() <= 1e-3
    np.testing.assert_allclose(f1.dense().sum(axis=1), 1.0, atol=1e-12)


def test_approx_c_and_beta_forms_agree():
    inst = gen_instance(5, 30, 2, mode="rotary")
    st = forward(inst)
    f1 = factors_for(inst, 1e-6)
    np.testing.assert_allclose(approx_c(f1, st.Vy, inst.E), st.C, atol=1e-6)
    compact = approx_beta_factors(f1, st.Vy, inst.E)
    expanded = approx_beta_factors(f1, st.Vy, inst.E, compact=False)
    assert compact.rank == 2 and expanded.rank == f1.rank + 2
    np.testing.assert_allclose(compact.dense(), expanded.dense(), atol=1e-12)


def test_gamma1_is_exact_hadamard():
    rng = np.random.default_rng(6)
    f1 = LowRankFactors(rng.standard_normal((10, 3)), rng.standard_normal((10, 3)), "S")
    f2 = LowRankFactors(rng.standard_normal((10, 2)), rng.standard_normal((10, 2)), "Beta")
    f3 = gamma1_factors(f1, f2)
    assert f3.rank == 6
    np.testing.assert_allclose(f3.dense(), f1.dense() * f2.dense(), atol=1e-12)


def test_gamma2_constant_beta():
    inst = gen_instance(7, 16, 2, mode="rotary")
    f1 = factors_for(inst, 1e-3)
    f2 = LowRankFactors(np.full((16, 1), 2.5), np.ones((16, 1)), "Beta")
    f4 = gamma2_factors(f1, f2)
    np.testing.assert_allclose(f4.info["r"], 2.5, atol=1e-12)
    gamma = gamma_factors(gamma1_factors(f1, f2), f4)
    assert np.abs(gamma.dense()).max() < 1e-12


def test_gamma2_matches_dense_definition():
    rng = np.random.default_rng(8)
    f1 = LowRankFactors(rng.standard_normal((12, 3)), rng.standard_normal((12, 3)), "S")
    f2 = LowRankFactors(rng.standard_normal((12, 2)), rng.standard_normal((12, 2)), "Beta")
    s, beta = f1.dense(), f2.dense()
    r = np.sum(s * beta, axis=1)
    np.testing.assert_allclose(gamma2_factors(f1, f2).dense(), r[:, None] * s, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_fast_contract_matches_naive(seed):
    rng = np.random.default_rng(seed)
    n, k = int(rng.integers(1, 65)), int(rng.integers(1, 9))
    inst = gen_instance(seed, n, 2, mode="rotary")
    f = LowRankFactors(rng.standard_normal((n, k)), rng.standard_normal((n, k)), "Gamma")
    want = naive_contract(inst, f.dense())
    np.testing.assert_allclose(fast_contract(inst, f), want, atol=1e-9)
    np.testing.assert_allclose(fast_contract(inst, f, threads=2), want, atol=1e-9)


def test_naive_contract_matches_exact_gradient():
    inst = gen_instance(9, 10, 2, mode="rotary")
    ex = exact_gradient(inst)
    np.testing.assert_allclose(naive_contract(inst, ex.Gamma), ex.g, atol=1e-14)


def test_end_to_end_n256():
    inst = gen_instance(0, 256, 4, B=0.5, mode="rotary")
    fine = fast_gradient(inst, 1e-4)
    coarse = fast_gradient(inst, 1e-2)
    assert fine.linf_diff <= 1e-2
    assert coarse.linf_diff >= fine.linf_diff
    assert set(fine.stage_timings) == {"features", "poly", "lift", "beta", "gamma1", "gamma2",
                                       "assemble", "contract"}
    assert all(v > 0 for v in fine.stage_timings.values())
    assert fine.stage_errors["S"] <= 1e-3


def test_error_monotone_in_eps():
    inst = gen_instance(11, 64, 2, B=1.0, mode="rotary")
    errs = [fast_gradient(inst, e).linf_diff for e in (0.09, 1e-2, 1e-3, 1e-4)]
    assert errs == sorted(errs, reverse=True)


def test_shift_does_not_change_tight_approximation():
    inst = gen_instance(12, 20, 2, mode="rotary")
    s_exact = forward(inst).S
    a = factors_for(inst, 1e-9, shift=0.5).dense()
    b = factors_for(inst, 1e-9, shift=1.5).dense()
    np.testing.assert_allclose(a, s_exact, atol=1e-8)
    np.testing.assert_allclose(a, b, atol=1e-8)


def test_zero_residual_gradient_small():
    inst = self_consistent(gen_instance(13, 64, 2, mode="rotary"))
    rep = fast_gradient(inst, 1e-4)
    assert np.abs(rep.g_exact).max() < 1e-12
    assert np.abs(rep.g_approx).max() < 1e-4


def test_rank_budget_error_records_stage():
    inst = gen_instance(0, 8, 16, B=0.5, mode="rotary")
    with pytest.raises(RankBudgetError) as info:
        fast_gradient(inst, 1e-4)
    assert info.value.stage == "lift"
    with pytest.raises(RankBudgetError):
        fast_gradient(gen_instance(0, 8, 4, mode="rotary"), 1e-4, k_cap=100)


def test_fixed_degree_and_echo():
    inst = gen_instance(14, 32, 2, mode="identity")
    rep = fast_gradient(inst, 1e-2, degree=3, verify=False)
    assert rep.g_exact is None and rep.linf_diff is None
    assert rep.config_echo["degree"] == 3
    assert rep.config_echo["rank"] == lifted_rank(3, 3)
    assert rep.config_echo["gamma_rank"] == lifted_rank(3, 3) * 3
