"""Almost-linear-time approximate gradient.

Pipeline: rotation-aware features whose inner products reproduce every
logit, polynomial lifting of those features so that ``U_A @ V_A.T`` holds the
polynomial-approximated attention numerator, row normalization, then the
beta / gamma factor algebra and an FFT contraction grouped by lag. No
``n x n`` matrix is ever formed outside verification.
"""

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, GuardError, RankBudgetError, RopeGradError, UnsupportedFastPathError
from .exact import exact_gradient, place_against_weights
from .model import MATERIALIZE_LIMIT, build_tilde_A_block
from .polyexp import build_fixed_degree, build_poly
from .report import GradReport
from .spectral import ifft, next_pow2, padded_fft, unwrap_lags
from .tensor import rowwise_kron

K_CAP = 4096
MIN_SHIFT = 0.5
VERIFY_AUTO_MAX_N = 256
VERIFY_MAX_N = 2048
# Complex entries per side per contraction chunk.
CHUNK_ENTRIES = 2**20


@dataclass
class LowRankFactors:
    U: np.ndarray
    V: np.ndarray
    target_tag: str
    eps_tag: float = None
    measured_err: float = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.U.ndim != 2 or self.V.ndim != 2 or self.U.shape != self.V.shape:
            raise ValueError(f"factor shapes disagree: {self.U.shape} vs {self.V.shape}")

    @property
    def rank(self):
        return self.U.shape[1]

    def dense(self):
        n = self.U.shape[0]
        if n * n > MATERIALIZE_LIMIT:
            raise GuardError(f"refusing to densify an {n}x{n} factor product")
        return self.U @ self.V.T


@dataclass
class TrigFeatures:
    Phi: np.ndarray
    Psi: np.ndarray
    shift: float


def _check_rank(k, k_cap, what):
    if k > k_cap:
        raise RankBudgetError(
            f"{what} needs rank {k} > k_cap = {k_cap}; use a smaller d or a larger eps"
        )


def rotate_rows(x, weights):
    """Row ``p`` of ``x`` times ``W_p`` (absolute position ``p``)."""
    if weights.mode == "identity":
        return x.copy()
    pos = np.arange(x.shape[0])
    out = np.empty_like(x)
    for b, th in enumerate(weights.thetas):
        c, s = np.cos(pos * th), np.sin(pos * th)
        x1, x2 = x[:, 2 * b], x[:, 2 * b + 1]
        out[:, 2 * b] = x1 * c + x2 * s
        out[:, 2 * b + 1] = x2 * c - x1 * s
    return out


def trig_features(inst, shift=None):
    """Features with ``Phi[j0] @ Psi[i] == logit(j0, i) + shift``.

    Rotations compose, ``W_{j0-i} = W_{j0} W_i^T``, so the logit splits into
    a query row rotated by its own position and a key row rotated by its own
    position. The extra coordinate carries the shift.
    """
    w = inst.weights
    if w.mode not in ("identity", "rotary"):
        raise UnsupportedFastPathError(
            f"no fast path for {w.mode!r} weights; use the exact gradient"
        )
    q = rotate_rows(inst.queries, w) / inst.d
    k = rotate_rows(inst.keys, w)
    if shift is None:
        # Cauchy-Schwarz bound on |logit|; the floor keeps the interval width >= 1.
        bound = float(np.linalg.norm(q, axis=1).max() * np.linalg.norm(k, axis=1).max())
        shift = max(bound, MIN_SHIFT)
    root = math.sqrt(shift)
    n = inst.n
    phi = np.hstack((q, np.full((n, 1), root)))
    psi = np.hstack((k, np.full((n, 1), root)))
    return TrigFeatures(Phi=phi, Psi=psi, shift=float(shift))


def lifted_rank(dim, degree):
    return math.comb(dim + degree, degree)


def _monomials(x, degree):
    """All monomials of the columns of ``x`` of degree <= ``degree``.

    Returns the ``n x k`` products and the matching ``k x dim`` exponents;
    both sides of a factorization share this enumeration order.
    """
    n, dim = x.shape
    cols = [np.ones((n, 1))]
    exps = [np.zeros((1, dim), dtype=np.int64)]
    last = np.array([-1])
    cur, cur_exp = cols[0], exps[0]
    for _ in range(degree):
        new_cols, new_exps, new_last = [], [], []
        for j in range(dim):
            keep = last <= j
            new_cols.append(cur[:, keep] * x[:, j : j + 1])
            e = cur_exp[keep].copy()
            e[:, j] += 1
            new_exps.append(e)
            new_last.append(np.full(int(keep.sum()), j))
        cur = np.hstack(new_cols)
        cur_exp = np.vstack(new_exps)
        last = np.concatenate(new_last)
        cols.append(cur)
        exps.append(cur_exp)
    return np.hstack(cols), np.vstack(exps)


def _multinomial(exps):
    total = exps.sum(axis=1)
    out = np.empty(exps.shape[0])
    for r, (m, e) in enumerate(zip(total, exps)):
        v = math.factorial(int(m))
        for a in e:
            v //= math.factorial(int(a))
        out[r] = v
    return out


def lift_numerator(feat, poly, k_cap=K_CAP):
    """Unnormalized ``U_A, V_A`` with ``U_A @ V_A.T == P(Phi @ Psi.T)``."""
    dim = feat.Phi.shape[1]
    g = poly.degree
    _check_rank(lifted_rank(dim, g), k_cap, "polynomial lifting")
    mono_u, exps = _monomials(feat.Phi, g)
    mono_v, _ = _monomials(feat.Psi, g)
    coeffs = np.asarray(poly.coeffs)[exps.sum(axis=1)]
    weight = coeffs * _multinomial(exps)
    root = np.sqrt(np.abs(weight))
    return mono_u * (np.sign(weight) * root), mono_v * root


def lift_and_factor_A(feat, poly, k_cap=K_CAP, eps_tag=None):
    """Low-rank factors of the normalized softmax matrix."""
    ua, va = lift_numerator(feat, poly, k_cap)
    rowsum = ua @ va.sum(axis=0)
    return LowRankFactors(
        U=ua / rowsum[:, None],
        V=va,
        target_tag="S",
        eps_tag=eps_tag,
        info={"degree": poly.degree, "shift": feat.shift, "certified_err": poly.certified_err},
    )


def approx_c(f1, vy, e):
    """Residual ``S_approx @ Vy - E`` in O(n k d)."""
    return f1.U @ (f1.V.T @ vy) - e


def approx_beta_factors(f1, vy, e, compact=True):
    """Factors of ``Beta ≈ (S_approx Vy - E) Vy^T``.

    The product has rank at most d, so the default keeps ``U2 = approx_c``
    and ``V2 = Vy``. ``compact=False`` gives the expanded rank ``k1 + d``
    form ``U2 = [U1 | -E]``, ``V2 = [Vy (Vy^T V1) | Vy]`` of the same matrix.
    """
    if compact:
        u2, v2 = approx_c(f1, vy, e), vy.copy()
    else:
        u2 = np.hstack((f1.U, -e))
        v2 = np.hstack((vy @ (vy.T @ f1.V), vy))
    return LowRankFactors(U=u2, V=v2, target_tag="Beta", eps_tag=f1.eps_tag)


def gamma1_factors(f1, f2, k_cap=K_CAP):
    """``S ∘ Beta`` through the row-wise Kronecker identity."""
    _check_rank(f1.rank * f2.rank, k_cap, "gamma1 factors")
    return LowRankFactors(
        U=rowwise_kron(f1.U, f2.U),
        V=rowwise_kron(f1.V, f2.V),
        target_tag="Gamma1",
        eps_tag=f1.eps_tag,
    )


def gamma2_factors(f1, f2):
    """Row ``j0`` is ``r[j0] * S[j0]`` with ``r[j0] = <S[j0], Beta[j0]>``."""
    m = f1.V.T @ f2.V
    r = np.sum((f1.U @ m) * f2.U, axis=1)
    return LowRankFactors(U=f1.U * r[:, None], V=f1.V.copy(), target_tag="Gamma2",
                          eps_tag=f1.eps_tag, info={"r": r})


def gamma_factors(f3, f4, k_cap=K_CAP):
    _check_rank(f3.rank + f4.rank, k_cap, "gamma factors")
    return LowRankFactors(
        U=np.hstack((f3.U, -f4.U)),
        V=np.hstack((f3.V, f4.V)),
        target_tag="Gamma",
        eps_tag=f3.eps_tag,
    )


def _contract_chunk(u, v, a1, a2, size):
    # (l, d, n) sequences -> spectra, then sum_l X[a] conj(Y[c]) per frequency.
    fx = padded_fft((u[:, :, None] * a1[:, None, :]).transpose(1, 2, 0), size)
    fy = padded_fft((v[:, :, None] * a2[:, None, :]).transpose(1, 2, 0), size)
    return np.matmul(fx.transpose(2, 1, 0), fy.conj().transpose(2, 0, 1))


def fast_contract(inst, f_gamma, k_cap=K_CAP, threads=1):
    """``tilde_A.T @ vec(U V^T)`` without forming anything ``n x n``.

    For each coordinate pair ``(a, c)`` the per-lag sums are
    ``sum_l corr(U[:, l] * A1[:, a], V[:, l] * A2[:, c])``; the sum over
    ``l`` is taken in the frequency domain, so only ``2 k d`` forward and
    ``d^2`` inverse transforms are needed.
    """
    _check_rank(f_gamma.rank, k_cap, "contraction")
    n, d = inst.n, inst.d
    size = next_pow2(2 * n)
    u, v = f_gamma.U, f_gamma.V
    k = u.shape[1]
    step = max(1, CHUNK_ENTRIES // (d * size))
    bounds = [(s, min(s + step, k)) for s in range(0, k, step)]

    def work(b):
        s, e = b
        return _contract_chunk(u[:, s:e], v[:, s:e], inst.A1, inst.A2, size)

    spec = np.zeros((size, d, d), dtype=np.complex128)
    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, bounds))
        for p in parts:
            spec += p
    else:
        for b in bounds:
            spec += work(b)
    circ = ifft(spec.transpose(1, 2, 0)).real
    lags = unwrap_lags(circ, n).transpose(2, 0, 1)
    return place_against_weights(inst.weights, lags)


def naive_contract(inst, gamma):
    """``tilde_A.T @ vec(gamma)`` by explicit per-query blocks."""
    n, d = inst.n, inst.d
    if n * n * d**4 > MATERIALIZE_LIMIT:
        raise GuardError(f"naive contraction too large (n={n}, d={d})")
    gamma = np.asarray(gamma, dtype=np.float64)
    g = np.zeros(d**4)
    for j0 in range(n):
        g += gamma[j0] @ build_tilde_A_block(inst, j0)
    return g


def _linf(a, b):
    return float(np.max(np.abs(a - b)))


def fast_gradient(inst, eps, k_cap=K_CAP, verify=None, degree=None, threads=1,
                  compact_beta=True):
    """Approximate gradient with a per-stage timing breakdown.

    ``verify`` (auto for ``n <= 256``) adds the exact gradient, ``linf_diff``
    and dense per-stage errors to the report. ``degree`` pins the polynomial
    degree instead of deriving it from ``eps``.
    """
    n = inst.n
    if verify is None:
        verify = n <= VERIFY_AUTO_MAX_N
    if verify and n > VERIFY_MAX_N:
        raise ConfigError(f"dense verification refused above n = {VERIFY_MAX_N}")
    timings = {}
    results = {}

    def stage(name, fn):
        t0 = time.perf_counter_ns()
        try:
            out = fn()
        except RopeGradError as exc:
            exc.stage = name
            raise
        timings[name] = max(1, time.perf_counter_ns() - t0)
        results[name] = out
        return out

    feat = stage("features", lambda: trig_features(inst))
    interval = (0.0, 2.0 * feat.shift)
    if degree is None:
        poly = stage("poly", lambda: build_poly(interval, eps))
    else:
        poly = stage("poly", lambda: build_fixed_degree(interval, degree))
    f1 = stage("lift", lambda: lift_and_factor_A(feat, poly, k_cap, eps_tag=eps))
    vy = inst.values
    f2 = stage("beta", lambda: approx_beta_factors(f1, vy, inst.E, compact=compact_beta))
    f3 = stage("gamma1", lambda: gamma1_factors(f1, f2, k_cap))
    f4 = stage("gamma2", lambda: gamma2_factors(f1, f2))
    fg = stage("assemble", lambda: gamma_factors(f3, f4, k_cap))
    g = stage("contract", lambda: fast_contract(inst, fg, k_cap, threads))

    echo = {
        "n": n, "d": inst.d, "mode": inst.weights.mode, "eps": eps,
        "degree": poly.degree, "rank": f1.rank, "gamma_rank": fg.rank,
        "shift": feat.shift, "certified_err": poly.certified_err,
    }
    report = GradReport(g_approx=g, stage_timings=timings, config_echo=echo)
    if verify:
        ex = exact_gradient(inst)
        st = ex.state
        gamma1 = st.S * ex.Beta
        report.stage_errors = {
            "S": _linf(f1.dense(), st.S),
            "C": _linf(approx_c(f1, vy, inst.E), st.C),
            "Beta": _linf(f2.dense(), ex.Beta),
            "Gamma1": _linf(f3.dense(), gamma1),
            "Gamma2": _linf(f4.dense(), gamma1 - ex.Gamma),
            "Gamma": _linf(fg.dense(), ex.Gamma),
        }
        report.g_exact = ex.g
        report.linf_diff = _linf(ex.g, g)
    return report

