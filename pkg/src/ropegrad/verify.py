"""Executable acceptance checks.

Each check returns a :class:`CheckResult` holding named metrics. A metric
passes when its value is ``<= tol`` (kind ``"max"``) or ``>= tol`` (kind
``"min"``); a check passes when every metric passes and the check finished
inside its runtime budget.
"""

import json
import sys
import time
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import ConfigError
from .exact import chain_to_factors, exact_gradient, oracle_gradient
from .harness import (
    finite_diff_factors,
    finite_diff_gradient,
    gen_instance,
    relative_linf,
    run_bench,
    slopes,
)
from .lowrank import (
    LowRankFactors,
    fast_contract,
    fast_gradient,
    lift_and_factor_A,
    naive_contract,
    trig_features,
)
from .model import forward, self_consistent
from .polyexp import build_poly, select_degree
from .spectral import correlate_all_lags, correlate_naive, fft, ifft
from .tensor import hadamard, kron, rowwise_kron, tensor_trick, vec

TOLERANCES = {
    "tensor_trick": 1e-12,
    "rowwise_kron": 1e-12,
    "cross_oracle": 1e-10,
    "fd_gradient": 1e-5,
    "fd_factors": 1e-5,
    "poly_err_ratio": 1.0,
    "poly_degree_gap": 0,
    "forward_S": 1e-3,
    "contract": 1e-9,
    "grad_linf": 1e-2,
    "eps_monotone_gap": 0.0,
    "fast_slope": 1.35,
    "exact_slope": 1.7,
    "single_token": 1e-12,
    "zero_resid_exact": 1e-12,
    "zero_resid_fast": 1e-2,
    "uniform_rows": 1e-12,
    "fft_roundtrip": 1e-12,
    "fft_parseval": 1e-10,
    "fft_correlation": 1e-10,
}

# Seconds per check.
BUDGETS = {
    "algebra": 5.0,
    "cross_oracle": 30.0,
    "finite_diff": 60.0,
    "poly_exp": 5.0,
    "forward_fidelity": 60.0,
    "contraction": 30.0,
    "end_to_end": 120.0,
    "scaling": 600.0,
    "degeneracy": 5.0,
    "fft": 5.0,
}

SCALING = {
    "fast_n": [512, 1024, 2048, 4096, 8192],
    "exact_n": [512, 1024, 2048],
    "d": 4,
    "eps": 0.05,
    "B": 0.5,
    "repeat": 5,
    "warmup": 2,
}

CONFIG_KEYS = {"checks", "seed", "tolerances", "budgets", "scaling"}


@dataclass
class Metric:
    name: str
    value: float
    tol: float
    kind: str = "max"

    @property
    def ok(self):
        v = float(self.value)
        if not np.isfinite(v):
            return False
        return v <= self.tol if self.kind == "max" else v >= self.tol

    def describe(self):
        op = "<=" if self.kind == "max" else ">="
        return f"{self.name}={self.value:.3g} {op} {self.tol:g}"


@dataclass
class CheckResult:
    index: int
    name: str
    metrics: list = field(default_factory=list)
    seconds: float = 0.0
    budget: float = None
    error: str = None

    @property
    def passed(self):
        if self.error is not None:
            return False
        if self.budget is not None and self.seconds > self.budget:
            return False
        return all(m.ok for m in self.metrics)

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        parts = [m.describe() + ("" if m.ok else " (violated)") for m in self.metrics]
        if self.error is not None:
            parts.append(f"error: {self.error}")
        if self.budget is not None and self.seconds > self.budget:
            parts.append(f"over budget {self.budget:g}s")
        return f"{tag} {self.index:2d} {self.name:<16} {self.seconds:7.2f}s  " + "; ".join(parts)

    def to_json(self):
        return {
            "index": self.index, "name": self.name, "passed": self.passed,
            "seconds": self.seconds, "budget": self.budget, "error": self.error,
            "metrics": [{"name": m.name, "value": float(m.value), "tol": m.tol,
                         "kind": m.kind, "ok": m.ok} for m in self.metrics],
        }


def _rng(seed, salt):
    return np.random.default_rng([int(seed), salt])


def check_algebra(seed, tol, **_):
    rng = _rng(seed, 1)
    trick = rk = 0.0
    for _ in range(100):
        n, d = int(rng.integers(1, 17)), int(rng.integers(1, 5))
        a1, a2 = rng.standard_normal((2, n, d))
        x = rng.standard_normal((d, d))
        trick = max(trick, float(np.abs(tensor_trick(a1, x, a2) - kron(a1, a2) @ vec(x)).max()))
    for _ in range(100):
        n = int(rng.integers(1, 17))
        k1, k2 = (int(k) for k in rng.integers(1, 5, size=2))
        u1, v1 = rng.standard_normal((2, n, k1))
        u2, v2 = rng.standard_normal((2, n, k2))
        lhs = hadamard(u1 @ v1.T, u2 @ v2.T)
        rhs = rowwise_kron(u1, u2) @ rowwise_kron(v1, v2).T
        rk = max(rk, float(np.abs(lhs - rhs).max()))
    return [Metric("tensor_trick", trick, tol["tensor_trick"]),
            Metric("rowwise_kron", rk, tol["rowwise_kron"])]


def check_cross_oracle(seed, tol, **_):
    combos = [(n, d, m) for n in (2, 4, 8) for d in (2, 4) for m in ("identity", "rotary")]
    worst = 0.0
    for k in range(20):
        n, d, mode = combos[k % len(combos)]
        inst = gen_instance(seed * 1000 + 200 + k, n, d, B=1.0, mode=mode)
        worst = max(worst, float(np.abs(exact_gradient(inst).g - oracle_gradient(inst)).max()))
    return [Metric("cross_oracle", worst, tol["cross_oracle"])]


def check_finite_diff(seed, tol, **_):
    g_err = f_err = 0.0
    for k in range(10):
        n = (2, 4, 6, 8)[k % 4]
        mode = ("identity", "rotary")[k % 2]
        inst = gen_instance(seed * 1000 + 300 + k, n, 2, B=1.0, mode=mode)
        g = exact_gradient(inst).g
        g_err = max(g_err, relative_linf(finite_diff_gradient(inst, h=1e-5), g))
        g1, g2 = chain_to_factors(g, inst.X1, inst.X2)
        fd1, fd2 = finite_diff_factors(inst, h=1e-5)
        f_err = max(f_err, relative_linf(g1, fd1), relative_linf(g2, fd2))
    return [Metric("fd_gradient", g_err, tol["fd_gradient"]),
            Metric("fd_factors", f_err, tol["fd_factors"])]


def check_poly_exp(seed, tol, **_):
    ratio = 0.0
    gap = None
    for bint in (1, 2, 4):
        for eps in (1e-2, 1e-4):
            ratio = max(ratio, build_poly((0.0, float(bint)), eps).certified_err / eps)
        step = select_degree(bint, 1e-4) - select_degree(bint, 1e-2)
        gap = step if gap is None else min(gap, step)
    return [Metric("poly_err_ratio", ratio, tol["poly_err_ratio"]),
            Metric("poly_degree_gap", gap, tol["poly_degree_gap"], "min")]


def check_forward_fidelity(seed, tol, **_):
    inst = gen_instance(seed, 256, 4, B=0.5, mode="rotary")
    feat = trig_features(inst)
    f1 = lift_and_factor_A(feat, build_poly((0.0, 2 * feat.shift), 1e-4))
    err = float(np.abs(f1.dense() - forward(inst).S).max())
    return [Metric("forward_S", err, tol["forward_S"])]


def check_contraction(seed, tol, **_):
    rng = _rng(seed, 6)
    worst = 0.0
    for k in range(10):
        n, r = int(rng.integers(1, 65)), int(rng.integers(1, 9))
        inst = gen_instance(seed * 1000 + 600 + k, n, 2, mode="rotary")
        f = LowRankFactors(rng.standard_normal((n, r)), rng.standard_normal((n, r)), "Gamma")
        worst = max(worst, float(np.abs(fast_contract(inst, f) - naive_contract(inst, f.dense())).max()))
    return [Metric("contract", worst, tol["contract"])]


def check_end_to_end(seed, tol, **_):
    inst = gen_instance(seed, 256, 4, B=0.5, mode="rotary")
    fine = fast_gradient(inst, 1e-4, verify=True).linf_diff
    coarse = fast_gradient(inst, 1e-2, verify=True).linf_diff
    return [Metric("grad_linf", fine, tol["grad_linf"]),
            Metric("eps_monotone_gap", coarse - fine, tol["eps_monotone_gap"], "min")]


def check_scaling(seed, tol, scaling=None, **_):
    cfg = dict(SCALING, **(scaling or {}))
    common = dict(d=cfg["d"], mode="rotary", eps=cfg["eps"], B=cfg["B"], repeat=cfg["repeat"],
                  warmup=cfg["warmup"], seed=seed)
    with threadpool_limits(1):
        fast_rows = run_bench(cfg["fast_n"], methods=("fast",), **common)
        exact_rows = run_bench(cfg["exact_n"], methods=("exact",), **common)
    return [Metric("fast_slope", slopes(fast_rows)["fast"], tol["fast_slope"]),
            Metric("exact_slope", slopes(exact_rows)["exact"], tol["exact_slope"], "min")]


def check_degeneracy(seed, tol, **_):
    one = gen_instance(seed, 1, 2, mode="rotary")
    single = max(float(np.abs(exact_gradient(one).g).max()),
                 float(np.abs(fast_gradient(one, 1e-4, verify=False).g_approx).max()))
    zero = self_consistent(gen_instance(seed, 64, 2, mode="rotary"))
    z_exact = float(np.abs(exact_gradient(zero).g).max())
    z_fast = float(np.abs(fast_gradient(zero, 1e-4, verify=False).g_approx).max())
    flat = gen_instance(seed, 16, 2, mode="rotary").replace(X1=np.zeros((2, 2)), X2=np.zeros((2, 2)))
    uniform = float(np.abs(forward(flat).S - 1.0 / 16).max())
    return [Metric("single_token", single, tol["single_token"]),
            Metric("zero_resid_exact", z_exact, tol["zero_resid_exact"]),
            Metric("zero_resid_fast", z_fast, tol["zero_resid_fast"]),
            Metric("uniform_rows", uniform, tol["uniform_rows"])]


def check_fft(seed, tol, **_):
    rng = _rng(seed, 10)
    rt = pars = corr = 0.0
    for n in (1, 2, 8, 64, 256, 1024):
        x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        fx = fft(x)
        rt = max(rt, float(np.abs(ifft(fx) - x).max()))
        energy = float(np.sum(np.abs(x) ** 2))
        pars = max(pars, abs(energy - float(np.sum(np.abs(fx) ** 2)) / n) / energy)
    for n in (1, 5, 64, 333, 1024):
        a, b = rng.standard_normal((2, n))
        corr = max(corr, float(np.abs(correlate_all_lags(a, b) - correlate_naive(a, b)).max()))
    return [Metric("fft_roundtrip", rt, tol["fft_roundtrip"]),
            Metric("fft_parseval", pars, tol["fft_parseval"]),
            Metric("fft_correlation", corr, tol["fft_correlation"])]


CHECKS = (
    ("algebra", check_algebra),
    ("cross_oracle", check_cross_oracle),
    ("finite_diff", check_finite_diff),
    ("poly_exp", check_poly_exp),
    ("forward_fidelity", check_forward_fidelity),
    ("contraction", check_contraction),
    ("end_to_end", check_end_to_end),
    ("scaling", check_scaling),
    ("degeneracy", check_degeneracy),
    ("fft", check_fft),
)
CHECK_NAMES = tuple(name for name, _ in CHECKS)


def resolve_config(config=None):
    """Validate a verify config and fill defaults. Raises ConfigError."""
    config = dict(config or {})
    unknown = set(config) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    checks = config.get("checks") or list(CHECK_NAMES)
    names = []
    for c in checks:
        if isinstance(c, int) and not isinstance(c, bool) and 1 <= c <= len(CHECKS):
            names.append(CHECK_NAMES[c - 1])
        elif c in CHECK_NAMES:
            names.append(c)
        else:
            raise ConfigError(f"unknown check {c!r}; choose from {list(CHECK_NAMES)} or 1..10")
    tol = dict(TOLERANCES)
    for key, val in (config.get("tolerances") or {}).items():
        if key not in tol:
            raise ConfigError(f"unknown tolerance {key!r}")
        tol[key] = _number(val, f"tolerance {key}")
    budgets = dict(BUDGETS)
    for key, val in (config.get("budgets") or {}).items():
        if key not in budgets:
            raise ConfigError(f"unknown budget {key!r}")
        budgets[key] = None if val is None else _number(val, f"budget {key}")
    scaling = dict(SCALING)
    for key, val in (config.get("scaling") or {}).items():
        if key not in scaling:
            raise ConfigError(f"unknown scaling key {key!r}")
        scaling[key] = val
    seed = config.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
    # Keep the configured order but run each check once.
    order = [n for n in CHECK_NAMES if n in names]
    return {"checks": order, "seed": seed, "tolerances": tol, "budgets": budgets,
            "scaling": scaling}


def _number(val, what):
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{what} must be a number, got {val!r}")
    return float(val)


def run_check(name, cfg):
    fn = dict(CHECKS)[name]
    res = CheckResult(CHECK_NAMES.index(name) + 1, name, budget=cfg["budgets"][name])
    t0 = time.perf_counter()
    try:
        res.metrics = fn(cfg["seed"], cfg["tolerances"], scaling=cfg["scaling"])
    except Exception as exc:  # a crashing check is a failed check
        res.error = f"{type(exc).__name__}: {exc}"
    res.seconds = time.perf_counter() - t0
    return res


def run_verify(config=None, out=None):
    """Run the configured checks in order, printing one line per check.

    Returns ``(status, results)`` with status 0 when all pass, 1 on any
    failure and 2 on a config error.
    """
    out = sys.stdout if out is None else out
    try:
        cfg = resolve_config(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=out)
        return 2, []
    results = []
    for name in cfg["checks"]:
        res = run_check(name, cfg)
        print(res.line(), file=out, flush=True)
        results.append(res)
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} of {len(results)} checks failed: {', '.join(failed)}", file=out)
    else:
        print(f"all {len(results)} checks passed", file=out)
    return (1 if failed else 0), results


def load_config(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object")
    return doc
