"""Instance generation, finite-difference oracles and the scaling benchmark."""

import csv
import io
import logging
import math
import statistics
import sys
import time

import numpy as np

from .errors import ConfigError, GuardError
from .exact import exact_gradient
from .lowrank import fast_gradient
from .model import Instance, RopeWeights, forward, forward_from_x
from .report import BENCH_FIELDS, BenchRow
from .tensor import kron

log = logging.getLogger(__name__)

DEFAULT_SIGMA = 0.1
FD_MAX_COORDS = 4096
N_EXACT_CAP = 8192


def make_rng(seed):
    """Counter-based generator, so a seed pins every draw."""
    return np.random.Generator(np.random.Philox(int(seed)))


def _general_table(rng, n, d):
    # Fixed support: diagonal plus the cyclic superdiagonal (2d entries).
    table = np.zeros((2 * n - 1, d, d))
    r = np.arange(d)
    table[:, r, r] = rng.uniform(-1.0, 1.0, size=(2 * n - 1, d))
    if d > 1:
        table[:, r, (r + 1) % d] = rng.uniform(-1.0, 1.0, size=(2 * n - 1, d))
    return table


def gen_instance(seed, n, d, B=0.5, mode="rotary", base=10000.0, sigma=DEFAULT_SIGMA):
    """Random valid instance; ``E`` is the exact output plus N(0, sigma^2) noise."""
    if n < 1 or d < 1:
        raise ConfigError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
    if not B > 0:
        raise ConfigError(f"B must be positive, got {B}")
    if mode == "rotary" and d % 2:
        raise ConfigError(f"rotary mode needs even d, got {d}")
    rng = make_rng(seed)
    width = math.sqrt(B / d)
    a1, a2, a3 = (rng.uniform(-width, width, size=(n, d)) for _ in range(3))
    x1, x2, y = (rng.uniform(-width, width, size=(d, d)) for _ in range(3))
    # |a @ x| <= d * width**2 = B already; the rescale only guards rounding.
    for a, x in ((a1, x1), (a2, x2), (a3, y)):
        norm = np.abs(a @ x).max()
        if norm > B:
            x *= B / norm
    if mode == "general":
        weights = RopeWeights("general", n, d, table=_general_table(rng, n, d))
    elif mode == "rotary":
        weights = RopeWeights("rotary", n, d, base=base)
    else:
        weights = RopeWeights(mode, n, d)
    noise = rng.standard_normal((n, d))
    inst = Instance(a1, a2, a3, x1, x2, y, np.zeros((n, d)), B, weights)
    st = forward(inst)
    return inst.replace(E=st.S @ st.Vy + sigma * noise)


def finite_diff_gradient(inst, h=1e-5):
    """Central differences of the loss in every entry of ``X = X1 ⊗ X2``.

    ``X`` is perturbed as a free ``d^2 x d^2`` matrix.
    """
    d = inst.d
    if d**4 > FD_MAX_COORDS:
        raise GuardError(f"finite differences limited to d^4 <= {FD_MAX_COORDS}")
    x0 = inst.big_x().ravel()
    g = np.zeros_like(x0)
    for i in range(x0.size):
        xp = x0.copy()
        xp[i] += h
        xm = x0.copy()
        xm[i] -= h
        lp = forward_from_x(inst, xp.reshape(d * d, d * d)).loss
        lm = forward_from_x(inst, xm.reshape(d * d, d * d)).loss
        g[i] = (lp - lm) / (2 * h)
    return g


def finite_diff_factors(inst, h=1e-5):
    """Central differences of the loss in the entries of ``X1`` and ``X2``."""
    d = inst.d
    out = []
    for which in (0, 1):
        grad = np.zeros((d, d))
        for a in range(d):
            for b in range(d):
                vals = []
                for sign in (1.0, -1.0):
                    x1, x2 = inst.X1.copy(), inst.X2.copy()
                    (x1, x2)[which][a, b] += sign * h
                    vals.append(forward_from_x(inst, kron(x1, x2)).loss)
                grad[a, b] = (vals[0] - vals[1]) / (2 * h)
        out.append(grad)
    return tuple(out)


def relative_linf(approx, ref):
    scale = max(float(np.max(np.abs(ref))), 1e-300)
    return float(np.max(np.abs(approx - ref))) / scale


def loglog_slope(ns, times):
    """Least-squares slope of ``log(time)`` against ``log(n)``."""
    x = np.log(np.asarray(ns, dtype=np.float64))
    y = np.log(np.asarray(times, dtype=np.float64))
    return float(np.polyfit(x, y, 1)[0])


def _time_ns(fn, repeat, warmup):
    """Median wall time of ``fn`` and the result of its last call."""
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(repeat):
        t0 = time.perf_counter_ns()
        out = fn()
        samples.append(max(1, time.perf_counter_ns() - t0))
    return int(statistics.median(samples)), out


def run_bench(n_list, d=4, mode="rotary", eps=0.05, B=0.5, methods=("fast",), repeat=5,
              warmup=2, seed=0, verify=False, degree=None, n_exact_cap=N_EXACT_CAP,
              threads=1):
    """Median wall time per ``(n, method)``. Returns a list of :class:`BenchRow`."""
    n_list = [int(n) for n in n_list]
    if not n_list or n_list != sorted(n_list):
        raise ConfigError("n-list must be non-empty and sorted ascending")
    if warmup < 1 or repeat < 1:
        raise ConfigError("repeat and warmup must both be >= 1")
    bad = [m for m in methods if m not in ("exact", "fast")]
    if bad or not methods:
        raise ConfigError(f"unknown methods {bad}")
    if "exact" in methods and n_list[-1] > n_exact_cap:
        raise ConfigError(f"exact method refused above n = {n_exact_cap}")
    rows = []
    for n in n_list:
        inst = gen_instance(seed, n, d, B=B, mode=mode)
        for method in methods:
            if method == "exact":
                wall, _ = _time_ns(lambda: exact_gradient(inst), repeat, warmup)
                deg = rank = None
            else:
                wall, rep = _time_ns(
                    lambda: fast_gradient(inst, eps, verify=False, degree=degree,
                                          threads=threads),
                    repeat, warmup,
                )
                deg = rep.config_echo["degree"]
                rank = rep.config_echo["gamma_rank"]
            err = None
            if verify and method == "fast":
                err = float(np.max(np.abs(exact_gradient(inst).g - rep.g_approx)))
            rows.append(BenchRow(n, d, mode, eps, deg, rank, method, wall, err))
            log.info("n=%d method=%s wall=%.3fs", n, method, wall / 1e9)
    return rows


def slopes(rows):
    """Log-log slope per method over the rows that have at least two sizes."""
    out = {}
    for method in sorted({r.method for r in rows}):
        sel = [r for r in rows if r.method == method]
        if len(sel) >= 2:
            out[method] = loglog_slope([r.n for r in sel], [r.wall_ns for r in sel])
    return out


def write_csv(rows, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(BENCH_FIELDS)
    for r in rows:
        w.writerow(r.as_record())


def rows_to_csv(rows):
    buf = io.StringIO()
    write_csv(rows, buf)
    return buf.getvalue()


def print_slopes(rows, fh=None):
    fh = sys.stderr if fh is None else fh
    for method, s in slopes(rows).items():
        print(f"log-log slope [{method}]: {s:.3f}", file=fh)
