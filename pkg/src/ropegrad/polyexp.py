"""Polynomial approximation of ``exp`` on a bounded interval.

Degree selection follows the optimal-degree bound
``g = Theta(max(log(1/eps) / log(log(1/eps) / B), B))`` with a concrete
constant of 1 and a safety margin of 2. Construction is Chebyshev
interpolation, converted to monomial coefficients and certified on a dense
grid.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import Chebyshev, Polynomial

from .errors import ApproximationError, ParameterError

MAX_DEGREE = 64
GRID_POINTS = 10_001
MAX_RETRIES = 5
MAX_WIDTH = 200.0


class OutOfIntervalWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PolyApprox:
    degree: int
    coeffs: tuple  # monomial basis, constant term first
    interval: tuple
    certified_err: float
    grid_points: int = GRID_POINTS


def select_degree(bint, eps):
    """Degree needed for ``|P - exp| < eps`` on an interval of width ``bint``.

    Widths below 1 are treated as 1.
    """
    if not 0.0 < eps < 0.1:
        raise ParameterError(f"eps must lie in (0, 0.1), got {eps}")
    if not bint > 0:
        raise ParameterError(f"interval width must be positive, got {bint}")
    bint = max(float(bint), 1.0)
    log_inv = math.log(1.0 / eps)
    denom = max(math.log(max(log_inv / bint, math.e)), 1.0)
    return math.ceil(max(bint, log_inv / denom)) + 2


def horner(coeffs, x):
    x = np.asarray(x, dtype=np.float64)
    acc = np.zeros_like(x)
    for c in reversed(coeffs):
        acc = acc * x + c
    return acc


def _chebyshev_monomials(lo, hi, degree):
    cheb = Chebyshev.interpolate(np.exp, degree, domain=[lo, hi])
    mono = cheb.convert(kind=Polynomial, domain=[-1, 1], window=[-1, 1])
    coeffs = np.zeros(degree + 1)
    coeffs[: mono.coef.size] = mono.coef
    return coeffs


def certify(coeffs, lo, hi, points=GRID_POINTS):
    grid = np.linspace(lo, hi, points)
    return float(np.max(np.abs(horner(coeffs, grid) - np.exp(grid))))


def build_poly(interval, eps, degree=None):
    """Certified polynomial for ``exp`` on ``interval = (lo, hi)``.

    ``degree`` overrides :func:`select_degree`; either way the degree is
    raised (at most ``MAX_RETRIES`` times) until the grid error is ``<= eps``.
    """
    lo, hi = (float(v) for v in interval)
    if not hi > lo:
        raise ParameterError(f"need hi > lo, got [{lo}, {hi}]")
    if hi - lo > MAX_WIDTH:
        raise ParameterError(f"interval width {hi - lo} exceeds {MAX_WIDTH}")
    g = select_degree(hi - lo, eps) if degree is None else int(degree)
    err = math.inf
    for _ in range(MAX_RETRIES + 1):
        if g > MAX_DEGREE:
            raise ApproximationError(
                f"degree {g} exceeds the cap of {MAX_DEGREE}; the interval is too wide",
                achieved=err,
            )
        coeffs = _chebyshev_monomials(lo, hi, g)
        err = certify(coeffs, lo, hi)
        if err <= eps:
            return PolyApprox(g, tuple(coeffs.tolist()), (lo, hi), err)
        g += 1
    raise ApproximationError(
        f"could not certify |P - exp| <= {eps:g} on [{lo}, {hi}] (best {err:.3g})",
        achieved=err,
    )


def build_fixed_degree(interval, degree):
    """Uncertified-target variant: interpolate at a given degree and report its error."""
    lo, hi = (float(v) for v in interval)
    if not hi > lo:
        raise ParameterError(f"need hi > lo, got [{lo}, {hi}]")
    coeffs = _chebyshev_monomials(lo, hi, int(degree))
    return PolyApprox(int(degree), tuple(coeffs.tolist()), (lo, hi), certify(coeffs, lo, hi))


def eval_poly(p, x):
    """Horner evaluation; warns when any ``x`` falls outside ``p.interval``."""
    lo, hi = p.interval
    xs = np.asarray(x, dtype=np.float64)
    if np.any((xs < lo) | (xs > hi)):
        warnings.warn(
            f"evaluating outside the certified interval [{lo}, {hi}]",
            OutOfIntervalWarning,
            stacklevel=2,
        )
    out = horner(p.coeffs, xs)
    return float(out) if out.ndim == 0 else out
