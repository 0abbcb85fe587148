"""Function-space toolbox: modulars, Luxemburg norms, plain and weighted
Lebesgue norms, sharp Sobolev constants and the smallness check.

The two modulars in play are rho_p(v) = int(|v|^p + a|v|^q) and
rho_0(v) = int(a|v|^q); their Luxemburg norms are computed by certified
bisection on lambda -> rho(v/lambda).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np

from .grid import GridDomain, ScalarField, VectorField, integrate
from .weights import WeightField

Field = Union[ScalarField, VectorField]

VARIANTS = ("theta_p", "theta_0")


@dataclass(frozen=True)
class ExponentPair:
    """Growth exponents (p, q), both above 1.

    The ordering p < q is the typical regime but is not enforced: the p=q=2
    Poisson oracle and continuation schedules whose first steps sit above q
    both need the relaxed form.
    """

    p: float
    q: float

    def __post_init__(self):
        if not (self.p > 1.0 and self.q > 1.0):
            raise ValueError("exponents must exceed 1")

    def p_star(self, n: int) -> float:
        if self.p >= n:
            raise ValueError("p < n required for the critical exponent")
        return n * self.p / (n - self.p)

    def p_lower(self, n: int) -> float:
        # dual exponent of p_star: 1/p_lower + 1/p_star = 1
        return n * self.p / (n * (self.p - 1.0) + self.p)


def _cell_magnitude(v: Field) -> np.ndarray:
    if isinstance(v, VectorField):
        return v.magnitude()
    return np.abs(v.cell_values())


def modular(v: Field, a: WeightField, e: ExponentPair, variant: str) -> float:
    """rho(v): int(|v|^p + a|v|^q) for theta_p, int(a|v|^q) for theta_0."""
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    mag = _cell_magnitude(v)
    dens = a.values * mag ** e.q
    if variant == "theta_p":
        dens = dens + mag ** e.p
    return integrate(dens, v.grid)


def luxemburg_norm(v: Field, a: WeightField, e: ExponentPair,
                   variant: str = "theta_p", tol: float = 1e-10) -> float:
    """inf{lambda > 0 : rho(v/lambda) <= 1} by bisection.

    The initial bracket [tiny, max(1, ||v||_1 + (int a|v|^q)^(1/q) + 1)] is
    verified and expanded before iterating, so the bisection is total;
    the returned lambda has relative width ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    mag = _cell_magnitude(v)
    if not np.any(mag > 0):
        return 0.0
    grid = v.grid
    wq = a.values * mag ** e.q
    if variant == "theta_0" and integrate(wq, grid) == 0.0:
        return 0.0  # field invisible to the weighted modular

    def rho(lam: float) -> float:
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            dens = a.values * (mag / lam) ** e.q
            if variant == "theta_p":
                dens = dens + (mag / lam) ** e.p
            return float(dens.sum() * grid.spacing ** grid.dim)

    hi = max(1.0, integrate(mag, grid) + integrate(wq, grid) ** (1.0 / e.q) + 1.0)
    for _ in range(200):
        if rho(hi) <= 1.0:
            break
        hi *= 2.0
    else:
        raise ArithmeticError("failed to bracket the Luxemburg norm from above")
    lo = hi * 2.0 ** -120
    for _ in range(200):
        if rho(lo) >= 1.0:
            break
        # keep lo > 0 while sliding the bracket down
        hi = lo
        lo *= 2.0 ** -120
    else:
        raise ArithmeticError("failed to bracket the Luxemburg norm from below")

    for _ in range(400):
        if hi - lo <= tol * lo:
            break
        mid = 0.5 * (lo + hi)
        if rho(mid) > 1.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def lr_norm(v: Field, r: float) -> float:
    """Plain L^r norm (int |v|^r)^(1/r) with midpoint quadrature."""
    if r < 1:
        raise ValueError("r must be >= 1")
    mag = _cell_magnitude(v)
    return integrate(mag ** r, v.grid) ** (1.0 / r)


def weighted_lq_norm(v: Field, a: WeightField, q: float) -> float:
    """Weighted norm (int a|v|^q)^(1/q)."""
    mag = _cell_magnitude(v)
    return integrate(a.values * mag ** q, v.grid) ** (1.0 / q)


def sobolev_constant(n: int, p: float) -> float:
    """Sharp constant S(n,p) of the embedding ||u||_{p*} <= S ||grad u||_p.

    For p = 1 this is the isoperimetric constant n^{-1} omega_n^{-1/n}; for
    1 < p < n it is the closed-form optimal constant (Talenti), which tends
    to the p = 1 value as p -> 1.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    if p >= n:
        raise ValueError("p < n required for the Sobolev embedding")
    if p == 1.0:
        omega_n = math.pi ** (n / 2.0) / math.gamma(n / 2.0 + 1.0)
        return 1.0 / (n * omega_n ** (1.0 / n))
    g = math.gamma
    bracket = g(1.0 + n / 2.0) * g(float(n)) / (g(n / p) * g(1.0 + n - n / p))
    return (math.pi ** -0.5 * n ** (-1.0 / p)
            * ((p - 1.0) / (n - p)) ** (1.0 - 1.0 / p)
            * bracket ** (1.0 / n))


class SmallnessResult(NamedTuple):
    lhs: float
    passed: bool    # lhs < 1


def smallness_check(f: ScalarField, grid: GridDomain, n: int) -> SmallnessResult:
    """Evaluate ||f||_n (S(n,1) + 1) and compare against 1."""
    lhs = lr_norm(f, float(n)) * (sobolev_constant(n, 1.0) + 1.0)
    return SmallnessResult(lhs=lhs, passed=lhs < 1.0)


class HoelderCheck(NamedTuple):
    lhs: float
    rhs: float
    holds: bool


def hoelder_fp_check(f: ScalarField, grid: GridDomain, n: int,
                     p: float) -> HoelderCheck:
    """Check ||f||_{p_*} <= |Omega|^{1-1/p} ||f||_n for the dual exponent
    p_* of p* = np/(n-p)."""
    if not (1.0 < p < n):
        raise ValueError("need 1 < p < n")
    p_low = n * p / (n * (p - 1.0) + p)
    lhs = lr_norm(f, p_low)
    rhs = grid.measure ** (1.0 - 1.0 / p) * lr_norm(f, float(n))
    return HoelderCheck(lhs=lhs, rhs=rhs, holds=lhs <= rhs * (1.0 + 1e-10))
