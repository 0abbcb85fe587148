"""March p downward toward 1 with warm starts, record the estimates that
hold along the way, extract the limit pair (u, z) and certify it.

The certificate checks the three limit conditions on the final step: the
extracted flux field stays inside the unit ball (up to tolerance), the
pairing integral of flux against the gradient reproduces the total
variation, and the weak-form residual is negligible; a Cauchy criterion on
the weighted gradient differences monitors the strong convergence claim.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .grid import GridDomain, ScalarField, VectorField, gradient, integrate
from .orlicz import ExponentPair, luxemburg_norm, lr_norm, smallness_check, weighted_lq_norm
from .solver import SolveParams, flux, solve_fixed_p, weak_residual
from .weights import WeightField, check_H0

TOL_FLUX = 0.05
TOL_PAIR = 0.05
TOL_RES = 1e-6
THETA0_DECAY = 1e-3
PAIRING_EPS = 1e-14


def default_schedule(k_max: int = 10) -> tuple:
    """p_k = 1 + 2^-k for k = 1..k_max."""
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    return tuple(1.0 + 2.0 ** -k for k in range(1, k_max + 1))


@dataclass(frozen=True)
class ContinuationConfig:
    q: float
    p_schedule: tuple = default_schedule()
    epsilon0: float = 1e-2
    tol: float | None = None
    max_iter: int = 200
    flux_r_list: tuple = (1, 2, 4, 8)
    strict_h0: bool = False

    def __post_init__(self):
        ps = tuple(self.p_schedule)
        if not ps or any(p <= 1.0 for p in ps):
            raise ValueError("p_schedule entries must exceed 1")
        if any(b >= a for a, b in zip(ps[1:], ps[:-1])):
            raise ValueError("p_schedule must be strictly decreasing")
        if self.q <= 1.0:
            raise ValueError("q must exceed 1")
        if any(r < 1 for r in self.flux_r_list):
            raise ValueError("flux exponents must be >= 1")

    def epsilon(self, p: float) -> float:
        return self.epsilon0 * (p - 1.0)

    def solve_params(self, p: float) -> SolveParams:
        return SolveParams(exponents=ExponentPair(p, self.q),
                           epsilon=self.epsilon(p), tol=self.tol,
                           max_iter=self.max_iter)


@dataclass(frozen=True)
class StepDiagnostics:
    p: float
    lambda_p: float             # Luxemburg norm of grad u_p, theta_p variant
    weighted_q: float           # (int a |grad u_p|^q)^(1/q)
    flux_lr: Mapping            # r -> L^r norm of the p-flux
    flux_sup: float
    theta0_diff_prev: float     # theta_0 norm of grad u_p - grad u_prev
    pairing_ratio: float
    residual: float
    iterations: int
    ratio_ok: bool              # q/p < 1 + 1/n at this step


@dataclass(frozen=True)
class LimitCertificate:
    flux_sup_final: float
    pairing_ratio_final: float
    residual_final: float
    theta0_cauchy: bool
    smallness_lhs: float
    verdict: str                # certified | failed | inconclusive
    eps_sensitivity: float


def pairing_ratio(z: VectorField, u: ScalarField, grid: GridDomain) -> float:
    """integrate(z . grad u) / integrate(|grad u|), with the 0/0 case (both
    integrals below 1e-14) defined as 1: the zero field pairs trivially."""
    g = gradient(u)
    num = integrate(np.sum(z.components * g.components, axis=0), grid)
    den = integrate(g.magnitude(), grid)
    if abs(num) < PAIRING_EPS and den < PAIRING_EPS:
        return 1.0
    return num / max(den, PAIRING_EPS)


def monotone_gap(u_p: ScalarField, u_ref: ScalarField, q: float,
                 a: WeightField, grid: GridDomain) -> float:
    """integrate(a (F_q(grad u_p) - F_q(grad u_ref)) . (grad u_p - grad u_ref))
    with F_q(g) = |g|^(q-2) g; nonnegative by convexity."""
    gp = gradient(u_p).components
    gr = gradient(u_ref).components

    def fq(comps):
        s2 = np.sum(comps ** 2, axis=0)
        with np.errstate(divide="ignore"):
            coeff = np.where(s2 > 0.0, s2 ** (0.5 * (q - 2.0)), 0.0)
        return coeff * comps

    dens = a.values * np.sum((fq(gp) - fq(gr)) * (gp - gr), axis=0)
    return integrate(dens, grid)


def poincare_ratio(u: ScalarField, a: WeightField, e: ExponentPair,
                   grid: GridDomain) -> float:
    """Luxemburg-norm ratio ||u|| / ||grad u|| (theta_p variant); scale
    invariant by homogeneity.  Raises for the zero field."""
    if not np.any(u.values != 0.0):
        raise ValueError("poincare ratio undefined for the zero field")
    num = luxemburg_norm(u, a, e, "theta_p")
    den = luxemburg_norm(gradient(u), a, e, "theta_p")
    if den == 0.0:
        raise ValueError("gradient vanishes; ratio undefined")
    return num / den


def step_diagnostics(u_p: ScalarField, u_prev: ScalarField, p: float,
                     config: ContinuationConfig, a: WeightField,
                     f: ScalarField, grid: GridDomain,
                     iterations: int = 0) -> StepDiagnostics:
    """Assemble the per-step record from the norm and solver operations."""
    e = ExponentPair(p, config.q)
    params = config.solve_params(p)
    gu = gradient(u_p)
    z = flux(u_p, p, params.epsilon)
    mz = z.magnitude()
    diff = VectorField(gu.components - gradient(u_prev).components, grid)
    return StepDiagnostics(
        p=p,
        lambda_p=luxemburg_norm(gu, a, e, "theta_p"),
        weighted_q=weighted_lq_norm(gu, a, e.q),
        flux_lr={int(r): lr_norm(z, r) for r in config.flux_r_list},
        flux_sup=float(mz.max(initial=0.0)),
        theta0_diff_prev=luxemburg_norm(diff, a, e, "theta_0"),
        pairing_ratio=pairing_ratio(z, u_p, grid),
        residual=weak_residual(u_p, params, a, f, grid),
        iterations=iterations,
        ratio_ok=config.q / p < 1.0 + 1.0 / grid.dim,
    )


def _certificate(steps: list, smallness_lhs: float, smallness_ok: bool,
                 aborted: bool, eps_sensitivity: float) -> LimitCertificate:
    if not steps:
        return LimitCertificate(math.nan, math.nan, math.nan, False,
                                smallness_lhs, "failed", eps_sensitivity)
    last = steps[-1]
    cauchy = last.theta0_diff_prev <= THETA0_DECAY * (steps[0].theta0_diff_prev + 1e-12)
    ok = (last.flux_sup <= 1.0 + TOL_FLUX
          and 1.0 - TOL_PAIR <= last.pairing_ratio <= 1.0 + TOL_PAIR
          and last.residual <= TOL_RES
          and cauchy)
    if aborted:
        verdict = "failed"
    elif ok:
        verdict = "certified" if smallness_ok else "inconclusive"
    else:
        verdict = "failed"
    return LimitCertificate(
        flux_sup_final=last.flux_sup,
        pairing_ratio_final=last.pairing_ratio,
        residual_final=last.residual,
        theta0_cauchy=cauchy,
        smallness_lhs=smallness_lhs,
        verdict=verdict,
        eps_sensitivity=eps_sensitivity,
    )


def run_continuation(config: ContinuationConfig, a: WeightField,
                     f: ScalarField, grid: GridDomain):
    """Execute the schedule with warm starts.

    Returns (steps, certificate, u, z) where u is the last converged solution
    and z its p-flux.  A weight failing the admissibility check raises; in
    strict mode so does a schedule step violating q/p < 1 + 1/n.  A solve
    that fails to converge aborts the march: diagnostics collected so far are
    returned and the certificate verdict is "failed".
    """
    schedule = tuple(config.p_schedule)
    h0 = check_H0(a, grid, config.q, grid.dim, min(schedule))
    if h0.verdict == "fail":
        raise ValueError("weight fails the admissibility check "
                         f"(boundary_min={h0.boundary_min}, aq={h0.aq_constant})")
    if config.strict_h0:
        bad = [p for p in schedule if not config.q / p < 1.0 + 1.0 / grid.dim]
        if bad:
            raise ValueError(f"strict exponent mode: steps {bad} violate "
                             f"q/p < 1 + 1/{grid.dim}")
    small = smallness_check(f, grid, grid.dim)

    steps: list[StepDiagnostics] = []
    u_prev = ScalarField.zeros(grid)
    u_final = u_prev
    p_final = schedule[0]
    aborted = False
    for p in schedule:
        res = solve_fixed_p(config.solve_params(p), a, f, grid, init=u_prev)
        if not res.converged:
            aborted = True
            break
        steps.append(step_diagnostics(res.u, u_prev, p, config, a, f, grid,
                                      iterations=res.iterations))
        u_prev = res.u
        u_final = res.u
        p_final = p

    z = flux(u_final, p_final, config.epsilon(p_final))

    eps_sens = math.nan
    if steps and not aborted:
        half = SolveParams(exponents=ExponentPair(p_final, config.q),
                           epsilon=0.5 * config.epsilon(p_final),
                           tol=config.tol, max_iter=config.max_iter)
        res_h = solve_fixed_p(half, a, f, grid, init=u_final)
        z_h = flux(res_h.u, p_final, half.epsilon)
        sup_h = float(z_h.magnitude().max(initial=0.0))
        pair_h = pairing_ratio(z_h, res_h.u, grid)
        eps_sens = max(abs(sup_h - steps[-1].flux_sup),
                       abs(pair_h - steps[-1].pairing_ratio))

    cert = _certificate(steps, small.lhs, small.passed, aborted, eps_sens)
    return steps, cert, u_final, z


def uniqueness_probe(config: ContinuationConfig, a: WeightField,
                     f: ScalarField, grid: GridDomain, n_seeds: int,
                     seed: int = 0, init_scale: float = 0.1) -> float:
    """Max pairwise sup-difference of final-step solutions when the march is
    started from ``n_seeds`` random Dirichlet initial fields."""
    if n_seeds < 2:
        raise ValueError("n_seeds must be >= 2")
    rng = np.random.default_rng(seed)
    finals = []
    for _ in range(n_seeds):
        vals = init_scale * rng.standard_normal(grid.n_nodes)
        vals[~grid.interior_mask] = 0.0
        u_prev = ScalarField(vals, grid)
        for p in config.p_schedule:
            res = solve_fixed_p(config.solve_params(p), a, f, grid, init=u_prev)
            u_prev = res.u
        finals.append(u_prev.values)
    worst = 0.0
    for i in range(len(finals)):
        for j in range(i + 1, len(finals)):
            worst = max(worst, float(np.abs(finals[i] - finals[j]).max()))
    return worst
