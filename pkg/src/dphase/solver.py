"""Fixed-p solver for the double-phase problem by damped Newton on the
regularized convex energy

    E(u) = int( (1/p)((|grad u|^2 + eps^2)^(p/2) - eps^p)
              + (a/q)|grad u|^q ) - int(f u),

whose stationarity condition is the discrete weak form: the p-flux
(|grad u|^2+eps^2)^((p-2)/2) grad u plus the weighted q-flux tested against
every interior nodal basis function balances the load.  The eps term keeps
the Hessian bounded as p -> 1 and is scheduled to vanish in that limit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import GridDomain, ScalarField, VectorField, gradient, project_dirichlet
from .orlicz import ExponentPair
from .weights import WeightField

_EIG_FLOOR = 1e-12
_ARMIJO = 1e-4


@dataclass(frozen=True)
class SolveParams:
    """Knobs for one fixed-p solve.

    ``tol`` is the stationarity tolerance on the sup-norm of the energy
    gradient; None picks 1e-9 * (1 + |E(init)|).  ``epsilon`` regularizes
    |grad u|^(p-2) and may be zero (only safe for p >= 2).
    """

    exponents: ExponentPair
    epsilon: float = 1e-2
    tol: float | None = None
    max_iter: int = 200

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.tol is not None and self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass(frozen=True)
class SolveResult:
    u: ScalarField
    iterations: int
    energy: float
    grad_sup: float
    residual: float
    converged: bool
    energies: tuple = ()        # accepted-step energy history, E(init) first


def _load_vector(f: ScalarField, grid: GridDomain) -> np.ndarray:
    """Nodal load: derivative of integrate(f_cell * u_cell) with corner
    averaging on both factors."""
    hd = grid.spacing ** grid.dim
    return hd * (grid.avg_op.T @ (grid.avg_op @ f.values))


def energy(u: ScalarField, params: SolveParams, a: WeightField,
           f: ScalarField, grid: GridDomain) -> float:
    e = params.exponents
    eps = params.epsilon
    g = gradient(u)
    s2 = np.sum(g.components ** 2, axis=0)
    dens = ((s2 + eps ** 2) ** (0.5 * e.p) - eps ** e.p) / e.p
    with np.errstate(invalid="ignore"):
        sq = np.where(s2 > 0.0, s2 ** (0.5 * e.q), 0.0)
    dens = dens + (a.values / e.q) * sq
    hd = grid.spacing ** grid.dim
    quad = float(dens.sum() * hd)
    load = float((grid.avg_op @ f.values) @ (grid.avg_op @ u.values) * hd)
    return quad - load


def _flux_arrays(comps: np.ndarray, p: float, eps: float) -> np.ndarray:
    s2 = np.sum(comps ** 2, axis=0)
    base = s2 + eps ** 2
    with np.errstate(divide="ignore"):
        coeff = np.where(base > 0.0, base ** (0.5 * (p - 2.0)), 0.0)
    return coeff * comps


def _qflux_arrays(comps: np.ndarray, q: float, a_vals: np.ndarray) -> np.ndarray:
    s2 = np.sum(comps ** 2, axis=0)
    with np.errstate(divide="ignore"):
        coeff = np.where(s2 > 0.0, a_vals * s2 ** (0.5 * (q - 2.0)), 0.0)
    return coeff * comps


def flux(u: ScalarField, p: float, epsilon: float) -> VectorField:
    """Regularized p-flux (|grad u|^2 + eps^2)^((p-2)/2) grad u per cell."""
    g = gradient(u)
    return VectorField(_flux_arrays(g.components, p, epsilon), u.grid)


def total_flux(u: ScalarField, params: SolveParams, a: WeightField) -> VectorField:
    """p-flux plus the weighted q-flux a |grad u|^(q-2) grad u."""
    g = gradient(u)
    e = params.exponents
    comps = (_flux_arrays(g.components, e.p, params.epsilon)
             + _qflux_arrays(g.components, e.q, a.values))
    return VectorField(comps, u.grid)


def _gradient_vector(u_vals: np.ndarray, params: SolveParams, a: WeightField,
                     load: np.ndarray, grid: GridDomain) -> np.ndarray:
    e = params.exponents
    comps = np.stack([g @ u_vals for g in grid.grad_ops])
    fl = (_flux_arrays(comps, e.p, params.epsilon)
          + _qflux_arrays(comps, e.q, a.values))
    hd = grid.spacing ** grid.dim
    out = np.zeros(grid.n_nodes)
    for d, g in enumerate(grid.grad_ops):
        out += g.T @ fl[d]
    out = hd * out - load
    out[~grid.interior_mask] = 0.0
    return out


def energy_gradient(u: ScalarField, params: SolveParams, a: WeightField,
                    f: ScalarField, grid: GridDomain) -> ScalarField:
    """Nodal field g with g . delta = d/dt E(u + t delta) for Dirichlet
    perturbations delta; zero on boundary and exterior nodes."""
    load = _load_vector(f, grid)
    return ScalarField(_gradient_vector(u.values, params, a, load, grid), grid)


def _hessian(u_vals: np.ndarray, params: SolveParams, a: WeightField,
             grid: GridDomain) -> sp.csc_matrix:
    """Cellwise linearization of the total flux, clipped positive-definite
    (eigenvalue floor) and assembled as h^n G^T B G on interior nodes."""
    e = params.exponents
    eps = params.epsilon
    comps = np.stack([g @ u_vals for g in grid.grad_ops])
    s2 = np.sum(comps ** 2, axis=0)
    base = s2 + eps ** 2
    safe = np.maximum(base, 1e-300)
    c1 = safe ** (0.5 * (e.p - 2.0))
    radial = c1 * (1.0 + (e.p - 2.0) * np.where(base > 0, s2 / safe, 0.0))
    with np.errstate(divide="ignore"):
        qc = np.where(s2 > 0.0, a.values * s2 ** (0.5 * (e.q - 2.0)), 0.0)
    c1 = c1 + qc
    radial = radial + qc * (e.q - 1.0)

    trans = np.maximum(c1, _EIG_FLOOR)
    radial = np.maximum(radial, _EIG_FLOOR)
    with np.errstate(divide="ignore", invalid="ignore"):
        aniso = np.where(s2 > 0.0, (radial - trans) / s2, 0.0)

    hd = grid.spacing ** grid.dim
    n = grid.dim
    blocks = [[None] * n for _ in range(n)]
    for d in range(n):
        for dd in range(n):
            b = aniso * comps[d] * comps[dd]
            if d == dd:
                b = b + trans
            blocks[d][dd] = b
    H = None
    for d in range(n):
        gd = grid.grad_ops[d]
        for dd in range(n):
            term = gd.T @ sp.diags(blocks[d][dd]) @ grid.grad_ops[dd]
            H = term if H is None else H + term
    return (hd * H).tocsc()


def solve_fixed_p(params: SolveParams, a: WeightField, f: ScalarField,
                  grid: GridDomain, init: ScalarField | None = None) -> SolveResult:
    """Damped Newton with Armijo backtracking on the convex energy.

    Converges when the sup-norm of the energy gradient drops below the
    stationarity tolerance; the energy decreases across accepted steps.  On
    max_iter exhaustion the best iterate is returned with converged=False.
    """
    u_vals = project_dirichlet(
        init.values if init is not None else np.zeros(grid.n_nodes), grid)
    load = _load_vector(f, grid)
    idx = grid.interior_idx

    def efun(vals):
        return energy(ScalarField(vals, grid), params, a, f, grid)

    E = efun(u_vals)
    tol = params.tol if params.tol is not None else 1e-9 * (1.0 + abs(E))
    energies = [E]
    g = _gradient_vector(u_vals, params, a, load, grid)
    converged = False
    it = 0
    while it < params.max_iter:
        gsup = float(np.abs(g).max()) if g.size else 0.0
        if gsup <= tol:
            converged = True
            break
        H = _hessian(u_vals, params, a, grid)[np.ix_(idx, idx)]
        try:
            delta_i = spla.splu(H).solve(-g[idx])
        except RuntimeError:
            delta_i = -g[idx]
        descent = float(g[idx] @ delta_i)
        if descent >= 0.0:      # numerically lost PD; steepest descent fallback
            delta_i = -g[idx]
            descent = float(g[idx] @ delta_i)
        step = np.zeros(grid.n_nodes)
        step[idx] = delta_i
        t = 1.0
        E_new = None
        while t >= 2.0 ** -60:
            cand = u_vals + t * step
            E_new = efun(cand)
            if E_new <= E + _ARMIJO * t * descent:
                break
            t *= 0.5
        else:
            break               # line search exhausted below roundoff
        u_vals = u_vals + t * step
        E = E_new
        energies.append(E)
        g = _gradient_vector(u_vals, params, a, load, grid)
        it += 1
    else:
        pass

    gsup = float(np.abs(g).max()) if g.size else 0.0
    converged = converged or gsup <= tol
    u = ScalarField(u_vals, grid)
    res = weak_residual(u, params, a, f, grid)
    return SolveResult(u=u, iterations=it, energy=E, grad_sup=gsup,
                       residual=res, converged=converged,
                       energies=tuple(energies))


def _test_norms(grid: GridDomain) -> np.ndarray:
    """L^2 norms of the nodal basis gradients, ||grad phi_i||."""
    hd = grid.spacing ** grid.dim
    sq = np.zeros(grid.n_nodes)
    for g in grid.grad_ops:
        sq += np.asarray(g.multiply(g).sum(axis=0)).ravel()
    return np.sqrt(hd * sq)


def weak_residual(u: ScalarField, params: SolveParams, a: WeightField,
                  f: ScalarField, grid: GridDomain) -> float:
    """max_i |int((F_p + F_q) . grad phi_i) - int(f phi_i)| / ||grad phi_i||
    over the interior nodal test basis; equals the energy-gradient sup norm
    up to the test-function normalization."""
    load = _load_vector(f, grid)
    g = _gradient_vector(u.values, params, a, load, grid)
    norms = _test_norms(grid)
    idx = grid.interior_idx
    if idx.size == 0:
        return 0.0
    return float(np.max(np.abs(g[idx]) / norms[idx]))
