"""Weight fields a(x): presets, Lipschitz estimate, Muckenhoupt constant,
and the admissibility check used before a continuation run.

The weight selects the two growth phases: the energy density behaves like
|grad u|^p where a vanishes and like a(x)|grad u|^q where it does not.  The
solver requires a to be Lipschitz, positive near the boundary and with a
finite Muckenhoupt-type cube constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import GridDomain

PRESETS = ("constant", "parabola", "ring")


@dataclass(frozen=True)
class WeightField:
    """Cell-valued weight with its analysis metadata."""

    values: np.ndarray          # (n_active,) >= 0
    grid: GridDomain
    lipschitz_estimate: float   # max over adjacent active cell pairs of |da|/h
    boundary_min: float         # min of values on cells touching a boundary node
    preset_name: str

    def __post_init__(self):
        if self.values.shape != (self.grid.n_active,):
            raise ValueError("weight needs one value per active cell")
        if np.any(self.values < 0):
            raise ValueError("weight values must be nonnegative")


@dataclass(frozen=True)
class H0Report:
    """Outcome of the weight/exponent admissibility check."""

    lipschitz_estimate: float
    aq_constant: float
    boundary_min: float
    exponent_ratio_ok: bool
    verdict: str                # pass | warn | fail


def _cell_pairs_max_slope(values: np.ndarray, grid: GridDomain) -> float:
    """Max |a_i - a_j|/h over axis-adjacent pairs of active cells."""
    full = np.full(np.prod(grid.cell_shape), np.nan)
    full[grid.active_cells] = values
    full = full.reshape(grid.cell_shape)
    best = 0.0
    for d in range(grid.dim):
        lo = np.moveaxis(full, d, 0)[:-1]
        hi = np.moveaxis(full, d, 0)[1:]
        diffs = np.abs(hi - lo)
        diffs = diffs[np.isfinite(diffs)]
        if diffs.size:
            best = max(best, float(diffs.max()) / grid.spacing)
    return best


def _boundary_adjacent_cells(grid: GridDomain) -> np.ndarray:
    """Boolean mask (over active cells) of cells with a boundary corner node."""
    touches = grid.avg_op @ grid.boundary_mask.astype(float)
    return touches > 0


def make_weight(preset: str, params: dict, grid: GridDomain,
                require_positive_boundary: bool = True) -> WeightField:
    """Sample a preset weight at the cell centers.

    Presets (all parameters in ``params``):
      constant  a = c
      parabola  a = c * ||x - center||^2
      ring      a = min(c, k * max(0, r - r0)), r the distance from center

    Parameters that would make the weight vanish on the boundary ring of
    cells are rejected unless ``require_positive_boundary`` is False (the
    escape hatch exists so degenerate weights, including a == 0, can still
    be built for pure-p runs and for exercising the failure paths).
    """
    if preset not in PRESETS:
        raise ValueError(f"unknown weight preset {preset!r}")
    x = grid.cell_centers
    c = float(params.get("c", 1.0))
    if preset == "constant":
        vals = np.full(grid.n_active, c)
    elif preset == "parabola":
        vals = c * np.sum((x - grid.center[:, None]) ** 2, axis=0)
    else:
        k = float(params.get("k", 1.0))
        r0 = float(params.get("r0", 0.25 * grid.side))
        if r0 >= grid.inradius and require_positive_boundary:
            raise ValueError("ring r0 must be below the domain inradius")
        r = np.sqrt(np.sum((x - grid.center[:, None]) ** 2, axis=0))
        vals = np.minimum(c, k * np.maximum(0.0, r - r0))

    if np.any(vals < 0):
        raise ValueError("weight parameters produce negative values")
    bmin = float(vals[_boundary_adjacent_cells(grid)].min())
    if require_positive_boundary and bmin <= 0.0:
        raise ValueError("weight vanishes next to the boundary; "
                         "pick parameters with a(x) > 0 there")
    vals.setflags(write=False)
    return WeightField(
        values=vals,
        grid=grid,
        lipschitz_estimate=_cell_pairs_max_slope(vals, grid),
        boundary_min=bmin,
        preset_name=preset,
    )


def zero_weight(grid: GridDomain) -> WeightField:
    """The a == 0 weight (pure p-phase everywhere)."""
    return make_weight("constant", {"c": 0.0}, grid,
                       require_positive_boundary=False)


def _window_products_1d(a: np.ndarray, w: np.ndarray, qm1: float) -> float:
    """Max over all contiguous windows of (avg a) * (avg w)^(q-1).

    O(N^2) via prefix sums, evaluated in extended precision so that constant
    weights come out exactly 1.
    """
    a = a.astype(np.longdouble)
    w = w.astype(np.longdouble)
    pa = np.concatenate([[0.0], np.cumsum(a)])
    pw = np.concatenate([[0.0], np.cumsum(w)])
    n = a.size
    best = np.longdouble(0.0)
    for length in range(1, n + 1):
        counts = np.longdouble(length)
        avg_a = (pa[length:] - pa[:-length]) / counts
        avg_w = (pw[length:] - pw[:-length]) / counts
        prod = avg_a * avg_w ** np.longdouble(qm1)
        m = prod.max()
        if m > best:
            best = m
    return float(best)


def _dyadic_products(a_field: np.ndarray, w_field: np.ndarray, qm1: float,
                     grid: GridDomain) -> float:
    """Max product over the dyadic cube family (sides m, ceil(m/2), ..., 1).

    Cubes intersect the active-cell mask; empty intersections are skipped.
    Edge cubes are clipped when the resolution is not a power of two.
    """
    m = grid.resolution
    shape = grid.cell_shape
    act = grid.active_cells
    a_full = np.zeros(shape).reshape(-1)
    w_full = np.zeros(shape).reshape(-1)
    a_full[act] = a_field
    w_full[act] = w_field
    a_full = a_full.astype(np.longdouble).reshape(shape)
    w_full = w_full.astype(np.longdouble).reshape(shape)
    cnt_full = act.astype(np.longdouble).reshape(shape)

    best = np.longdouble(0.0)
    size = m
    while True:
        bounds = np.arange(0, m, size)

        def block_sum(arr):
            out = arr
            for ax in range(grid.dim):
                out = np.add.reduceat(out, bounds, axis=ax)
            return out.reshape(-1)

        counts = block_sum(cnt_full)
        nz = counts > 0
        if np.any(nz):
            avg_a = block_sum(a_full)[nz] / counts[nz]
            avg_w = block_sum(w_full)[nz] / counts[nz]
            prod = avg_a * avg_w ** np.longdouble(qm1)
            mx = prod.max()
            if mx > best:
                best = mx
        if size == 1:
            break
        size = (size + 1) // 2
    return float(best)


def aq_constant(a: WeightField, q: float, floor_frac: float = 1e-8) -> float:
    """Muckenhoupt-type constant: sup over cubes of
    (avg_Q a) * (avg_Q a^{-1/(q-1)})^{q-1}.

    Cells where a is below ``floor_frac * max(a)`` are floored to that level
    before the singular average is taken; genuinely inadmissible weights show
    up through strong sensitivity to the floor.  In 1d every contiguous cell
    window is a cube, so the supremum is exhaustive there; for dim >= 2 the
    dyadic cube family is used (within a dimensional constant of the full
    supremum, at O(N log N) cost).

    Returns ``inf`` if an average overflows even after flooring.
    """
    if q <= 1:
        raise ValueError("q must exceed 1")
    vals = a.values
    amax = float(vals.max(initial=0.0))
    if amax == 0.0:
        return math.inf
    floored = np.maximum(vals, floor_frac * amax)
    with np.errstate(over="ignore"):
        w = floored ** (-1.0 / (q - 1.0))
    if not np.all(np.isfinite(w)):
        return math.inf
    if a.grid.dim == 1:
        out = _window_products_1d(floored, w, q - 1.0)
    else:
        out = _dyadic_products(floored, w, q - 1.0, a.grid)
    if not math.isfinite(out):
        return math.inf
    # Jensen gives product >= 1 on every cube; enforce the provable bound.
    return max(out, 1.0)


def check_H0(a: WeightField, grid: GridDomain, q: float, n: int,
             p_min: float) -> H0Report:
    """Admissibility check for a continuation down to ``p_min``.

    pass: positive boundary values, finite cube constant, and the exponent
    conditions q/p_min < 1 + 1/n and q < n both hold.  Exponent violations
    downgrade to warn (the discrete problems stay well posed; only the
    continuous embedding argument needs them).  A vanishing boundary weight
    or a non-finite cube constant is a fail.
    """
    if p_min <= 1.0:
        raise ValueError("p_min must exceed 1")
    aq = aq_constant(a, q)
    ratio_ok = (q / p_min < 1.0 + 1.0 / n) and (q < n)
    if a.boundary_min <= 0.0 or not math.isfinite(aq):
        verdict = "fail"
    elif not ratio_ok:
        verdict = "warn"
    else:
        verdict = "pass"
    return H0Report(
        lipschitz_estimate=a.lipschitz_estimate,
        aq_constant=aq,
        boundary_min=a.boundary_min,
        exponent_ratio_ok=ratio_ok,
        verdict=verdict,
    )
