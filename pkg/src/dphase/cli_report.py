"""Config parsing, run orchestration and deterministic serialization.

Config files are flat UTF-8 ``dotted.key = value`` lines with ``#`` comments.
Unknown keys are errors.  The CLI is::

    dphase <config-path> [--override key=value ...]

Exit codes: 0 certified (or converged for mode=solve), 2 failed certificate
or failed weight check, 3 solver non-convergence, 1 config error.  Identical
config and seed produce byte-identical CSV and JSON outputs; wall time is
printed to stdout only, so it never perturbs the artifacts.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .continuation import (ContinuationConfig, LimitCertificate, StepDiagnostics,
                           default_schedule, run_continuation)
from .grid import GridDomain, ScalarField, build_grid
from .orlicz import ExponentPair, smallness_check
from .solver import SolveParams, solve_fixed_p
from .weights import H0Report, check_H0, make_weight

CSV_HEADER = ("p,lambda_p,weighted_q,flux_l1,flux_l2,flux_l4,flux_l8,"
              "flux_sup,theta0_diff_prev,pairing_ratio,residual,iterations,ratio_ok")

MODES = ("solve", "continue", "check_weight", "sweep")
RHS_PRESETS = ("constant", "gaussian_bump", "checker")

_KEYS = {
    "mode", "domain.dim", "domain.shape", "domain.resolution",
    "weight.preset", "weight.c", "weight.k", "weight.r0",
    "rhs.preset", "rhs.scale", "rhs.sigma", "rhs.blocks",
    "exponents.q", "exponents.p", "exponents.k_max",
    "solver.epsilon0", "solver.tol", "solver.max_iter",
    "output.csv_path", "output.json_path",
    "strict_h0", "seed", "sweep.key", "sweep.values",
}


class ConfigError(ValueError):
    def __init__(self, message: str, key: str = "", line: int = 0):
        super().__init__(message)
        self.key = key
        self.line = line


class MissingKey(ConfigError):
    pass


class BadValue(ConfigError):
    pass


@dataclass(frozen=True)
class RunConfig:
    mode: str
    dim: int
    shape: str
    resolution: int
    weight_preset: str
    weight_c: float
    weight_k: float | None = None
    weight_r0: float | None = None
    rhs_preset: str | None = None
    rhs_scale: float | None = None
    rhs_sigma: float | None = None
    rhs_blocks: int | None = None
    q: float = 1.3
    p: float | None = None
    k_max: int | None = None
    epsilon0: float = 1e-2
    tol: float | None = None
    max_iter: int = 200
    csv_path: str | None = None
    json_path: str | None = None
    strict_h0: bool = False
    seed: int = 0
    sweep_key: str | None = None
    sweep_values: tuple | None = None

    def to_lines(self) -> list:
        """Canonical config-file form; parses back to an equal RunConfig."""
        pairs = [
            ("mode", self.mode),
            ("domain.dim", self.dim),
            ("domain.shape", self.shape),
            ("domain.resolution", self.resolution),
            ("weight.preset", self.weight_preset),
            ("weight.c", self.weight_c),
            ("weight.k", self.weight_k),
            ("weight.r0", self.weight_r0),
            ("rhs.preset", self.rhs_preset),
            ("rhs.scale", self.rhs_scale),
            ("rhs.sigma", self.rhs_sigma),
            ("rhs.blocks", self.rhs_blocks),
            ("exponents.q", self.q),
            ("exponents.p", self.p),
            ("exponents.k_max", self.k_max),
            ("solver.epsilon0", self.epsilon0),
            ("solver.tol", self.tol),
            ("solver.max_iter", self.max_iter),
            ("output.csv_path", self.csv_path),
            ("output.json_path", self.json_path),
            ("strict_h0", self.strict_h0),
            ("seed", self.seed),
            ("sweep.key", self.sweep_key),
            ("sweep.values", ",".join(self.sweep_values) if self.sweep_values else None),
        ]
        out = []
        for key, val in pairs:
            if val is None:
                continue
            if isinstance(val, bool):
                val = "true" if val else "false"
            elif isinstance(val, float):
                val = repr(val)
            out.append(f"{key} = {val}")
        return out


def _raw_entries(text: str):
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise BadValue(f"line {lineno}: expected 'key = value', got {raw!r}",
                           line=lineno)
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in _KEYS:
            raise BadValue(f"line {lineno}: unknown key {key!r}", key=key,
                           line=lineno)
        if key in entries:
            raise BadValue(f"line {lineno}: duplicate key {key!r}", key=key,
                           line=lineno)
        if not val:
            raise BadValue(f"line {lineno}: empty value for {key!r}", key=key,
                           line=lineno)
        entries[key] = (val, lineno)
    return entries


def _typed(entries, key, kind, required=False, default=None, check=None,
           explain=""):
    if key not in entries:
        if required:
            raise MissingKey(f"missing required key {key!r}", key=key)
        return default
    val, lineno = entries[key]
    try:
        if kind is bool:
            if val not in ("true", "false"):
                raise ValueError
            out = val == "true"
        elif kind is int:
            out = int(val)
        elif kind is float:
            out = float(val)
        else:
            out = val
    except ValueError:
        raise BadValue(f"line {lineno}: bad value {val!r} for {key!r}",
                       key=key, line=lineno) from None
    if check is not None and not check(out):
        raise BadValue(f"line {lineno}: {key!r} = {val!r} rejected"
                       + (f" ({explain})" if explain else ""),
                       key=key, line=lineno)
    return out


def parse_config(text: str, overrides: tuple = ()) -> RunConfig:
    """Parse and validate a config; ``overrides`` are extra ``key=value``
    strings applied on top of the file entries."""
    entries = _raw_entries(text)
    for item in overrides:
        if "=" not in item:
            raise BadValue(f"override {item!r} is not key=value")
        key, val = (part.strip() for part in item.split("=", 1))
        if key not in _KEYS:
            raise BadValue(f"override: unknown key {key!r}", key=key)
        entries[key] = (val, 0)

    mode = _typed(entries, "mode", str, required=True,
                  check=lambda m: m in MODES, explain=f"must be one of {MODES}")
    dim = _typed(entries, "domain.dim", int, required=True,
                 check=lambda d: d in (1, 2, 3), explain="dim in {1,2,3}")
    shape = _typed(entries, "domain.shape", str, required=True,
                   check=lambda s: s in ("interval", "square", "disk"))
    resolution = _typed(entries, "domain.resolution", int, required=True,
                        check=lambda r: r >= 4, explain="resolution >= 4")
    if (shape == "disk" and dim != 2) or (shape == "interval" and dim != 1) \
            or (shape == "square" and dim == 1):
        raise BadValue(f"shape {shape!r} incompatible with dim {dim}",
                       key="domain.shape")

    preset = _typed(entries, "weight.preset", str, required=True,
                    check=lambda s: s in ("constant", "parabola", "ring"))
    weight_c = _typed(entries, "weight.c", float, required=True,
                      check=lambda c: c >= 0, explain="c >= 0")
    weight_k = _typed(entries, "weight.k", float,
                      required=(preset == "ring"), check=lambda k: k > 0,
                      explain="k > 0")
    weight_r0 = _typed(entries, "weight.r0", float,
                       required=(preset == "ring"), check=lambda r: r > 0,
                       explain="r0 > 0")

    needs_rhs = mode in ("solve", "continue", "sweep")
    rhs_preset = _typed(entries, "rhs.preset", str, required=needs_rhs,
                        check=lambda s: s in RHS_PRESETS)
    rhs_scale = _typed(entries, "rhs.scale", float, required=needs_rhs)
    rhs_sigma = _typed(entries, "rhs.sigma", float, check=lambda s: s > 0,
                       explain="sigma > 0")
    rhs_blocks = _typed(entries, "rhs.blocks", int, check=lambda b: b >= 1,
                        explain="blocks >= 1")

    q = _typed(entries, "exponents.q", float, required=True,
               check=lambda v: v > 1, explain="q must exceed 1")
    p = _typed(entries, "exponents.p", float, required=(mode == "solve"),
               check=lambda v: v > 1, explain="p must exceed 1")
    k_max = _typed(entries, "exponents.k_max", int,
                   required=(mode in ("continue", "sweep")),
                   check=lambda k: k >= 1, explain="k_max >= 1")

    epsilon0 = _typed(entries, "solver.epsilon0", float, default=1e-2,
                      check=lambda v: v >= 0, explain="epsilon0 >= 0")
    tol = _typed(entries, "solver.tol", float, check=lambda v: v > 0,
                 explain="tol > 0")
    max_iter = _typed(entries, "solver.max_iter", int, default=200,
                      check=lambda v: v >= 1, explain="max_iter >= 1")

    csv_path = _typed(entries, "output.csv_path", str)
    json_path = _typed(entries, "output.json_path", str)
    strict_h0 = _typed(entries, "strict_h0", bool, default=False)
    seed = _typed(entries, "seed", int, default=0)

    sweep_key = _typed(entries, "sweep.key", str, required=(mode == "sweep"),
                       check=lambda k: k in _KEYS and k != "sweep.values",
                       explain="must name a config key")
    sweep_values = None
    if mode == "sweep":
        raw = _typed(entries, "sweep.values", str, required=True)
        sweep_values = tuple(v.strip() for v in raw.split(",") if v.strip())
        if not sweep_values:
            raise BadValue("sweep.values must list at least one value",
                           key="sweep.values")

    return RunConfig(
        mode=mode, dim=dim, shape=shape, resolution=resolution,
        weight_preset=preset, weight_c=weight_c, weight_k=weight_k,
        weight_r0=weight_r0, rhs_preset=rhs_preset, rhs_scale=rhs_scale,
        rhs_sigma=rhs_sigma, rhs_blocks=rhs_blocks, q=q, p=p, k_max=k_max,
        epsilon0=epsilon0, tol=tol, max_iter=max_iter, csv_path=csv_path,
        json_path=json_path, strict_h0=strict_h0, seed=seed,
        sweep_key=sweep_key, sweep_values=sweep_values,
    )


def make_rhs(config: RunConfig, grid: GridDomain) -> ScalarField:
    scale = config.rhs_scale
    x = grid.node_coords
    if config.rhs_preset == "constant":
        vals = np.full(grid.n_nodes, scale)
    elif config.rhs_preset == "gaussian_bump":
        sigma = config.rhs_sigma if config.rhs_sigma else 0.15 * grid.side
        r2 = np.sum((x - grid.center[:, None]) ** 2, axis=0)
        vals = scale * np.exp(-r2 / sigma ** 2)
    else:
        blocks = config.rhs_blocks if config.rhs_blocks else 4
        idx = np.minimum((x * blocks / grid.side).astype(int), blocks - 1)
        vals = scale * np.where(idx.sum(axis=0) % 2 == 0, 1.0, -1.0)
    return ScalarField(vals, grid)


@dataclass(frozen=True)
class RunSummary:
    config: RunConfig
    exit_code: int
    h0: H0Report | None = None
    smallness_lhs: float | None = None
    smallness_pass: bool | None = None
    certificate: LimitCertificate | None = None
    n_steps: int = 0
    solve_converged: bool | None = None
    solve_iterations: int | None = None
    solve_energy: float | None = None
    sweep_exit_codes: tuple | None = None
    wall_time: float = 0.0


def emit_csv(steps: list, path: str) -> None:
    """Write the per-step diagnostics table.

    Header and column set are fixed (13 columns, flux norms at r=1,2,4,8);
    reals use shortest round-trip decimals, ratio_ok is 0/1, one row per
    step in schedule order.
    """
    if not steps:
        raise ValueError("emit_csv requires at least one step")
    lines = [CSV_HEADER]
    for s in steps:
        if sorted(s.flux_lr) != [1, 2, 4, 8]:
            raise ValueError("CSV layout requires flux_r_list = (1, 2, 4, 8)")
        cells = [repr(float(s.p)), repr(float(s.lambda_p)),
                 repr(float(s.weighted_q))]
        cells += [repr(float(s.flux_lr[r])) for r in (1, 2, 4, 8)]
        cells += [repr(float(s.flux_sup)), repr(float(s.theta0_diff_prev)),
                  repr(float(s.pairing_ratio)), repr(float(s.residual)),
                  str(int(s.iterations)), str(int(s.ratio_ok))]
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _summary_dict(summary: RunSummary) -> dict:
    out = {
        "config": summary.config.to_lines(),
        "mode": summary.config.mode,
        "exit_code": summary.exit_code,
        "n_steps": summary.n_steps,
    }
    if summary.h0 is not None:
        out["h0"] = {
            "lipschitz_estimate": summary.h0.lipschitz_estimate,
            "aq_constant": summary.h0.aq_constant,
            "boundary_min": summary.h0.boundary_min,
            "exponent_ratio_ok": summary.h0.exponent_ratio_ok,
            "verdict": summary.h0.verdict,
        }
    if summary.smallness_lhs is not None:
        out["smallness"] = {"lhs": summary.smallness_lhs,
                            "pass": summary.smallness_pass}
    if summary.certificate is not None:
        c = summary.certificate
        out["certificate"] = {
            "flux_sup_final": c.flux_sup_final,
            "pairing_ratio_final": c.pairing_ratio_final,
            "residual_final": c.residual_final,
            "theta0_cauchy": c.theta0_cauchy,
            "smallness_lhs": c.smallness_lhs,
            "verdict": c.verdict,
            "eps_sensitivity": c.eps_sensitivity,
        }
    if summary.solve_converged is not None:
        out["solve"] = {"converged": summary.solve_converged,
                        "iterations": summary.solve_iterations,
                        "energy": summary.solve_energy}
    if summary.sweep_exit_codes is not None:
        out["sweep_exit_codes"] = list(summary.sweep_exit_codes)
    return out


def emit_json(summary: RunSummary, path: str) -> None:
    """Deterministic JSON summary (wall time intentionally excluded)."""
    payload = json.dumps(_summary_dict(summary), sort_keys=True, indent=2,
                         allow_nan=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(payload + "\n")


def _setup(config: RunConfig):
    grid = build_grid(config.dim, config.resolution, config.shape)
    params = {"c": config.weight_c}
    if config.weight_k is not None:
        params["k"] = config.weight_k
    if config.weight_r0 is not None:
        params["r0"] = config.weight_r0
    weight = make_weight(config.weight_preset, params, grid)
    return grid, weight


def _schedule(config: RunConfig) -> tuple:
    return default_schedule(config.k_max)


def _p_min_for_check(config: RunConfig) -> float:
    if config.p is not None:
        return config.p
    if config.k_max is not None:
        return min(_schedule(config))
    return 1.0 + 2.0 ** -10


def run(config: RunConfig) -> RunSummary:
    """Execute the configured mode and write its artifacts.

    Config-level failures (bad weight parameters, strict exponent violations)
    raise ConfigError; everything else is reported through the exit code.
    """
    t0 = time.perf_counter()
    if config.mode == "sweep":
        return _run_sweep(config, t0)

    try:
        grid, weight = _setup(config)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    h0 = check_H0(weight, grid, config.q, grid.dim, _p_min_for_check(config))

    if config.mode == "check_weight":
        code = 0 if h0.verdict in ("pass", "warn") else 2
        summary = RunSummary(config=config, exit_code=code, h0=h0,
                             wall_time=time.perf_counter() - t0)
        if config.json_path:
            emit_json(summary, config.json_path)
        return summary

    f = make_rhs(config, grid)
    small = smallness_check(f, grid, grid.dim)

    if config.mode == "solve":
        params = SolveParams(exponents=ExponentPair(config.p, config.q),
                             epsilon=config.epsilon0 * (config.p - 1.0),
                             tol=config.tol, max_iter=config.max_iter)
        res = solve_fixed_p(params, weight, f, grid)
        code = 0 if res.converged else 3
        summary = RunSummary(config=config, exit_code=code, h0=h0,
                             smallness_lhs=small.lhs, smallness_pass=small.passed,
                             solve_converged=res.converged,
                             solve_iterations=res.iterations,
                             solve_energy=res.energy,
                             wall_time=time.perf_counter() - t0)
        if config.json_path:
            emit_json(summary, config.json_path)
        return summary

    # mode == "continue"
    schedule = _schedule(config)
    if config.strict_h0:
        bad = [p for p in schedule if not config.q / p < 1.0 + 1.0 / grid.dim]
        if bad:
            raise ConfigError(
                "strict (H_0) mode: exponent ratio q/p < 1 + 1/n violated at "
                f"p = {bad} for q = {config.q}, n = {grid.dim}",
                key="strict_h0")
    cc = ContinuationConfig(q=config.q, p_schedule=schedule,
                            epsilon0=config.epsilon0, tol=config.tol,
                            max_iter=config.max_iter)
    try:
        steps, cert, _, _ = run_continuation(cc, weight, f, grid)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    if len(steps) < len(schedule):
        code = 3
    elif cert.verdict == "certified":
        code = 0
    else:
        code = 2
    summary = RunSummary(config=config, exit_code=code, h0=h0,
                         smallness_lhs=small.lhs, smallness_pass=small.passed,
                         certificate=cert, n_steps=len(steps),
                         wall_time=time.perf_counter() - t0)
    if config.csv_path and steps:
        emit_csv(steps, config.csv_path)
    if config.json_path:
        emit_json(summary, config.json_path)
    return summary


def _suffixed(path: str | None, i: int) -> str | None:
    if path is None:
        return None
    root, ext = os.path.splitext(path)
    return f"{root}_{i:03d}{ext}"


def _run_sweep(config: RunConfig, t0: float) -> RunSummary:
    base_lines = [ln for ln in config.to_lines()
                  if not ln.startswith(("mode ", "sweep.", "output."))]
    subconfigs = []
    for i, val in enumerate(config.sweep_values):
        lines = base_lines + [f"mode = continue",
                              f"{config.sweep_key} = {val}"]
        sub = parse_config("\n".join(lines))
        sub = replace(sub, csv_path=_suffixed(config.csv_path, i),
                      json_path=_suffixed(config.json_path, i))
        subconfigs.append(sub)

    env_cap = os.environ.get("DPHASE_THREADS")
    workers = min(len(subconfigs), int(env_cap) if env_cap else (os.cpu_count() or 1))
    workers = max(1, workers)
    if workers == 1:
        results = [run(sub) for sub in subconfigs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, subconfigs))

    codes = tuple(r.exit_code for r in results)
    if any(c == 3 for c in codes):
        code = 3
    elif any(c != 0 for c in codes):
        code = 2
    else:
        code = 0
    summary = RunSummary(config=config, exit_code=code,
                         sweep_exit_codes=codes,
                         wall_time=time.perf_counter() - t0)
    if config.json_path:
        emit_json(summary, config.json_path)
    return summary


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dphase",
        description="Double-phase Dirichlet runs from a flat config file.")
    parser.add_argument("config", help="path to the key = value config file")
    parser.add_argument("--override", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config entry")
    args = parser.parse_args(argv)

    try:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    try:
        config = parse_config(text, overrides=tuple(args.override))
        summary = run(config)
    except ConfigError as exc:
        loc = f" (key {exc.key!r}" + (f", line {exc.line}" if exc.line else "") + ")" \
            if exc.key else ""
        print(f"config error: {exc}{loc}", file=sys.stderr)
        return 1

    print(f"mode: {config.mode}")
    if summary.h0 is not None:
        print(f"weight check: {summary.h0.verdict} "
              f"(aq={summary.h0.aq_constant:.6g}, "
              f"boundary_min={summary.h0.boundary_min:.6g})")
    if summary.smallness_lhs is not None:
        print(f"smallness lhs: {summary.smallness_lhs:.6g} "
              f"({'<' if summary.smallness_pass else '>='} 1)")
    if summary.certificate is not None:
        c = summary.certificate
        print(f"certificate: {c.verdict} (flux_sup={c.flux_sup_final:.6g}, "
              f"pairing={c.pairing_ratio_final:.6g}, "
              f"residual={c.residual_final:.3g}, theta0_cauchy={c.theta0_cauchy})")
    if summary.solve_converged is not None:
        print(f"solve: converged={summary.solve_converged} "
              f"iterations={summary.solve_iterations} "
              f"energy={summary.solve_energy:.9g}")
    if summary.sweep_exit_codes is not None:
        print(f"sweep exit codes: {list(summary.sweep_exit_codes)}")
    print(f"wall time: {summary.wall_time:.3f} s")
    print(f"exit code: {summary.exit_code}")
    return summary.exit_code


if __name__ == "__main__":
    sys.exit(main())
