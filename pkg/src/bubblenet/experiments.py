"""Experiment harness: the risk-table battery over (lambda, delta, scenario) cells,
and the finite-vs-limit convergence study on common driver streams.

Cells are independent tasks; with ``workers > 1`` they are farmed to a process
pool and merged in a fixed order, so outputs are identical for any worker
count.  Each cell derives its seeds from (master seed, scenario index,
lambda index, delta index, path index), which keeps every Monte Carlo path's
stream unique across the whole grid.

The convergence study pairs each finite system size n with the limit system on
the SAME driver realizations.  Per-path blocks are laid out at the width of the
largest n, with the core and auxiliary columns at fixed positions, so the
drivers are also shared across n: level-to-level differences of the distance
estimate are then driven by the systematic effect of n rather than by fresh
Monte Carlo noise.
"""

from __future__ import annotations

import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import rng as rng_mod
from .config import AppConfig, config_fingerprint
from .finite_net import simulate_finite_batch
from .meanfield import OUSpec, build_phi_table, simulate_meanfield_batch
from .params import NetworkParams, validate_params
from .risk import SCENARIOS, RiskReport, run_scenario

__all__ = [
    "ExperimentGrid",
    "ConvergenceSpec",
    "TableResult",
    "run_risk_table",
    "risk_table_csv",
    "reports_json",
    "run_convergence",
    "convergence_csv",
    "write_atomic",
]

CONVERGENCE_KEY = 101  # scenario slot for convergence-study seed derivation


@dataclass(frozen=True)
class ExperimentGrid:
    """One (lambda, delta, scenario) battery sharing a base config and master seed."""

    lambda_values: tuple
    delta_values: tuple
    scenarios: tuple
    cfg: AppConfig
    n_paths: int
    seed: int

    @staticmethod
    def from_config(cfg: AppConfig, n_paths: int | None = None, seed: int | None = None) -> "ExperimentGrid":
        return ExperimentGrid(
            lambda_values=cfg.grid.lambda_values,
            delta_values=cfg.grid.delta_values,
            scenarios=cfg.grid.scenarios,
            cfg=cfg,
            n_paths=n_paths if n_paths is not None else cfg.risk.n_paths,
            seed=seed if seed is not None else cfg.seed,
        )


@dataclass(frozen=True)
class ConvergenceSpec:
    """Paired finite/limit runs across periphery sizes, m fixed."""

    n_values: tuple
    paths: int
    horizon: float
    tracked_index: int
    cfg: AppConfig
    seed: int

    @staticmethod
    def from_config(cfg: AppConfig, paths: int | None = None, seed: int | None = None) -> "ConvergenceSpec":
        return ConvergenceSpec(
            n_values=cfg.convergence.n_values,
            paths=paths if paths is not None else cfg.convergence.paths,
            horizon=cfg.convergence.horizon,
            tracked_index=cfg.convergence.tracked_index,
            cfg=cfg,
            seed=seed if seed is not None else cfg.seed,
        )


@dataclass
class TableResult:
    grid: ExperimentGrid
    reports: dict  # (scenario, lambda_idx, delta_idx or None) -> RiskReport
    fingerprint: str


def _cell_list(grid: ExperimentGrid):
    cells = []
    for scenario in grid.scenarios:
        si = SCENARIOS.index(scenario)
        static = scenario.startswith("static")
        for li, lam in enumerate(grid.lambda_values):
            if static:
                cells.append((scenario, si, li, lam, None, 0.0))
            else:
                for di, delta in enumerate(grid.delta_values):
                    cells.append((scenario, si, li, lam, di, delta))
    return cells


def _run_cell(args):
    (scenario, si, li, lam, di, delta, cfg, n_paths, seed, fingerprint) = args
    p = replace(cfg.network, lam=lam, delta=delta)
    report = run_scenario(
        scenario, p, cfg.bubble, n_paths, cfg.risk.alpha, cfg.risk.Delta, seed,
        eps_den=cfg.risk.eps_den,
        exclusion_ceiling=cfg.risk.exclusion_ceiling,
        cell_key=(si, li, di if di is not None else 0),
        phi_method=cfg.meanfield.phi_method,
        phi_budget=cfg.meanfield.phi_budget,
        n_tracked=cfg.meanfield.n_tracked,
        config_fingerprint=fingerprint,
    )
    return (scenario, li, di), report


def run_risk_table(grid: ExperimentGrid, workers: int = 1) -> TableResult:
    """Run every cell of the grid; cells failing their exclusion ceiling abort the table."""
    validate_params(grid.cfg.network)
    fingerprint = config_fingerprint(grid.cfg)
    cells = _cell_list(grid)
    tasks = [(sc, si, li, lam, di, d, grid.cfg, grid.n_paths, grid.seed, fingerprint)
             for (sc, si, li, lam, di, d) in cells]
    reports = {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for key, rep in pool.map(_run_cell, tasks):
                reports[key] = rep
    else:
        for task in tasks:
            key, rep = _run_cell(task)
            reports[key] = rep
    return TableResult(grid=grid, reports=reports, fingerprint=fingerprint)


def _fmt(x: float) -> str:
    return repr(float(x))


def risk_table_csv(result: TableResult) -> str:
    """Wide CSV: one row per (scenario, lambda), one column per delta; static
    scenarios fill a single dedicated column."""
    grid = result.grid
    lines = [
        f"# config_fingerprint: {result.fingerprint}",
        f"# seed: {grid.seed}",
        f"# N_s: {grid.n_paths}  alpha: {grid.cfg.risk.alpha}  Delta: {grid.cfg.risk.Delta}",
    ]
    header = ["scenario", "lambda"] + [f"delta={d:g}" for d in grid.delta_values] + ["static"]
    lines.append(",".join(header))
    for scenario in grid.scenarios:
        static = scenario.startswith("static")
        for li, lam in enumerate(grid.lambda_values):
            row = [scenario, f"{lam:g}"]
            if static:
                row += [""] * len(grid.delta_values)
                row.append(_fmt(result.reports[(scenario, li, None)].risk))
            else:
                row += [_fmt(result.reports[(scenario, li, di)].risk)
                        for di in range(len(grid.delta_values))]
                row.append("")
            lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def reports_json(result: TableResult) -> str:
    import json

    payload = {
        "config_fingerprint": result.fingerprint,
        "seed": result.grid.seed,
        "cells": [
            {"lambda_index": li, "delta_index": di, **rep.to_json_dict()}
            for (scenario, li, di), rep in sorted(
                result.reports.items(), key=lambda kv: (kv[0][0], kv[0][1], -1 if kv[0][2] is None else kv[0][2])
            )
        ],
    }
    return json.dumps(payload, indent=2, sort_keys=True)


def _conv_chunk(args):
    (cfg, spec, n, first_path, count, phi_values) = args
    from .meanfield import PhiTable

    base = cfg.network
    m = base.m
    n_max = max(spec.n_values)
    width = n_max + m + 3
    steps = int(round(spec.horizon / base.dt))
    blocks = np.empty((steps, count, width))
    rng_mod.fill_driver_blocks(blocks, spec.seed, (CONVERGENCE_KEY, 0, 0), first_path, base.dt)

    p_n = replace(base, n=n, horizon=spec.horizon)
    view = np.concatenate([blocks[:, :, :n], blocks[:, :, n_max:]], axis=2)
    fin = simulate_finite_batch(p_n, cfg.bubble, view, "bubble")
    table = PhiTable(values=phi_values, method="quadrature", dt=base.dt, delta=base.delta)
    mf = simulate_meanfield_batch(p_n, cfg.bubble, table, view, n_tracked=1, scenario="bubble")

    d_per = np.abs(fin["rho1"] - mf["rho_bar1"]).max(axis=0)
    d_core = np.abs(fin["rho_core1"] - mf["rho_core1"]).max(axis=0)
    return n, first_path, d_per.sum(), d_core.sum(), count


def run_convergence(spec: ConvergenceSpec, workers: int = 1, chunk_paths: int = 250):
    """Estimate E[sup |finite - limit|] for the monitored periphery and core banks.

    Returns one row per n: (n, periphery distance, core distance, total).
    """
    cfg = spec.cfg
    validate_params(cfg.network)
    spec_steps = int(round(spec.horizon / cfg.network.dt))
    if abs(spec.horizon / cfg.network.dt - spec_steps) > 1e-9:
        raise ValueError(f"convergence horizon {spec.horizon} not a multiple of dt {cfg.network.dt}")
    spec_p = replace(cfg.network, horizon=spec.horizon)
    phi = build_phi_table(
        OUSpec(lam=spec_p.lam, sigma1=spec_p.sigma1, rho0=spec_p.rho0),
        spec_p.f_P, spec_p.dt, spec_steps, spec_p.delta,
        method="quadrature",
    )
    tasks = []
    for n in spec.n_values:
        for start in range(0, spec.paths, chunk_paths):
            count = min(chunk_paths, spec.paths - start)
            tasks.append((cfg, spec, int(n), start, count, phi.values))
    acc = {int(n): [0.0, 0.0, 0] for n in spec.n_values}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_conv_chunk, tasks))
    else:
        results = [_conv_chunk(t) for t in tasks]
    for n, _start, d_per, d_core, count in results:
        acc[n][0] += d_per
        acc[n][1] += d_core
        acc[n][2] += count
    rows = []
    for n in spec.n_values:
        d_per, d_core, total = acc[int(n)]
        rows.append((int(n), d_per / total, d_core / total, (d_per + d_core) / total))
    return rows


def convergence_csv(rows, spec: ConvergenceSpec) -> str:
    lines = [
        f"# config_fingerprint: {config_fingerprint(spec.cfg)}",
        f"# seed: {spec.seed}",
        f"# paths: {spec.paths}  horizon: {spec.horizon}",
        "n,periphery_distance,core_distance,total",
    ]
    for n, d_per, d_core, total in rows:
        lines.append(f"{n},{_fmt(d_per)},{_fmt(d_core)},{_fmt(total)}")
    return "\n".join(lines) + "\n"


def write_atomic(path: str, content: str) -> None:
    """Write via a temp file and rename, so partially written outputs never appear."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(content)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
