"""Command-line harness: single-path simulations, the risk-table battery,
the convergence study, kernel tables, and config validation.

Exit codes: 0 success, 1 configuration error, 2 runtime or numerical error.
"""

from __future__ import annotations

import sys
from dataclasses import replace

import click

from . import rng as rng_mod
from .config import AppConfig, ConfigError, config_fingerprint, load_config
from .experiments import (
    ConvergenceSpec,
    ExperimentGrid,
    convergence_csv,
    reports_json,
    risk_table_csv,
    run_convergence,
    run_risk_table,
    write_atomic,
)
from .finite_net import simulate_finite
from .meanfield import OUSpec, build_phi_table, simulate_meanfield
from .risk import relative_shock, DegenerateDenominatorError

SIM_KEY = 100  # seed-derivation slot for ad hoc single-path simulations


def _fmt(x) -> str:
    return repr(float(x))


def _load(config_path, seed):
    cfg = load_config(config_path)
    if seed is not None:
        cfg = replace(cfg, seed=int(seed))
    return cfg


def _provenance(cfg: AppConfig) -> list[str]:
    return [f"# config_fingerprint: {config_fingerprint(cfg)}", f"# seed: {cfg.seed}"]


def _finite_trajectory_csv(cfg, history) -> str:
    n, m = cfg.network.n, cfg.network.m
    lines = _provenance(cfg)
    header = (["t"] + [f"rho_p_{i+1}" for i in range(n)] + [f"rho_c_{k+1}" for k in range(m)]
              + ["A", "beta", "mu", "M"])
    lines.append(",".join(header))
    for i, t in enumerate(history.t):
        row = [_fmt(t)]
        row += [_fmt(v) for v in history.rho_periphery[i]]
        row += [_fmt(v) for v in history.rho_core[i]]
        row += [_fmt(history.A[i]), _fmt(history.beta[i]), _fmt(history.mu[i]), _fmt(history.M[i])]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def _mf_trajectory_csv(cfg, path, n_tracked) -> str:
    m = cfg.network.m
    lines = _provenance(cfg)
    header = (["t", "nu"] + [f"rho_bar_core_{k+1}" for k in range(m)]
              + [f"rho_tilde_{i+1}" for i in range(n_tracked)]
              + [f"rho_bar_{i+1}" for i in range(n_tracked)]
              + ["beta", "mu", "M"])
    lines.append(",".join(header))
    for i, t in enumerate(path.t):
        row = [_fmt(t), _fmt(path.nu[i])]
        row += [_fmt(v) for v in path.rho_core_bar[i]]
        row += [_fmt(v) for v in path.rho_tilde[i]]
        row += [_fmt(v) for v in path.rho_bar[i]]
        row += [_fmt(path.beta[i]), _fmt(path.mu[i]), _fmt(path.M[i])]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def _summaries_csv(cfg, summaries) -> str:
    lines = _provenance(cfg)
    lines.append("path,tau,rho_at_tau,rho_after_window,beta_at_tau,loss")
    for s in summaries:
        lines.append(",".join([
            str(s["path"]),
            "" if s["tau"] is None else _fmt(s["tau"]),
            "" if s["rho_tau"] is None else _fmt(s["rho_tau"]),
            "" if s["rho_after"] is None else _fmt(s["rho_after"]),
            "" if s["beta_tau"] is None else _fmt(s["beta_tau"]),
            "" if s["loss"] is None else _fmt(s["loss"]),
        ]))
    return "\n".join(lines) + "\n"


def _path_summary(cfg, path_id, history, monitored_series):
    Delta = cfg.risk.Delta
    rec = {"path": path_id, "tau": history.tau, "rho_tau": None, "rho_after": None,
           "beta_tau": None, "loss": None}
    if history.tau is None:
        return rec
    i0 = int(round(history.tau / cfg.network.dt))
    i1 = i0 + int(round(Delta / cfg.network.dt))
    rec["rho_tau"] = float(monitored_series[i0])
    rec["beta_tau"] = float(history.beta[i0])
    if i1 < len(monitored_series):
        rec["rho_after"] = float(monitored_series[i1])
        try:
            rec["loss"] = relative_shock(history, 0, history.tau, Delta, cfg.risk.eps_den).loss
        except DegenerateDenominatorError:
            rec["loss"] = None
    return rec


@click.group()
def main():
    """Core-periphery bubble contagion simulator."""


config_opt = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                          default=None, help="YAML config file (defaults used when omitted).")
seed_opt = click.option("--seed", type=int, default=None, help="Master seed override.")
out_opt = click.option("--out", "out_dir", type=click.Path(file_okay=False), default="out",
                       show_default=True, help="Output directory.")
workers_opt = click.option("--workers", type=int, default=1, show_default=True,
                           help="Worker processes (results are worker-count independent).")
paths_opt = click.option("--paths", "n_paths", type=int, default=None,
                         help="Monte Carlo path count override.")
format_opt = click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv",
                          show_default=True)


def _run_guarded(fn):
    try:
        fn()
    except ConfigError as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(1)
    except click.ClickException:
        raise
    except Exception as e:
        click.echo(f"error: {type(e).__name__}: {e}", err=True)
        sys.exit(2)
    sys.exit(0)


@main.command("simulate-finite")
@config_opt
@seed_opt
@out_opt
@paths_opt
@click.option("--scenario", type=click.Choice(["bubble", "counterfactual", "no_core_shock"]),
              default="bubble", show_default=True)
@click.option("--trajectories", is_flag=True, help="Also write full per-path trajectory CSVs.")
def simulate_finite_cmd(config_path, seed, out_dir, n_paths, scenario, trajectories):
    """Simulate finite-system paths; write per-path summaries (and trajectories)."""

    def run():
        cfg = _load(config_path, seed)
        count = n_paths if n_paths is not None else 1
        summaries = []
        for pid in range(count):
            drivers = rng_mod.driver_block(cfg.seed, (SIM_KEY, 0, 0), pid,
                                           cfg.network.n_steps, cfg.network.n_streams,
                                           cfg.network.dt)
            history = simulate_finite(cfg.network, cfg.bubble, drivers, scenario,
                                      stride=1, eps_den=cfg.risk.eps_den)
            summaries.append(_path_summary(cfg, pid, history, history.rho_periphery[:, 0]))
            if trajectories:
                out = history if cfg.output.stride == 1 else simulate_finite(
                    cfg.network, cfg.bubble, drivers, scenario,
                    stride=cfg.output.stride, eps_den=cfg.risk.eps_den)
                write_atomic(f"{out_dir}/finite_path_{pid}.csv", _finite_trajectory_csv(cfg, out))
        write_atomic(f"{out_dir}/finite_summaries.csv", _summaries_csv(cfg, summaries))
        click.echo(f"wrote {out_dir}/finite_summaries.csv ({count} paths)")

    _run_guarded(run)


@main.command("simulate-meanfield")
@config_opt
@seed_opt
@out_opt
@paths_opt
@click.option("--scenario", type=click.Choice(["bubble", "counterfactual", "no_core_shock"]),
              default="bubble", show_default=True)
@click.option("--trajectories", is_flag=True, help="Also write full per-path trajectory CSVs.")
def simulate_meanfield_cmd(config_path, seed, out_dir, n_paths, scenario, trajectories):
    """Simulate limit-system paths; write per-path summaries (and trajectories)."""

    def run():
        cfg = _load(config_path, seed)
        count = n_paths if n_paths is not None else 1
        net = cfg.network
        spec = OUSpec(lam=net.lam, sigma1=net.sigma1, rho0=net.rho0)
        phi_rng = rng_mod.path_generator(cfg.seed, (SIM_KEY, 1, 0), 2**31)
        table = build_phi_table(spec, net.f_P, net.dt, net.n_steps, net.delta,
                                method=cfg.meanfield.phi_method,
                                budget=cfg.meanfield.phi_budget, rng=phi_rng)
        summaries = []
        for pid in range(count):
            drivers = rng_mod.driver_block(cfg.seed, (SIM_KEY, 1, 0), pid,
                                           net.n_steps, net.n_streams, net.dt)
            path = simulate_meanfield(net, cfg.bubble, table, drivers,
                                      n_tracked=cfg.meanfield.n_tracked,
                                      scenario=scenario, eps_den=cfg.risk.eps_den)
            summaries.append(_path_summary(cfg, pid, path, path.rho_bar[:, 0]))
            if trajectories:
                write_atomic(f"{out_dir}/meanfield_path_{pid}.csv",
                             _mf_trajectory_csv(cfg, path, cfg.meanfield.n_tracked))
        write_atomic(f"{out_dir}/meanfield_summaries.csv", _summaries_csv(cfg, summaries))
        click.echo(f"wrote {out_dir}/meanfield_summaries.csv ({count} paths)")

    _run_guarded(run)


@main.command("risk-table")
@config_opt
@seed_opt
@out_opt
@workers_opt
@paths_opt
@format_opt
def risk_table_cmd(config_path, seed, out_dir, workers, n_paths, fmt):
    """Run the (lambda, delta, scenario) battery and write the risk table."""

    def run():
        cfg = _load(config_path, seed)
        grid = ExperimentGrid.from_config(cfg, n_paths=n_paths)
        result = run_risk_table(grid, workers=workers)
        if fmt == "csv":
            write_atomic(f"{out_dir}/risk_table.csv", risk_table_csv(result))
            click.echo(f"wrote {out_dir}/risk_table.csv")
        else:
            write_atomic(f"{out_dir}/risk_table.json", reports_json(result))
            click.echo(f"wrote {out_dir}/risk_table.json")

    _run_guarded(run)


@main.command("convergence")
@config_opt
@seed_opt
@out_opt
@workers_opt
@paths_opt
def convergence_cmd(config_path, seed, out_dir, workers, n_paths):
    """Finite-vs-limit distance across system sizes, on common drivers."""

    def run():
        cfg = _load(config_path, seed)
        spec = ConvergenceSpec.from_config(cfg, paths=n_paths)
        rows = run_convergence(spec, workers=workers)
        write_atomic(f"{out_dir}/convergence.csv", convergence_csv(rows, spec))
        click.echo(f"wrote {out_dir}/convergence.csv")

    _run_guarded(run)


@main.command("phi-table")
@config_opt
@seed_opt
@out_opt
def phi_table_cmd(config_path, seed, out_dir):
    """Write the interaction kernel on the simulation grid (columns t, phi)."""

    def run():
        cfg = _load(config_path, seed)
        net = cfg.network
        spec = OUSpec(lam=net.lam, sigma1=net.sigma1, rho0=net.rho0)
        phi_rng = rng_mod.path_generator(cfg.seed, (SIM_KEY, 2, 0), 2**31)
        table = build_phi_table(spec, net.f_P, net.dt, net.n_steps, net.delta,
                                method=cfg.meanfield.phi_method,
                                budget=cfg.meanfield.phi_budget, rng=phi_rng)
        lines = _provenance(cfg) + ["t,phi"]
        for s, value in enumerate(table.values):
            lines.append(f"{_fmt(s * net.dt)},{_fmt(value)}")
        write_atomic(f"{out_dir}/phi_table.csv", "\n".join(lines) + "\n")
        click.echo(f"wrote {out_dir}/phi_table.csv")

    _run_guarded(run)


@main.command("validate-config")
@config_opt
def validate_config_cmd(config_path):
    """Parse and validate a config file; print its fingerprint."""

    def run():
        cfg = load_config(config_path)
        click.echo(f"config ok; fingerprint {config_fingerprint(cfg)}")

    _run_guarded(run)


if __name__ == "__main__":
    main()
