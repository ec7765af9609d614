"""Configuration loading and validation for the experiment harness.

A single YAML file configures everything; every key has a default, so an empty
(or absent) file yields the full default experiment setup.  Unknown keys are
rejected with their full dotted path (no silent typos), and all problems in a
file are reported together.

The default network parameters are the ones used throughout the result tables
(sigma1 = sigma2 = 0.2, rho0 = 0.5 for every bank, n = 6 periphery and m = 2
core banks, alpha = 0.05, 10^4 paths, Delta = 0.1).  The default bubble and
burst values are NOT from any published table; they were tuned once so that
the qualitative risk orderings hold at the default grid, then frozen:

    k=27, mu_bar=0, sigma_bar=2.9394, Lambda=1, M0=1, muM=0, sigmaM=0.1,
    state-dependent volatility, drawdown burst with q=0.04 and beta_star=1.6,
    horizon 1.5.

The bubble is then a mean-reversion-dominated excursion process: the burst
policy arms on a large upward excursion and fires shortly after its peak, so
the delayed attachment weights read the peak during the measurement window.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import yaml

from .bubble import BubbleParams, BurstPolicy, DETERMINISTIC, DRAWDOWN, VOL_CONSTANT, VOL_STATE_DEPENDENT
from .params import ARCTAN, CONSTANT, FitnessFn, NetworkParams, validate_params
from .risk import SCENARIOS

__all__ = [
    "AppConfig",
    "ConfigError",
    "RiskSettings",
    "MeanFieldSettings",
    "GridSettings",
    "ConvergenceSettings",
    "OutputSettings",
    "load_config",
    "config_fingerprint",
    "default_config",
]


class ConfigError(ValueError):
    """Invalid configuration file; message lists every problem found."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class RiskSettings:
    alpha: float = 0.05
    Delta: float = 0.1
    n_paths: int = 10000
    eps_den: float = 1e-8
    exclusion_ceiling: float = 0.2


@dataclass(frozen=True)
class MeanFieldSettings:
    n_tracked: int = 1
    phi_method: str = "quadrature"
    phi_budget: int = 100000


@dataclass(frozen=True)
class GridSettings:
    lambda_values: tuple = (0.5, 1.0, 2.0)
    delta_values: tuple = (0.0, 0.025, 0.05, 0.075, 0.1, 0.2, 0.3)
    scenarios: tuple = ("bubble_finite", "counterfactual_finite", "static_finite")


@dataclass(frozen=True)
class ConvergenceSettings:
    n_values: tuple = (6, 12, 25, 50, 100)
    paths: int = 2000
    horizon: float = 1.0
    tracked_index: int = 0


@dataclass(frozen=True)
class OutputSettings:
    stride: int = 1


@dataclass(frozen=True)
class AppConfig:
    network: NetworkParams = field(default_factory=NetworkParams)
    bubble: BubbleParams = field(default_factory=BubbleParams)
    risk: RiskSettings = field(default_factory=RiskSettings)
    meanfield: MeanFieldSettings = field(default_factory=MeanFieldSettings)
    grid: GridSettings = field(default_factory=GridSettings)
    convergence: ConvergenceSettings = field(default_factory=ConvergenceSettings)
    output: OutputSettings = field(default_factory=OutputSettings)
    seed: int = 20240801

    def to_canonical_dict(self) -> dict:
        n = self.network
        b = self.bubble
        return {
            "seed": self.seed,
            "network": {
                "n": n.n, "m": n.m, "lambda": n.lam, "sigma1": n.sigma1, "sigma2": n.sigma2,
                "delta": n.delta, "rho0": n.rho0,
                "rho0_core": list(n.rho0_core) if isinstance(n.rho0_core, tuple) else n.rho0_core,
                "dt": n.dt, "horizon": n.horizon,
            },
            "fitness": {
                "periphery": {"kind": n.f_P.kind, "level": n.f_P.level},
                "core": {"kind": n.f_B.kind, "level": n.f_B.level},
            },
            "bubble": {
                "k": b.k, "mu_bar": b.mu_bar, "sigma_bar": b.sigma_bar, "Lambda": b.Lambda,
                "sigmaB": b.sigmaB, "vol_mode": b.vol_mode, "M0": b.M0, "muM": b.muM,
                "sigmaM": b.sigmaM,
            },
            "burst": {
                "kind": b.burst.kind, "t": b.burst.t_burst, "q": b.burst.q,
                "beta_star": b.burst.beta_star,
            },
            "risk": {
                "alpha": self.risk.alpha, "Delta": self.risk.Delta, "n_paths": self.risk.n_paths,
                "eps_den": self.risk.eps_den, "exclusion_ceiling": self.risk.exclusion_ceiling,
            },
            "meanfield": {
                "n_tracked": self.meanfield.n_tracked, "phi_method": self.meanfield.phi_method,
                "phi_budget": self.meanfield.phi_budget,
            },
            "grid": {
                "lambda_values": list(self.grid.lambda_values),
                "delta_values": list(self.grid.delta_values),
                "scenarios": list(self.grid.scenarios),
            },
            "convergence": {
                "n_values": list(self.convergence.n_values), "paths": self.convergence.paths,
                "horizon": self.convergence.horizon, "tracked_index": self.convergence.tracked_index,
            },
            "output": {"stride": self.output.stride},
        }


def config_fingerprint(cfg: AppConfig) -> str:
    payload = json.dumps(cfg.to_canonical_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def default_config() -> AppConfig:
    cfg = AppConfig(
        network=NetworkParams(horizon=1.5),
        bubble=BubbleParams(
            k=27.0, mu_bar=0.0, sigma_bar=2.9394, Lambda=1.0, sigmaB=0.2,
            vol_mode=VOL_STATE_DEPENDENT, M0=1.0, muM=0.0, sigmaM=0.1,
            burst=BurstPolicy.drawdown(q=0.04, beta_star=1.6),
        ),
    )
    validate_params(cfg.network)
    return cfg


class _Walker:
    """Strict dict walker: tracks the key path, collects all problems."""

    def __init__(self, raw: dict):
        self.raw = raw
        self.problems: list[str] = []

    def section(self, data, name, allowed):
        if data is None:
            return {}
        if not isinstance(data, dict):
            self.problems.append(f"{name} must be a mapping")
            return {}
        for key in data:
            if key not in allowed:
                self.problems.append(f"unknown key {name}.{key}" if name else f"unknown key {key}")
        return data

    def number(self, data, name, key, default, kind=float):
        val = data.get(key, default)
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            self.problems.append(f"{name}.{key} must be a number, got {val!r}")
            return default
        if kind is int:
            if isinstance(val, float) and not val.is_integer():
                self.problems.append(f"{name}.{key} must be an integer, got {val!r}")
                return default
            return int(val)
        return float(val)

    def choice(self, data, name, key, default, options):
        val = data.get(key, default)
        if val not in options:
            self.problems.append(f"{name}.{key} must be one of {sorted(options)}, got {val!r}")
            return default
        return val

    def numbers(self, data, name, key, default, kind=float):
        val = data.get(key, None)
        if val is None:
            return tuple(default)
        if not isinstance(val, (list, tuple)) or not val:
            self.problems.append(f"{name}.{key} must be a non-empty list of numbers")
            return tuple(default)
        out = []
        for v in val:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                self.problems.append(f"{name}.{key} entries must be numbers, got {v!r}")
                return tuple(default)
            out.append(kind(v))
        return tuple(out)


def _parse_fitness(w: _Walker, data, name) -> FitnessFn:
    data = w.section(data, name, {"kind", "level"})
    kind = w.choice(data, name, "kind", ARCTAN, {ARCTAN, CONSTANT})
    level = w.number(data, name, "level", 1.0)
    if kind == CONSTANT and level < 0:
        w.problems.append(f"{name}.level must be >= 0 for constant fitness")
        level = 1.0
    return FitnessFn(kind, level)


def load_config(path: str | None = None) -> AppConfig:
    """Parse and validate a YAML config file; missing file sections fall back to defaults."""
    raw = {}
    if path is not None:
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ConfigError(["config root must be a mapping"])
    base = default_config()
    w = _Walker(raw)
    w.section(raw, "", {"seed", "network", "fitness", "bubble", "burst", "risk",
                        "meanfield", "grid", "convergence", "output"})

    seed = w.number(raw, "", "seed", base.seed, int)

    net = w.section(raw.get("network"), "network",
                    {"n", "m", "lambda", "sigma1", "sigma2", "delta", "rho0", "rho0_core",
                     "dt", "horizon"})
    fit = w.section(raw.get("fitness"), "fitness", {"periphery", "core"})
    f_P = _parse_fitness(w, fit.get("periphery"), "fitness.periphery")
    f_B = _parse_fitness(w, fit.get("core"), "fitness.core")
    rho0_core = net.get("rho0_core", base.network.rho0_core)
    if isinstance(rho0_core, list):
        rho0_core = tuple(float(v) for v in rho0_core)
    network = NetworkParams(
        n=w.number(net, "network", "n", base.network.n, int),
        m=w.number(net, "network", "m", base.network.m, int),
        lam=w.number(net, "network", "lambda", base.network.lam),
        sigma1=w.number(net, "network", "sigma1", base.network.sigma1),
        sigma2=w.number(net, "network", "sigma2", base.network.sigma2),
        delta=w.number(net, "network", "delta", base.network.delta),
        rho0=w.number(net, "network", "rho0", base.network.rho0),
        rho0_core=rho0_core,
        f_P=f_P,
        f_B=f_B,
        dt=w.number(net, "network", "dt", base.network.dt),
        horizon=w.number(net, "network", "horizon", base.network.horizon),
    )

    bub = w.section(raw.get("bubble"), "bubble",
                    {"k", "mu_bar", "sigma_bar", "Lambda", "sigmaB", "vol_mode", "M0",
                     "muM", "sigmaM"})
    burst_raw = w.section(raw.get("burst"), "burst", {"kind", "t", "q", "beta_star"})
    burst = BurstPolicy(
        kind=w.choice(burst_raw, "burst", "kind", base.bubble.burst.kind, {DETERMINISTIC, DRAWDOWN}),
        t_burst=w.number(burst_raw, "burst", "t", base.bubble.burst.t_burst),
        q=w.number(burst_raw, "burst", "q", base.bubble.burst.q),
        beta_star=w.number(burst_raw, "burst", "beta_star", base.bubble.burst.beta_star),
    )
    bubble = BubbleParams(
        k=w.number(bub, "bubble", "k", base.bubble.k),
        mu_bar=w.number(bub, "bubble", "mu_bar", base.bubble.mu_bar),
        sigma_bar=w.number(bub, "bubble", "sigma_bar", base.bubble.sigma_bar),
        Lambda=w.number(bub, "bubble", "Lambda", base.bubble.Lambda),
        sigmaB=w.number(bub, "bubble", "sigmaB", base.bubble.sigmaB),
        vol_mode=w.choice(bub, "bubble", "vol_mode", base.bubble.vol_mode,
                          {VOL_CONSTANT, VOL_STATE_DEPENDENT}),
        M0=w.number(bub, "bubble", "M0", base.bubble.M0),
        muM=w.number(bub, "bubble", "muM", base.bubble.muM),
        sigmaM=w.number(bub, "bubble", "sigmaM", base.bubble.sigmaM),
        burst=burst,
    )

    rk = w.section(raw.get("risk"), "risk",
                   {"alpha", "Delta", "n_paths", "eps_den", "exclusion_ceiling"})
    risk = RiskSettings(
        alpha=w.number(rk, "risk", "alpha", base.risk.alpha),
        Delta=w.number(rk, "risk", "Delta", base.risk.Delta),
        n_paths=w.number(rk, "risk", "n_paths", base.risk.n_paths, int),
        eps_den=w.number(rk, "risk", "eps_den", base.risk.eps_den),
        exclusion_ceiling=w.number(rk, "risk", "exclusion_ceiling", base.risk.exclusion_ceiling),
    )
    if not 0 < risk.alpha < 1:
        w.problems.append(f"risk.alpha must be in (0, 1), got {risk.alpha}")

    mf = w.section(raw.get("meanfield"), "meanfield", {"n_tracked", "phi_method", "phi_budget"})
    meanfield = MeanFieldSettings(
        n_tracked=w.number(mf, "meanfield", "n_tracked", base.meanfield.n_tracked, int),
        phi_method=w.choice(mf, "meanfield", "phi_method", base.meanfield.phi_method,
                            {"quadrature", "monte_carlo"}),
        phi_budget=w.number(mf, "meanfield", "phi_budget", base.meanfield.phi_budget, int),
    )

    gr = w.section(raw.get("grid"), "grid", {"lambda_values", "delta_values", "scenarios"})
    scenarios = gr.get("scenarios", list(base.grid.scenarios))
    if not isinstance(scenarios, (list, tuple)) or not scenarios:
        w.problems.append("grid.scenarios must be a non-empty list")
        scenarios = list(base.grid.scenarios)
    for s in scenarios:
        if s not in SCENARIOS:
            w.problems.append(f"grid.scenarios entry {s!r} not one of {list(SCENARIOS)}")
    grid = GridSettings(
        lambda_values=w.numbers(gr, "grid", "lambda_values", base.grid.lambda_values),
        delta_values=w.numbers(gr, "grid", "delta_values", base.grid.delta_values),
        scenarios=tuple(scenarios),
    )

    cv = w.section(raw.get("convergence"), "convergence",
                   {"n_values", "paths", "horizon", "tracked_index"})
    convergence = ConvergenceSettings(
        n_values=w.numbers(cv, "convergence", "n_values", base.convergence.n_values, int),
        paths=w.number(cv, "convergence", "paths", base.convergence.paths, int),
        horizon=w.number(cv, "convergence", "horizon", base.convergence.horizon),
        tracked_index=w.number(cv, "convergence", "tracked_index",
                               base.convergence.tracked_index, int),
    )

    out = w.section(raw.get("output"), "output", {"stride"})
    output = OutputSettings(stride=w.number(out, "output", "stride", base.output.stride, int))
    if output.stride < 1:
        w.problems.append(f"output.stride must be >= 1, got {output.stride}")

    if w.problems:
        raise ConfigError(w.problems)

    cfg = AppConfig(network=network, bubble=bubble, risk=risk, meanfield=meanfield,
                    grid=grid, convergence=convergence, output=output, seed=seed)
    try:
        validate_params(cfg.network)
    except Exception as e:
        raise ConfigError([str(e)]) from e
    for d in cfg.grid.delta_values:
        ratio = d / cfg.network.dt if cfg.network.dt else float("nan")
        if d > 0 and (not math.isfinite(ratio) or abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio)):
            raise ConfigError([f"grid.delta_values entry {d} is not a multiple of network.dt={cfg.network.dt}"])
    return cfg
