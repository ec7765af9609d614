"""Burst-risk measure: tail quantile of the monitored bank's relative robustness change.

For each path k the loss is (rho_{tau_k+Delta} - rho_{tau_k}) / rho_{tau_k} of
the monitored bank (periphery bank 1 in the finite system, the assembled limit
rho_bar^1 in the mean-field system).  The risk value is

    -sup { x : F_hat(x) <= alpha },

the negated alpha-level of the empirical CDF under the sup convention.  This is
implemented literally via order statistics (not a percentile routine): with
sorted losses the sup equals the (k+1)-th smallest loss where k is the largest
integer with k/N <= alpha, including at atoms.

Paths whose burst is never detected, whose measurement window leaves the
horizon, or whose denominator is numerically degenerate are excluded from the
sample and reported; an exclusion rate above the configured ceiling fails the
scenario run.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from . import rng as rng_mod
from .bubble import BubbleParams
from .finite_net import PathHistory, simulate_finite_batch
from .meanfield import MeanFieldPath, OUSpec, build_phi_table, simulate_meanfield_batch
from .params import FitnessFn, InvalidInputError, NetworkParams, validate_params

__all__ = [
    "SCENARIOS",
    "LossSample",
    "RiskReport",
    "DegenerateDenominatorError",
    "ExclusionCeilingError",
    "relative_shock",
    "risk_alpha",
    "run_scenario",
]

SCENARIOS = (
    "bubble_finite",
    "counterfactual_finite",
    "static_finite",
    "bubble_mf",
    "counterfactual_mf",
    "static_mf",
)

EXCLUSION_REASONS = ("no_burst", "window_beyond_horizon", "degenerate_denominator", "degenerate_ratio")


class DegenerateDenominatorError(ValueError):
    """Raised when the monitored robustness at tau is numerically zero."""


class ExclusionCeilingError(RuntimeError):
    """Raised when too many paths were excluded for the quantile to be trusted."""


@dataclass(frozen=True)
class LossSample:
    """Relative robustness change of the monitored bank over [tau, tau+Delta] on one path."""

    tau: float
    loss: float
    path_id: int = 0


@dataclass
class RiskReport:
    """Result of one scenario run, with full exclusion accounting and provenance."""

    scenario: str
    alpha: float
    Delta: float
    n_paths: int
    included: int
    excluded: dict[str, int]
    risk: float
    seed: int
    lam: float
    delta: float
    n: int
    m: int
    config_fingerprint: str = ""

    def excluded_total(self) -> int:
        return sum(self.excluded.values())

    def to_json_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "alpha": self.alpha,
            "delta": self.delta,
            "lambda": self.lam,
            "n": self.n,
            "m": self.m,
            "N_s": self.n_paths,
            "included": self.included,
            "excluded": dict(self.excluded),
            "Delta": self.Delta,
            "risk": self.risk,
            "seed": self.seed,
            "config_fingerprint": self.config_fingerprint,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)


def relative_shock(
    path: "PathHistory | MeanFieldPath",
    bank: int,
    tau: float,
    Delta: float,
    eps_den: float = 1e-8,
    path_id: int = 0,
) -> LossSample:
    """Loss sample of one path: relative change of the monitored bank over [tau, tau+Delta]."""
    dt = path.dt
    if path.stride != 1:
        raise InvalidInputError("relative_shock requires a full-resolution path (stride 1)")
    i0 = tau / dt
    i1 = (tau + Delta) / dt
    if abs(i0 - round(i0)) > 1e-9 * max(1.0, abs(i0)) or abs(i1 - round(i1)) > 1e-9 * max(1.0, abs(i1)):
        raise InvalidInputError("tau and tau+Delta must lie on the simulation grid")
    i0, i1 = int(round(i0)), int(round(i1))
    if isinstance(path, MeanFieldPath):
        series = path.rho_bar[:, bank]
    else:
        series = path.rho_periphery[:, bank]
    if i0 < 0 or i1 > len(series) - 1:
        raise InvalidInputError("tau + Delta must lie within the horizon")
    den = series[i0]
    if abs(den) < eps_den:
        raise DegenerateDenominatorError(f"|rho_tau|={abs(den):.3e} below floor {eps_den:.3e}")
    return LossSample(tau=tau, loss=float((series[i1] - den) / den), path_id=path_id)


def _loss_array(samples) -> np.ndarray:
    if len(samples) and isinstance(samples[0], LossSample):
        return np.asarray([s.loss for s in samples], dtype=float)
    return np.asarray(samples, dtype=float)


def risk_alpha(samples, alpha: float) -> float:
    """-sup{x : F_hat(x) <= alpha} of the empirical loss CDF.

    The index k = max{r : r/N <= alpha} is found with the same float comparisons
    a direct CDF scan would use, so atoms and float-boundary alphas resolve
    identically to the literal definition.
    """
    if not 0.0 < alpha < 1.0:
        raise InvalidInputError(f"alpha must be in (0, 1), got {alpha}")
    losses = _loss_array(samples)
    n = losses.size
    if n == 0:
        raise InvalidInputError("empty loss sample")
    if not np.all(np.isfinite(losses)):
        raise InvalidInputError("losses must be finite")
    if n < math.ceil(1.0 / alpha):
        raise InvalidInputError(f"need at least ceil(1/alpha)={math.ceil(1.0 / alpha)} samples, got {n}")
    k = int(math.floor(alpha * n))
    while k + 1 <= n and (k + 1) / n <= alpha:
        k += 1
    while k >= 1 and k / n > alpha:
        k -= 1
    # sup of {F_hat <= alpha} is the (k+1)-th order statistic (0-indexed k).
    ordered = np.sort(losses)
    return float(-ordered[k])


def _scenario_cell_key(scenario: str, lam_idx: int, delta_idx: int) -> tuple[int, int, int]:
    return (SCENARIOS.index(scenario), lam_idx, delta_idx)


def run_scenario(
    scenario: str,
    p: NetworkParams,
    b: BubbleParams,
    n_paths: int,
    alpha: float,
    Delta: float,
    seed: int,
    *,
    eps_den: float = 1e-8,
    exclusion_ceiling: float = 0.2,
    cell_key: tuple[int, ...] | None = None,
    phi_method: str = "quadrature",
    phi_budget: int = 10**5,
    n_tracked: int = 1,
    chunk_bytes: int = 256 * 2**20,
    config_fingerprint: str = "",
) -> RiskReport:
    """Run one scenario cell: N_s independent paths, loss extraction, tail quantile.

    The monitored bank is periphery bank 1.  Static scenarios force both
    attachment weights to the constant 1.  Counterfactual scenarios run the
    paired bubble pass on the same driver streams inside each chunk.
    """
    if scenario not in SCENARIOS:
        raise InvalidInputError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    validate_params(p)
    if scenario.startswith("static"):
        p = replace(p, f_P=FitnessFn.constant(1.0), f_B=FitnessFn.constant(1.0))
    dsteps = Delta / p.dt
    if abs(dsteps - round(dsteps)) > 1e-9 * max(1.0, abs(dsteps)) or Delta <= 0:
        raise InvalidInputError(f"Delta must be a positive multiple of dt, got Delta={Delta}, dt={p.dt}")
    dsteps = int(round(dsteps))
    steps = p.n_steps
    if cell_key is None:
        cell_key = _scenario_cell_key(scenario, 0, 0)

    is_mf = scenario.endswith("_mf")
    phi_table = None
    if is_mf:
        spec = OUSpec(lam=p.lam, sigma1=p.sigma1, rho0=p.rho0)
        phi_rng = rng_mod.path_generator(seed, cell_key, 2**31)  # off the path index range
        phi_table = build_phi_table(
            spec, p.f_P, p.dt, steps, p.delta, method=phi_method, budget=phi_budget, rng=phi_rng
        )
    engine_scenario = "counterfactual" if scenario.startswith("counterfactual") else "bubble"

    per_path_bytes = (steps + 1) * p.n_streams * 8
    chunk = max(1, min(n_paths, chunk_bytes // per_path_bytes))

    losses = np.empty(n_paths)
    taus = np.empty(n_paths)
    keep = np.zeros(n_paths, dtype=bool)
    excluded = {reason: 0 for reason in EXCLUSION_REASONS}

    for start in range(0, n_paths, chunk):
        count = min(chunk, n_paths - start)
        blocks = np.empty((steps, count, p.n_streams))
        rng_mod.fill_driver_blocks(blocks, seed, cell_key, start, p.dt)
        if is_mf:
            res = simulate_meanfield_batch(
                p, b, phi_table, blocks, n_tracked, engine_scenario, eps_den=eps_den
            )
            monitored = res["rho_bar1"]
        else:
            res = simulate_finite_batch(p, b, blocks, engine_scenario, eps_den=eps_den)
            monitored = res["rho1"]
        tau_idx = res["tau_idx"]
        cols = np.arange(count)

        no_burst = tau_idx < 0
        window_out = (~no_burst) & (tau_idx + dsteps > steps)
        degenerate_ratio = np.zeros(count, dtype=bool)
        if engine_scenario == "counterfactual":
            degenerate_ratio = res["degenerate_ratio"] & ~(no_burst | window_out)
        safe_tau = np.clip(tau_idx, 0, steps)
        den = monitored[safe_tau, cols]
        degenerate_den = (np.abs(den) < eps_den) & ~(no_burst | window_out | degenerate_ratio)

        ok = ~(no_burst | window_out | degenerate_ratio | degenerate_den)
        excluded["no_burst"] += int(no_burst.sum())
        excluded["window_beyond_horizon"] += int(window_out.sum())
        excluded["degenerate_ratio"] += int(degenerate_ratio.sum())
        excluded["degenerate_denominator"] += int(degenerate_den.sum())

        num = monitored[np.clip(tau_idx + dsteps, 0, steps), cols]
        sl = slice(start, start + count)
        with np.errstate(divide="ignore", invalid="ignore"):
            losses[sl] = np.where(ok, (num - den) / np.where(ok, den, 1.0), np.nan)
        taus[sl] = tau_idx * p.dt
        keep[sl] = ok

    n_excluded = int((~keep).sum())
    if n_paths > 0 and n_excluded / n_paths > exclusion_ceiling:
        raise ExclusionCeilingError(
            f"{scenario}: excluded {n_excluded}/{n_paths} paths "
            f"(ceiling {exclusion_ceiling:.0%}); reasons: "
            + ", ".join(f"{k}={v}" for k, v in excluded.items() if v)
        )
    risk = risk_alpha(losses[keep], alpha)
    return RiskReport(
        scenario=scenario,
        alpha=alpha,
        Delta=Delta,
        n_paths=n_paths,
        included=int(keep.sum()),
        excluded={k: v for k, v in excluded.items()},
        risk=risk,
        seed=seed,
        lam=p.lam,
        delta=p.delta,
        n=p.n,
        m=p.m,
        config_fingerprint=config_fingerprint,
    )
