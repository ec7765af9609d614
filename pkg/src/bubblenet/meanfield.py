"""Partial mean-field limit: decoupled OU fluctuations, the common drift, and core-bank SDDEs.

In the large-network limit a periphery bank splits into an Ornstein-Uhlenbeck
fluctuation plus a common finite-variation drift process nu; the m core banks
remain a genuinely stochastic influence.  The periphery-periphery interaction
survives only through the deterministic kernel

    phi(t, t-delta) = E[ f(X_{t-delta}) * X_t ],   X_s = OU_s - E[OU_s],

which is precomputed on the whole time grid and shared read-only across paths.
Two evaluation routes are provided: a 1-D Gauss-Hermite quadrature using the
Gaussian projection E[f(X)Y] = exp(-lambda*delta) * E[X f(X)], and Monte Carlo
over exactly-sampled OU trajectories.  The quadrature is the default; the two
must agree within Monte Carlo error (see the test suite).

Driver blocks use the finite-system column layout (see :mod:`bubblenet.rng`);
the limit system reads the tracked periphery columns, the core columns, and
the auxiliary drivers, so paths pair with finite-system paths stream by stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.hermite import hermgauss

from . import bubble as bubble_mod
from .bubble import BubbleParams, BurstPolicy
from .params import (
    FitnessFn,
    InvalidInputError,
    NetworkParams,
    _fitness_values,
    estimate_lipschitz,
    validate_params,
)

__all__ = [
    "OUSpec",
    "MeanFieldState",
    "MeanFieldPath",
    "PhiTable",
    "ou_moments",
    "ou_mean",
    "sample_ou_exact",
    "phi",
    "phi_quadrature",
    "phi_monte_carlo",
    "build_phi_table",
    "meanfield_step",
    "simulate_meanfield",
    "simulate_meanfield_batch",
]


@dataclass(frozen=True)
class OUSpec:
    """Mean-reverting fluctuation of a periphery bank in the limit."""

    lam: float
    sigma1: float
    rho0: float

    def __post_init__(self):
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise InvalidInputError(f"lambda must be > 0, got {self.lam}")
        if not (self.sigma1 > 0 and math.isfinite(self.sigma1)):
            raise InvalidInputError(f"sigma1 must be > 0, got {self.sigma1}")


@dataclass
class MeanFieldState:
    """Limit-system state at one grid time: common drift, core banks, tracked fluctuations."""

    nu: float
    rho_core_bar: np.ndarray
    rho_tilde: np.ndarray
    t: float


@dataclass
class MeanFieldPath:
    """Recorded limit-system path.  ``rho_bar`` is rho_tilde + nu, the assembled
    periphery limit, recorded for each tracked index."""

    dt: float
    stride: int
    t: np.ndarray
    nu: np.ndarray
    rho_core_bar: np.ndarray  # (T, m)
    rho_tilde: np.ndarray  # (T, n_tracked)
    rho_bar: np.ndarray  # (T, n_tracked)
    beta: np.ndarray
    mu: np.ndarray
    M: np.ndarray
    tau: float | None


def ou_mean(spec: OUSpec, t):
    """E[OU_t] = rho0 * exp(-lambda t)."""
    return spec.rho0 * np.exp(-spec.lam * np.asarray(t, dtype=float))


def ou_variance(spec: OUSpec, t):
    return spec.sigma1**2 * (1.0 - np.exp(-2.0 * spec.lam * np.asarray(t, dtype=float))) / (2.0 * spec.lam)


def ou_moments(spec: OUSpec, t):
    """Closed-form (mean, variance) of the OU fluctuation at time t >= 0."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise InvalidInputError("t must be >= 0")
    mean = ou_mean(spec, t_arr)
    var = ou_variance(spec, t_arr)
    if np.ndim(t) == 0:
        return float(mean), float(var)
    return mean, var


def sample_ou_exact(spec: OUSpec, times: np.ndarray, n_paths: int, rng: np.random.Generator) -> np.ndarray:
    """Sample OU paths at the given increasing times via exact transitions.

    Returns shape (len(times), n_paths).  Starting point is rho0 at time 0;
    the Gaussian transition law is exact for any step size.
    """
    times = np.asarray(times, dtype=float)
    if np.any(times < 0) or np.any(np.diff(times) < 0):
        raise InvalidInputError("times must be nonnegative and nondecreasing")
    out = np.empty((len(times), n_paths))
    prev_t = 0.0
    prev = np.full(n_paths, float(spec.rho0))
    for i, t in enumerate(times):
        h = t - prev_t
        if h > 0:
            decay = math.exp(-spec.lam * h)
            sd = math.sqrt(float(ou_variance(spec, h)))
            prev = prev * decay + sd * rng.standard_normal(n_paths)
            prev_t = t
        out[i] = prev
    return out


@lru_cache(maxsize=8)
def _gh_nodes(n: int):
    x, w = hermgauss(n)
    return x, w / math.sqrt(math.pi)


def _effective_lag(t: float, delta: float) -> float:
    # Warm-up convention: before t = delta the zero-delay dynamics apply.
    return delta if t >= delta else 0.0


def phi_quadrature(spec: OUSpec, f: FitnessFn, t: float, delta: float, nodes: int = 64) -> float:
    """Kernel value via E[f(X)Y] = exp(-lambda*delta) E[X f(X)], X centered Gaussian.

    The lagged centered pair (X, Y) satisfies Y = exp(-lambda*delta) X + Z with
    Z independent of X and centered, so only the 1-D integral E[F(X)] against
    the N(0, Var(X)) density survives; it is evaluated with Gauss-Hermite nodes.
    """
    if t < 0 or delta < 0:
        raise InvalidInputError("t and delta must be >= 0")
    d = _effective_lag(t, delta)
    v = float(ou_variance(spec, t - d))
    if v == 0.0:
        return 0.0
    x, w = _gh_nodes(nodes)
    X = math.sqrt(2.0 * v) * x
    EF = float(w @ (X * _fitness_values(f, X)))
    return math.exp(-spec.lam * d) * EF


def phi_monte_carlo(
    spec: OUSpec,
    f: FitnessFn,
    t: float,
    delta: float,
    budget: int = 10**5,
    rng: np.random.Generator | None = None,
) -> tuple[float, float]:
    """Kernel value and its standard error from exactly-sampled OU trajectories."""
    if t < 0 or delta < 0:
        raise InvalidInputError("t and delta must be >= 0")
    if rng is None:
        rng = np.random.default_rng()
    d = _effective_lag(t, delta)
    base = t - d
    paths = sample_ou_exact(spec, np.array([base, t]), budget, rng)
    X = paths[0] - float(ou_mean(spec, base))
    Y = paths[1] - float(ou_mean(spec, t))
    vals = _fitness_values(f, X) * Y
    est = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(budget))
    return est, se


def phi(
    spec: OUSpec,
    f: FitnessFn,
    t: float,
    delta: float,
    method: str = "quadrature",
    budget: int = 10**5,
    rng: np.random.Generator | None = None,
) -> float:
    """Kernel phi(t, t-delta); for t < delta the warm-up value phi(t, t) is returned."""
    if method == "quadrature":
        return phi_quadrature(spec, f, t, delta)
    if method == "monte_carlo":
        return phi_monte_carlo(spec, f, t, delta, budget, rng)[0]
    raise InvalidInputError(f"unknown phi method {method!r}")


@dataclass(frozen=True)
class PhiTable:
    """Kernel values on the simulation grid, shared read-only across paths."""

    values: np.ndarray  # (n_steps + 1,)
    method: str
    dt: float
    delta: float


def build_phi_table(
    spec: OUSpec,
    f: FitnessFn,
    dt: float,
    n_steps: int,
    delta: float,
    method: str = "quadrature",
    nodes: int = 64,
    budget: int = 10**5,
    rng: np.random.Generator | None = None,
) -> PhiTable:
    """Precompute phi on the whole grid (warm-up convention before t = delta)."""
    lag = int(round(delta / dt))
    s_idx = np.arange(n_steps + 1)
    base_idx = np.where(s_idx < lag, s_idx, s_idx - lag)
    decay = np.where(s_idx < lag, 1.0, math.exp(-spec.lam * delta))
    if method == "quadrature":
        v = np.asarray(ou_variance(spec, base_idx * dt))
        x, w = _gh_nodes(nodes)
        X = np.sqrt(2.0 * v)[:, None] * x[None, :]
        EF = (X * _fitness_values(f, X)) @ w
        values = decay * EF
    elif method == "monte_carlo":
        if rng is None:
            rng = np.random.default_rng()
        values = np.empty(n_steps + 1)
        for s in range(n_steps + 1):
            values[s], _ = phi_monte_carlo(spec, f, s * dt, delta if s >= lag else 0.0, budget, rng)
    else:
        raise InvalidInputError(f"unknown phi method {method!r}")

    _, k2 = estimate_lipschitz(f, 10.0, 2001)
    bound = k2 * spec.sigma1 / math.sqrt(2.0 * spec.lam) + 1e-9
    if method == "quadrature" and np.any(np.abs(values) > bound):
        raise RuntimeError("phi table violates its theoretical bound; kernel evaluation is inconsistent")
    return PhiTable(values=values, method=method, dt=dt, delta=delta)


def _mf_interaction(nu, Cb, dev_now, wB_lag, psi_now, phi_value, lam, m):
    """Interaction drifts, batch leading axis.

    Returns the drift of nu excluding its deterministic lambda*E[OU] term (which
    the stepper integrates exactly) and the full core drift excluding the bubble
    increment.
    """
    TB = wB_lag * dev_now
    SB = TB.sum(axis=1)
    drift_nu_interaction = phi_value + SB / m
    drift_core = phi_value + (SB[:, None] - TB) / (m - 1) + lam * (psi_now + nu[:, None] - Cb)
    return drift_nu_interaction, drift_core


def meanfield_step(
    now: MeanFieldState,
    lagged: MeanFieldState,
    phi_value: float,
    dbeta: float,
    dW_core: np.ndarray,
    dW_tracked: np.ndarray,
    p: NetworkParams,
) -> MeanFieldState:
    """One step of the limit system from explicit lagged arguments.

    Discretization conventions (shared with the batch engine): interaction and
    core drifts use the explicit left endpoint; the deterministic lambda*E[OU]
    contribution to nu is integrated exactly over the step, psi(t) - psi(t+dt);
    the tracked fluctuations advance by the exact OU transition, driven by the
    normalized Brownian increment.  These choices keep the all-banks-equal,
    zero-noise, no-bubble configuration an exact fixed point (for constant
    attachment weights, where the kernel vanishes identically).
    """
    spec = OUSpec(lam=p.lam, sigma1=p.sigma1, rho0=p.rho0)
    psi_now = float(ou_mean(spec, now.t))
    psi_next = float(ou_mean(spec, now.t + p.dt))
    psi_lag = float(ou_mean(spec, lagged.t))
    nu = np.array([now.nu])
    Cb = now.rho_core_bar[None, :]
    dev_now = Cb - nu[:, None] - psi_now
    dev_lag = lagged.rho_core_bar[None, :] - lagged.nu - psi_lag
    wB_lag = _fitness_values(p.f_B, dev_lag)
    dnu_int, dCb = _mf_interaction(nu, Cb, dev_now, wB_lag, psi_now, phi_value, p.lam, p.m)
    decay = math.exp(-p.lam * p.dt)
    trans_sd = math.sqrt(float(ou_variance(spec, p.dt)) / p.dt)
    tilde = now.rho_tilde * decay + trans_sd * dW_tracked
    return MeanFieldState(
        nu=float(now.nu + dnu_int[0] * p.dt + (psi_now - psi_next)),
        rho_core_bar=now.rho_core_bar + dCb[0] * p.dt + p.sigma2 * dW_core + dbeta,
        rho_tilde=tilde,
        t=now.t + p.dt,
    )


def simulate_meanfield_batch(
    p: NetworkParams,
    b: BubbleParams,
    phi_table: PhiTable,
    blocks: np.ndarray,
    n_tracked: int = 1,
    scenario: str = "bubble",
    paired: dict | None = None,
    eps_den: float = 1e-8,
    record_full: bool = False,
    stride: int = 1,
    policy: BurstPolicy | None = None,
) -> dict:
    """Advance a batch of limit-system paths on finite-layout driver blocks.

    Scenarios mirror the finite engine: "bubble", "counterfactual" (paired
    bubble pass on the same blocks, shock scaled by the monitored assembled
    periphery limit), "no_core_shock".  The monitored bank is tracked index 0.
    """
    if scenario not in ("bubble", "counterfactual", "no_core_shock"):
        raise InvalidInputError(f"unknown scenario {scenario!r}")
    steps, n_paths, width = blocks.shape
    if steps != p.n_steps or width != p.n_streams:
        raise InvalidInputError(
            f"driver block mismatch: got {blocks.shape}, need ({p.n_steps}, paths, {p.n_streams})"
        )
    if not 1 <= n_tracked <= p.n:
        raise InvalidInputError(f"n_tracked must be in [1, n], got {n_tracked}")
    if len(phi_table.values) != steps + 1 or phi_table.dt != p.dt or phi_table.delta != p.delta:
        raise InvalidInputError("phi table does not match the simulation grid")
    n, m, lag, dt = p.n, p.m, p.lag_steps, p.dt
    phi_grid = phi_table.values

    spec = OUSpec(lam=p.lam, sigma1=p.sigma1, rho0=p.rho0)
    psi = np.asarray(ou_mean(spec, np.arange(steps + 1) * dt))

    if scenario == "no_core_shock":
        beta = np.zeros((steps + 1, n_paths))
        mu = np.zeros((steps + 1, n_paths))
        M = np.full((steps + 1, n_paths), b.M0)
        dbeta = np.zeros((steps, n_paths))
        tau_idx = np.full(n_paths, -1, dtype=np.int64)
    elif scenario == "bubble":
        bres = bubble_mod.simulate_bubble_paths(
            b, steps, dt, blocks[:, :, n + m], blocks[:, :, n + m + 2], policy
        )
        beta, mu, M, dbeta, tau_idx = bres["beta"], bres["mu"], bres["M"], bres["dbeta"], bres["tau_idx"]
    else:
        if paired is None:
            paired = simulate_meanfield_batch(
                p, b, phi_table, blocks, n_tracked, "bubble", eps_den=eps_den, policy=policy
            )
        mu, M = paired["mu"], paired["M"]
        dbeta = paired["dbeta"]
        tau_idx = paired["tau_idx"]
        pair_rb1 = paired["rho_bar1"]
        pair_rb1_tau = np.where(
            tau_idx >= 0, pair_rb1[np.clip(tau_idx, 0, steps), np.arange(n_paths)], np.nan
        )
        beta = np.zeros((steps + 1, n_paths))
        ratio = np.zeros(n_paths)
        degenerate = np.zeros(n_paths, dtype=bool)

    # Internal variables: centered fluctuations x = rho_tilde - E[rho_tilde] and the
    # periphery level g = nu + E[rho_tilde].  Same dynamics (the deterministic
    # lambda*E[rho_tilde] term of nu integrates exactly into g), but the
    # all-banks-equal zero-noise fixed point is then preserved bit-exactly.
    g = np.full(n_paths, float(p.rho0))
    Cb = np.tile(p.rho0_core_array(), (n_paths, 1))
    x = np.zeros((n_paths, n_tracked))

    nu_rec = np.empty((steps + 1, n_paths))
    rho_bar1 = np.empty((steps + 1, n_paths))
    rho_core1 = np.empty((steps + 1, n_paths))
    nu_rec[0] = g - psi[0]
    rho_bar1[0] = x[:, 0] + g
    rho_core1[0] = Cb[:, 0]

    if record_full:
        rec_idx = np.arange(0, steps + 1, stride)
        if rec_idx[-1] != steps:
            rec_idx = np.append(rec_idx, steps)
        rec_pos = {int(s): i for i, s in enumerate(rec_idx)}
        core_rec = np.empty((len(rec_idx), n_paths, m))
        bar_rec = np.empty((len(rec_idx), n_paths, n_tracked))
        core_rec[0] = Cb
        bar_rec[0] = x + g[:, None]

    L = lag + 1
    bufW = np.empty((L, n_paths, m))
    ou_decay = math.exp(-p.lam * dt)
    ou_sd = math.sqrt(float(ou_variance(spec, dt)) / dt)

    for s in range(steps):
        dev_now = Cb - g[:, None]
        wB_now = _fitness_values(p.f_B, dev_now)
        if lag > 0 and s >= lag:
            wB_lag = bufW[(s - lag) % L]
        else:
            wB_lag = wB_now
        bufW[s % L] = wB_now

        TB = wB_lag * dev_now
        SB = TB.sum(axis=1)
        interaction = phi_grid[s] + SB / m
        dCb = phi_grid[s] + (SB[:, None] - TB) / (m - 1) + p.lam * (g[:, None] - Cb)

        if scenario == "counterfactual":
            at = tau_idx == s
            if np.any(at):
                den = pair_rb1_tau[at]
                bad = np.abs(den) < eps_den
                degenerate[at] |= bad
                rb_now = x[at, 0] + g[at]
                ratio[at] = np.where(bad, 0.0, rb_now / np.where(bad, 1.0, den))
            live = (tau_idx >= 0) & (s >= tau_idx)
            inc = np.where(live, ratio * dbeta[s], 0.0)
            beta[s + 1] = beta[s] + inc
        elif scenario == "bubble":
            inc = dbeta[s]
        else:
            inc = 0.0

        Cb = Cb + dCb * dt + p.sigma2 * blocks[s, :, n : n + m] + (inc[:, None] if np.ndim(inc) else inc)
        x = x * ou_decay + ou_sd * blocks[s, :, :n_tracked]
        g = g + interaction * dt

        nu_rec[s + 1] = g - psi[s + 1]
        rho_bar1[s + 1] = x[:, 0] + g
        rho_core1[s + 1] = Cb[:, 0]
        if record_full and (s + 1) in rec_pos:
            core_rec[rec_pos[s + 1]] = Cb
            bar_rec[rec_pos[s + 1]] = x + g[:, None]

    out = {
        "nu": nu_rec,
        "rho_bar1": rho_bar1,
        "rho_core1": rho_core1,
        "beta": beta,
        "mu": mu,
        "M": M,
        "dbeta": dbeta,
        "tau_idx": tau_idx,
    }
    if scenario == "counterfactual":
        out["ratio"] = ratio
        out["degenerate_ratio"] = degenerate
    if record_full:
        out["record_steps"] = rec_idx
        out["rho_core_bar"] = core_rec
        out["rho_bar"] = bar_rec
    return out


def simulate_meanfield(
    p: NetworkParams,
    b: BubbleParams,
    phi_table: PhiTable,
    drivers: np.ndarray,
    n_tracked: int = 1,
    scenario: str = "bubble",
    stride: int = 1,
    eps_den: float = 1e-8,
    policy: BurstPolicy | None = None,
) -> MeanFieldPath:
    """Simulate one limit-system path from a (n_steps, n+m+3) driver block."""
    validate_params(p)
    if drivers.ndim != 2:
        raise InvalidInputError("drivers must be a (n_steps, n_streams) array")
    res = simulate_meanfield_batch(
        p, b, phi_table, drivers[:, None, :], n_tracked, scenario,
        eps_den=eps_den, record_full=True, stride=stride, policy=policy,
    )
    rec = res["record_steps"]
    rho_bar = res["rho_bar"][:, 0, :]
    nu = res["nu"][rec, 0]
    ti = int(res["tau_idx"][0])
    return MeanFieldPath(
        dt=p.dt,
        stride=stride,
        t=rec * p.dt,
        nu=nu,
        rho_core_bar=res["rho_core_bar"][:, 0, :],
        rho_tilde=rho_bar - nu[:, None],
        rho_bar=rho_bar,
        beta=res["beta"][rec, 0],
        mu=res["mu"][rec, 0],
        M=res["M"][rec, 0],
        tau=None if ti < 0 else ti * p.dt,
    )
