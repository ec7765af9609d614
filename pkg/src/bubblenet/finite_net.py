"""Euler-Maruyama simulation of the finite core-periphery robustness system.

State is the vector of n periphery and m core robustness values.  Drifts couple
banks through attachment weights evaluated on robustness deviations from the
network average, lagged by delta; the lag is realized with a ring buffer of
precomputed weights, so each state's weights are evaluated exactly once.  On
[0, delta) the system runs its own zero-delay dynamics (lagged arguments
collapse to the current state); from t = delta onwards lagged lookups land
exactly on stored grid points.

The batch engine advances many Monte Carlo paths at once (arrays shaped
(paths, banks)); the public single-path API wraps a batch of one, so there is
a single implementation of the dynamics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import bubble as bubble_mod
from .bubble import BubbleParams, BurstPolicy
from .params import InvalidInputError, NetworkParams, _fitness_values, validate_params

__all__ = [
    "SCENARIO_BUBBLE",
    "SCENARIO_COUNTERFACTUAL",
    "SCENARIO_NO_CORE_SHOCK",
    "NetworkState",
    "PathHistory",
    "mean_robustness",
    "periphery_drift",
    "core_drift",
    "delay_lookup",
    "simulate_finite",
    "simulate_finite_batch",
]

SCENARIO_BUBBLE = "bubble"
SCENARIO_COUNTERFACTUAL = "counterfactual"
SCENARIO_NO_CORE_SHOCK = "no_core_shock"
_SCENARIOS = (SCENARIO_BUBBLE, SCENARIO_COUNTERFACTUAL, SCENARIO_NO_CORE_SHOCK)


@dataclass
class NetworkState:
    """Robustness of all banks at one grid time."""

    rho_periphery: np.ndarray
    rho_core: np.ndarray
    t: float


@dataclass
class PathHistory:
    """Recorded series of one path.  ``stride`` downsamples the per-bank series;
    the monitored summaries (tau, shock process) are always full resolution."""

    dt: float
    stride: int
    t: np.ndarray
    rho_periphery: np.ndarray  # (T, n)
    rho_core: np.ndarray  # (T, m)
    A: np.ndarray
    beta: np.ndarray
    mu: np.ndarray
    M: np.ndarray
    tau: float | None

    def state_at(self, index: int) -> NetworkState:
        return NetworkState(
            rho_periphery=self.rho_periphery[index].copy(),
            rho_core=self.rho_core[index].copy(),
            t=float(self.t[index]),
        )


def mean_robustness(s: NetworkState) -> float:
    """Average robustness over all m+n banks."""
    return float((s.rho_periphery.sum() + s.rho_core.sum()) / (s.rho_periphery.size + s.rho_core.size))


def _drifts_given_weights(P_now, C_now, A_now, wP_lag, wB_lag, p: NetworkParams):
    """Drift vectors for all banks given lagged attachment weights.

    Leading axis is the path batch.  The core drift excludes the bubble
    increment, which the stepper adds separately.
    """
    devP_now = P_now - A_now[:, None]
    devC_now = C_now - A_now[:, None]
    TP = wP_lag * devP_now
    TB = wB_lag * devC_now
    SP = TP.sum(axis=1)
    SB = TB.sum(axis=1)
    driftP = (SP[:, None] - TP) / (p.n - 1) + (SB / p.m)[:, None] + p.lam * (A_now[:, None] - P_now)
    driftC = (SP / p.n)[:, None] + (SB[:, None] - TB) / (p.m - 1) + p.lam * (A_now[:, None] - C_now)
    return driftP, driftC


def _drift_components(P_now, C_now, P_lag, C_lag, p: NetworkParams):
    A_now = (P_now.sum(axis=1) + C_now.sum(axis=1)) / (p.n + p.m)
    A_lag = (P_lag.sum(axis=1) + C_lag.sum(axis=1)) / (p.n + p.m)
    wP_lag = _fitness_values(p.f_P, P_lag - A_lag[:, None])
    wB_lag = _fitness_values(p.f_B, C_lag - A_lag[:, None])
    return _drifts_given_weights(P_now, C_now, A_now, wP_lag, wB_lag, p)


def periphery_drift(i: int, now: NetworkState, lagged: NetworkState, p: NetworkParams) -> float:
    """Full drift of periphery bank i given current and lagged states."""
    if not 0 <= i < p.n:
        raise InvalidInputError(f"periphery index {i} out of range [0, {p.n})")
    dP, _ = _drift_components(
        now.rho_periphery[None, :], now.rho_core[None, :],
        lagged.rho_periphery[None, :], lagged.rho_core[None, :], p,
    )
    return float(dP[0, i])


def core_drift(k: int, now: NetworkState, lagged: NetworkState, p: NetworkParams) -> float:
    """Drift of core bank k, excluding the bubble increment (added by the stepper)."""
    if not 0 <= k < p.m:
        raise InvalidInputError(f"core index {k} out of range [0, {p.m})")
    _, dC = _drift_components(
        now.rho_periphery[None, :], now.rho_core[None, :],
        lagged.rho_periphery[None, :], lagged.rho_core[None, :], p,
    )
    return float(dC[0, k])


def delay_lookup(h: PathHistory, t: float, delta: float) -> NetworkState:
    """State at t - delta, with the zero-delay warm-up rule (state at t when t < delta)."""
    if h.stride != 1:
        raise InvalidInputError("delay_lookup requires a full-resolution history (stride 1)")
    idx = t / h.dt
    if abs(idx - round(idx)) > 1e-9 * max(1.0, abs(idx)):
        raise InvalidInputError(f"t={t} is not on the simulation grid (dt={h.dt})")
    idx = int(round(idx))
    lag = int(round(delta / h.dt))
    src = idx - lag if idx >= lag else idx
    if src < 0 or idx >= len(h.t):
        raise RuntimeError(f"lookup at t={t}, delta={delta} is outside the recorded history")
    return h.state_at(src)


def simulate_finite_batch(
    p: NetworkParams,
    b: BubbleParams,
    blocks: np.ndarray,
    scenario: str = SCENARIO_BUBBLE,
    paired: dict | None = None,
    eps_den: float = 1e-8,
    record_full: bool = False,
    stride: int = 1,
    policy: BurstPolicy | None = None,
) -> dict:
    """Advance a batch of paths; ``blocks`` is (n_steps, n_paths, n+m+3) Brownian increments.

    Returns full-resolution series for the monitored periphery bank (column 0),
    the first core bank, and the shock process, plus per-path burst indices
    (-1 when the policy never triggered).  The counterfactual scenario needs
    ``paired`` = result of a bubble-scenario run on the same blocks, and scales
    the paired realized increments by the monitored bank's robustness ratio at
    the paired burst time.
    """
    if scenario not in _SCENARIOS:
        raise InvalidInputError(f"unknown scenario {scenario!r}")
    steps, n_paths, width = blocks.shape
    if steps != p.n_steps or width != p.n_streams:
        raise InvalidInputError(
            f"driver block mismatch: got {blocks.shape}, need ({p.n_steps}, paths, {p.n_streams})"
        )
    n, m, lag, dt = p.n, p.m, p.lag_steps, p.dt

    if scenario == SCENARIO_NO_CORE_SHOCK:
        core_inc = None
        beta = np.zeros((steps + 1, n_paths))
        mu = np.zeros((steps + 1, n_paths))
        M = np.full((steps + 1, n_paths), b.M0)
        dbeta = np.zeros((steps, n_paths))
        tau_idx = np.full(n_paths, -1, dtype=np.int64)
    elif scenario == SCENARIO_BUBBLE:
        bres = bubble_mod.simulate_bubble_paths(
            b, steps, dt, blocks[:, :, n + m], blocks[:, :, n + m + 2], policy
        )
        core_inc = bres["dbeta"]
        beta, mu, M, dbeta, tau_idx = bres["beta"], bres["mu"], bres["M"], bres["dbeta"], bres["tau_idx"]
    else:  # counterfactual
        if paired is None:
            paired = simulate_finite_batch(p, b, blocks, SCENARIO_BUBBLE, policy=policy, eps_den=eps_den)
        core_inc = None
        mu, M = paired["mu"], paired["M"]
        dbeta = paired["dbeta"]
        tau_idx = paired["tau_idx"]
        pair_rho1 = paired["rho1"]
        pair_rho1_tau = np.where(
            tau_idx >= 0, pair_rho1[np.clip(tau_idx, 0, steps), np.arange(n_paths)], np.nan
        )
        beta = np.zeros((steps + 1, n_paths))  # filled with the cumulated counterfactual shock
        ratio = np.zeros(n_paths)
        degenerate = np.zeros(n_paths, dtype=bool)

    P = np.full((n_paths, n), float(p.rho0))
    C = np.tile(p.rho0_core_array(), (n_paths, 1))

    rho1 = np.empty((steps + 1, n_paths))
    rho_core1 = np.empty((steps + 1, n_paths))
    rho1[0] = P[:, 0]
    rho_core1[0] = C[:, 0]

    if record_full:
        rec_idx = np.arange(0, steps + 1, stride)
        if rec_idx[-1] != steps:
            rec_idx = np.append(rec_idx, steps)
        rec_pos = {int(s): i for i, s in enumerate(rec_idx)}
        rho_p_rec = np.empty((len(rec_idx), n_paths, n))
        rho_c_rec = np.empty((len(rec_idx), n_paths, m))
        rho_p_rec[0] = P
        rho_c_rec[0] = C

    L = lag + 1
    bufP = np.empty((L, n_paths, n))
    bufB = np.empty((L, n_paths, m))
    inv_nm = 1.0 / (n + m)

    for s in range(steps):
        A_now = (P.sum(axis=1) + C.sum(axis=1)) * inv_nm
        devP = P - A_now[:, None]
        devC = C - A_now[:, None]
        wP_now = _fitness_values(p.f_P, devP)
        wB_now = _fitness_values(p.f_B, devC)
        if lag > 0 and s >= lag:
            wP_lag = bufP[(s - lag) % L]
            wB_lag = bufB[(s - lag) % L]
        else:
            wP_lag, wB_lag = wP_now, wB_now
        bufP[s % L] = wP_now
        bufB[s % L] = wB_now

        TP = wP_lag * devP
        TB = wB_lag * devC
        SP = TP.sum(axis=1)
        SB = TB.sum(axis=1)
        driftP = (SP[:, None] - TP) / (n - 1) + (SB / m)[:, None] + p.lam * (A_now[:, None] - P)
        driftC = (SP / n)[:, None] + (SB[:, None] - TB) / (m - 1) + p.lam * (A_now[:, None] - C)

        if scenario == SCENARIO_COUNTERFACTUAL:
            at = tau_idx == s
            if np.any(at):
                den = pair_rho1_tau[at]
                bad = np.abs(den) < eps_den
                degenerate[at] |= bad
                ratio[at] = np.where(bad, 0.0, P[at, 0] / np.where(bad, 1.0, den))
            live = (tau_idx >= 0) & (s >= tau_idx)
            inc = np.where(live, ratio * dbeta[s], 0.0)
            beta[s + 1] = beta[s] + inc
        elif scenario == SCENARIO_BUBBLE:
            inc = core_inc[s]
        else:
            inc = 0.0

        P = P + driftP * dt + p.sigma1 * blocks[s, :, :n]
        C = C + driftC * dt + p.sigma2 * blocks[s, :, n : n + m] + (inc[:, None] if np.ndim(inc) else inc)

        rho1[s + 1] = P[:, 0]
        rho_core1[s + 1] = C[:, 0]
        if record_full and (s + 1) in rec_pos:
            rho_p_rec[rec_pos[s + 1]] = P
            rho_c_rec[rec_pos[s + 1]] = C

    out = {
        "rho1": rho1,
        "rho_core1": rho_core1,
        "beta": beta,
        "mu": mu,
        "M": M,
        "dbeta": dbeta,
        "tau_idx": tau_idx,
    }
    if scenario == SCENARIO_COUNTERFACTUAL:
        out["ratio"] = ratio
        out["degenerate_ratio"] = degenerate
        out["mu"] = mu
        out["M"] = M
    if record_full:
        out["record_steps"] = rec_idx
        out["rho_p"] = rho_p_rec
        out["rho_c"] = rho_c_rec
    return out


def simulate_finite(
    p: NetworkParams,
    b: BubbleParams,
    drivers: np.ndarray,
    scenario: str = SCENARIO_BUBBLE,
    stride: int = 1,
    eps_den: float = 1e-8,
    policy: BurstPolicy | None = None,
) -> PathHistory:
    """Simulate one path from a (n_steps, n+m+3) driver block and record its history."""
    validate_params(p)
    if drivers.ndim != 2:
        raise InvalidInputError("drivers must be a (n_steps, n_streams) array")
    res = simulate_finite_batch(
        p, b, drivers[:, None, :], scenario,
        eps_den=eps_den, record_full=True, stride=stride, policy=policy,
    )
    rec = res["record_steps"]
    rho_p = res["rho_p"][:, 0, :]
    rho_c = res["rho_c"][:, 0, :]
    A = (rho_p.sum(axis=1) + rho_c.sum(axis=1)) / (p.n + p.m)
    ti = int(res["tau_idx"][0])
    return PathHistory(
        dt=p.dt,
        stride=stride,
        t=rec * p.dt,
        rho_periphery=rho_p,
        rho_core=rho_c,
        A=A,
        beta=res["beta"][rec, 0],
        mu=res["mu"][rec, 0],
        M=res["M"][rec, 0],
        tau=None if ti < 0 else ti * p.dt,
    )
