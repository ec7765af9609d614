"""Asset-price bubble: distortion process, drift, illiquidity, burst time, counterfactual shock.

The bubble state beta feeds the core banks' robustness directly.  Its drift is
mu_t = M_t * Lambda * (-k*beta_t + 2*mu_bar_eff), where mu_bar_eff equals the
configured order-flow drift before the burst and 0 afterwards, so the -k*beta
term deflates the bubble once it bursts.  Illiquidity M is a geometric Brownian
motion stepped by its exact log-normal update (positivity is then unconditional).

The burst time is a stopping rule on the beta path.  Two policies are built in:
a fixed deterministic time, and a drawdown rule that triggers the first time
beta has both exceeded an arming threshold (via its running maximum) and fallen
to a fraction q of that running maximum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .params import InvalidInputError, ParameterError

__all__ = [
    "VOL_CONSTANT",
    "VOL_STATE_DEPENDENT",
    "BurstPolicy",
    "BubbleParams",
    "BubblePath",
    "InvalidStateError",
    "DegenerateRatioError",
    "step_illiquidity",
    "step_bubble",
    "detect_burst",
    "counterfactual_beta",
    "simulate_bubble_paths",
]

VOL_CONSTANT = "constant"
VOL_STATE_DEPENDENT = "state_dependent"

DETERMINISTIC = "deterministic"
DRAWDOWN = "drawdown"


class InvalidStateError(ValueError):
    """Raised when a stepping function receives an impossible state (e.g. M <= 0)."""


class DegenerateRatioError(ValueError):
    """Raised when the counterfactual shock ratio is undefined (zero denominator)."""


@dataclass(frozen=True)
class BurstPolicy:
    """Stopping rule producing the per-path burst time tau.

    deterministic: tau = t_burst on every path.
    drawdown: tau = first grid time at which the running maximum of beta has
    exceeded ``beta_star`` and beta is at most ``q`` times that running maximum.
    """

    kind: str = DRAWDOWN
    t_burst: float = 0.5
    q: float = 0.5
    beta_star: float = 0.1

    def __post_init__(self):
        if self.kind not in (DETERMINISTIC, DRAWDOWN):
            raise ParameterError([f"burst kind must be '{DETERMINISTIC}' or '{DRAWDOWN}', got {self.kind!r}"])
        if self.kind == DETERMINISTIC and not (self.t_burst > 0 and math.isfinite(self.t_burst)):
            raise ParameterError([f"burst t must be > 0, got {self.t_burst}"])
        if self.kind == DRAWDOWN:
            if not (0.0 < self.q < 1.0):
                raise ParameterError([f"burst q must be in (0, 1), got {self.q}"])
            if not (self.beta_star > 0 and math.isfinite(self.beta_star)):
                raise ParameterError([f"burst beta_star must be > 0, got {self.beta_star}"])

    @staticmethod
    def deterministic(t_burst: float) -> "BurstPolicy":
        return BurstPolicy(kind=DETERMINISTIC, t_burst=t_burst)

    @staticmethod
    def drawdown(q: float = 0.5, beta_star: float = 0.1) -> "BurstPolicy":
        return BurstPolicy(kind=DRAWDOWN, q=q, beta_star=beta_star)


@dataclass(frozen=True)
class BubbleParams:
    """Bubble dynamics parameters.

    ``vol_mode`` selects the diffusion coefficient of beta: ``constant`` uses
    sigmaB, ``state_dependent`` uses 2*sigma_bar*M_t*Lambda.
    """

    k: float = 2.0
    mu_bar: float = 1.25
    sigma_bar: float = 0.35
    Lambda: float = 1.0
    sigmaB: float = 0.2
    vol_mode: str = VOL_STATE_DEPENDENT
    M0: float = 1.0
    muM: float = 0.0
    sigmaM: float = 0.1
    burst: BurstPolicy = field(default_factory=BurstPolicy.drawdown)

    def __post_init__(self):
        problems = []
        if self.vol_mode not in (VOL_CONSTANT, VOL_STATE_DEPENDENT):
            problems.append(f"vol_mode must be '{VOL_CONSTANT}' or '{VOL_STATE_DEPENDENT}', got {self.vol_mode!r}")
        if not (self.M0 > 0 and math.isfinite(self.M0)):
            problems.append(f"M0 must be > 0, got {self.M0}")
        if not (self.sigma_bar > 0 and math.isfinite(self.sigma_bar)):
            problems.append(f"sigma_bar must be > 0, got {self.sigma_bar}")
        if not (self.sigmaM > 0 and math.isfinite(self.sigmaM)):
            problems.append(f"sigmaM must be > 0, got {self.sigmaM}")
        if not (self.sigmaB > 0 and math.isfinite(self.sigmaB)):
            problems.append(f"sigmaB must be > 0, got {self.sigmaB}")
        if not (self.k >= 0 and math.isfinite(self.k)):
            problems.append(f"k must be >= 0, got {self.k}")
        if not (self.Lambda >= 0 and math.isfinite(self.Lambda)):
            problems.append(f"Lambda must be >= 0, got {self.Lambda}")
        if not math.isfinite(self.mu_bar):
            problems.append(f"mu_bar must be finite, got {self.mu_bar}")
        if not math.isfinite(self.muM):
            problems.append(f"muM must be finite, got {self.muM}")
        if problems:
            raise ParameterError(problems)


@dataclass
class BubblePath:
    """One realized bubble path on the simulation grid.

    ``beta``, ``mu``, ``M`` have length n_steps+1 (grid points); ``dbeta`` holds
    the realized increments (length n_steps).  ``tau`` is the detected burst
    time, or None if the policy never triggered before the horizon.
    """

    dt: float
    beta: np.ndarray
    mu: np.ndarray
    M: np.ndarray
    dbeta: np.ndarray
    tau: float | None

    @property
    def tau_index(self) -> int | None:
        return None if self.tau is None else int(round(self.tau / self.dt))


def step_illiquidity(M_t, dW3, dt: float, p: BubbleParams):
    """Exact GBM update M * exp((muM - sigmaM^2/2) dt + sigmaM dW3)."""
    if dt <= 0:
        raise InvalidInputError(f"dt must be > 0, got {dt}")
    M_arr = np.asarray(M_t, dtype=float)
    if np.any(M_arr <= 0) or not np.all(np.isfinite(M_arr)):
        raise InvalidStateError("illiquidity must be positive and finite")
    out = M_arr * np.exp((p.muM - 0.5 * p.sigmaM**2) * dt + p.sigmaM * np.asarray(dW3, dtype=float))
    return float(out) if np.ndim(M_t) == 0 and np.ndim(dW3) == 0 else out


def bubble_volatility(M_t, p: BubbleParams):
    if p.vol_mode == VOL_CONSTANT:
        return p.sigmaB if np.ndim(M_t) == 0 else np.full_like(np.asarray(M_t, dtype=float), p.sigmaB)
    return 2.0 * p.sigma_bar * p.Lambda * np.asarray(M_t, dtype=float)


def step_bubble(beta_t, M_t, dW_B, dt: float, p: BubbleParams, post_burst=False):
    """One Euler step of beta; returns (beta_next, mu_t).

    mu_t = M_t * Lambda * (-k*beta_t + 2*mu_bar_eff), with mu_bar_eff = mu_bar
    before the burst and 0 after it.
    """
    if dt <= 0:
        raise InvalidInputError(f"dt must be > 0, got {dt}")
    beta_arr = np.asarray(beta_t, dtype=float)
    M_arr = np.asarray(M_t, dtype=float)
    mu_bar_eff = np.where(np.asarray(post_burst, dtype=bool), 0.0, p.mu_bar)
    mu = M_arr * p.Lambda * (-p.k * beta_arr + 2.0 * mu_bar_eff)
    sigma = bubble_volatility(M_arr, p)
    beta_next = beta_arr + mu * dt + sigma * np.asarray(dW_B, dtype=float)
    scalar = np.ndim(beta_t) == 0 and np.ndim(M_t) == 0 and np.ndim(dW_B) == 0
    if scalar:
        return float(beta_next), float(mu)
    return beta_next, mu


def detect_burst(path: "BubblePath | np.ndarray", policy: BurstPolicy, dt: float | None = None):
    """Burst time of a (possibly in-progress) beta path, or None.

    The rule is a stopping time: its value at t depends only on the path up to t.
    """
    if isinstance(path, BubblePath):
        beta = path.beta
        dt = path.dt
    else:
        beta = np.asarray(path, dtype=float)
        if dt is None:
            raise InvalidInputError("dt required when passing a bare beta series")
    if policy.kind == DETERMINISTIC:
        idx = int(round(policy.t_burst / dt))
        if idx < 1 or idx > len(beta) - 1:
            return None
        return idx * dt
    runmax = np.maximum.accumulate(beta)
    trigger = (runmax > policy.beta_star) & (beta <= policy.q * runmax)
    trigger[0] = False  # tau lies in (0, horizon]
    hits = np.nonzero(trigger)[0]
    if hits.size == 0:
        return None
    return int(hits[0]) * dt


def counterfactual_beta(beta_path: BubblePath, tau: float, ratio: float) -> np.ndarray:
    """Increment series of the counterfactual shock: 0 before tau, ratio*dbeta from tau on.

    ``ratio`` is the monitored bank's robustness ratio between the paired
    no-bubble and bubble runs at tau, computed by the caller.
    """
    if not math.isfinite(ratio):
        raise DegenerateRatioError(f"shock ratio must be finite, got {ratio}")
    tau_idx = int(round(tau / beta_path.dt))
    if tau_idx < 0 or tau_idx > len(beta_path.dbeta):
        raise InvalidInputError(f"tau={tau} outside the path grid")
    out = np.zeros_like(beta_path.dbeta)
    out[tau_idx:] = ratio * beta_path.dbeta[tau_idx:]
    return out


def simulate_bubble_paths(
    p: BubbleParams,
    n_steps: int,
    dt: float,
    dW_B1: np.ndarray,
    dW_B3: np.ndarray,
    policy: BurstPolicy | None = None,
) -> dict:
    """Simulate beta/mu/M for a batch of paths with online burst detection.

    ``dW_B1`` and ``dW_B3`` have shape (n_steps, n_paths).  Returns arrays
    ``beta``/``mu``/``M`` of shape (n_steps+1, n_paths), increments ``dbeta``
    of shape (n_steps, n_paths), and ``tau_idx`` (n_paths,) with -1 where the
    policy never triggered.  Burst state affects increments from tau onwards.
    """
    if policy is None:
        policy = p.burst
    n_paths = dW_B1.shape[1]
    beta = np.zeros((n_steps + 1, n_paths))
    mu = np.zeros((n_steps + 1, n_paths))
    M = np.empty((n_steps + 1, n_paths))
    dbeta = np.empty((n_steps, n_paths))
    M[0] = p.M0
    tau_idx = np.full(n_paths, -1, dtype=np.int64)
    burst = np.zeros(n_paths, dtype=bool)
    runmax = np.zeros(n_paths)

    det_idx = None
    if policy.kind == DETERMINISTIC:
        det_idx = int(round(policy.t_burst / dt))
        if det_idx < 1 or det_idx > n_steps:
            raise ParameterError([f"burst t must lie on the grid within (0, horizon), got {policy.t_burst}"])

    gbm_drift = (p.muM - 0.5 * p.sigmaM**2) * dt
    for s in range(n_steps):
        if det_idx is not None:
            if s == det_idx:
                burst[:] = True
                tau_idx[:] = det_idx
        else:
            np.maximum(runmax, beta[s], out=runmax)
            if s >= 1:
                newly = (~burst) & (runmax > policy.beta_star) & (beta[s] <= policy.q * runmax)
                if np.any(newly):
                    burst |= newly
                    tau_idx[newly] = s
        mu_bar_eff = np.where(burst, 0.0, p.mu_bar)
        mu[s] = M[s] * p.Lambda * (-p.k * beta[s] + 2.0 * mu_bar_eff)
        sigma = p.sigmaB if p.vol_mode == VOL_CONSTANT else 2.0 * p.sigma_bar * p.Lambda * M[s]
        dbeta[s] = mu[s] * dt + sigma * dW_B1[s]
        beta[s + 1] = beta[s] + dbeta[s]
        M[s + 1] = M[s] * np.exp(gbm_drift + p.sigmaM * dW_B3[s])

    # Final grid point: detection and mu for completeness of the recorded series.
    s = n_steps
    if det_idx is not None and s == det_idx:
        burst[:] = True
        tau_idx[:] = det_idx
    elif det_idx is None:
        np.maximum(runmax, beta[s], out=runmax)
        newly = (~burst) & (runmax > policy.beta_star) & (beta[s] <= policy.q * runmax)
        burst |= newly
        tau_idx[newly] = s
    mu[s] = M[s] * p.Lambda * (-p.k * beta[s] + 2.0 * np.where(burst, 0.0, p.mu_bar))

    return {"beta": beta, "mu": mu, "M": M, "dbeta": dbeta, "tau_idx": tau_idx}


def single_bubble_path(
    p: BubbleParams,
    n_steps: int,
    dt: float,
    dW_B1: np.ndarray,
    dW_B3: np.ndarray,
    policy: BurstPolicy | None = None,
) -> BubblePath:
    """Single-path convenience wrapper around :func:`simulate_bubble_paths`."""
    res = simulate_bubble_paths(p, n_steps, dt, dW_B1[:, None], dW_B3[:, None], policy)
    ti = int(res["tau_idx"][0])
    return BubblePath(
        dt=dt,
        beta=res["beta"][:, 0],
        mu=res["mu"][:, 0],
        M=res["M"][:, 0],
        dbeta=res["dbeta"][:, 0],
        tau=None if ti < 0 else ti * dt,
    )
