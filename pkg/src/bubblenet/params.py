"""Model parameters, attachment-weight functions, and their numeric validation.

The attachment weight (``FitnessFn``) is the function applied to a bank's lagged
deviation from the network average; it must be Lipschitz, and so must x*f(x),
for the dynamics to be well posed.  Because the weight family is configurable,
the Lipschitz constants are estimated numerically on a user grid rather than
symbolically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ARCTAN",
    "CONSTANT",
    "FitnessFn",
    "NetworkParams",
    "InvalidInputError",
    "ParameterError",
    "eval_fitness",
    "eval_F",
    "estimate_lipschitz",
    "validate_params",
]

ARCTAN = "arctan"
CONSTANT = "constant"


class InvalidInputError(ValueError):
    """Raised when an evaluation input is non-finite or out of domain."""


class ParameterError(ValueError):
    """Raised when a parameter set violates its invariants.  Collects all violations."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class FitnessFn:
    """Attachment-weight function: ``1 + 2*arctan(x)/pi`` or a nonnegative constant.

    ``level`` is the constant's value; it is ignored for the arctan kind.
    """

    kind: str = ARCTAN
    level: float = 1.0

    def __post_init__(self):
        if self.kind not in (ARCTAN, CONSTANT):
            raise ParameterError([f"fitness kind must be '{ARCTAN}' or '{CONSTANT}', got {self.kind!r}"])
        if not math.isfinite(self.level):
            raise ParameterError(["fitness level must be finite"])
        if self.kind == CONSTANT and self.level < 0:
            raise ParameterError([f"constant fitness level must be >= 0, got {self.level}"])

    @staticmethod
    def arctan() -> "FitnessFn":
        return FitnessFn(ARCTAN)

    @staticmethod
    def constant(level: float = 1.0) -> "FitnessFn":
        return FitnessFn(CONSTANT, level)


def _fitness_values(f: FitnessFn, x: np.ndarray) -> np.ndarray:
    # No finiteness check: hot path used by the steppers on states that are
    # finite by construction.
    if f.kind == ARCTAN:
        return 1.0 + (2.0 / np.pi) * np.arctan(x)
    return np.full_like(x, f.level)


def eval_fitness(f: FitnessFn, x):
    """Weight f(x).  For the arctan kind the value lies strictly inside (0, 2)."""
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("fitness argument must be finite")
    out = _fitness_values(f, arr)
    return float(out) if np.ndim(x) == 0 else out


def eval_F(f: FitnessFn, x):
    """The Lipschitz product x*f(x)."""
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("argument must be finite")
    out = arr * _fitness_values(f, arr)
    return float(out) if np.ndim(x) == 0 else out


def estimate_lipschitz(f: FitnessFn, grid_halfwidth: float, grid_points: int) -> tuple[float, float]:
    """Upper estimates (K1, K2) of the Lipschitz constants of f and of x*f(x).

    Maximizes absolute difference quotients over all pairs of a symmetric grid
    of ``grid_points`` points on [-grid_halfwidth, grid_halfwidth].  K2 also
    bounds sup|f| on the grid, since |x f(x)| <= K2 |x|.
    """
    if grid_points < 3:
        raise InvalidInputError("grid_points must be >= 3")
    if not (grid_halfwidth > 0 and math.isfinite(grid_halfwidth)):
        raise InvalidInputError("grid_halfwidth must be positive and finite")
    x = np.linspace(-grid_halfwidth, grid_halfwidth, grid_points)
    fx = eval_fitness(f, x)
    Fx = x * fx
    ii, jj = np.triu_indices(grid_points, k=1)
    dx = x[jj] - x[ii]
    k1 = float(np.max(np.abs(fx[jj] - fx[ii]) / dx))
    k2 = float(np.max(np.abs(Fx[jj] - Fx[ii]) / dx))
    return k1, k2


@dataclass(frozen=True)
class NetworkParams:
    """Static configuration of the coupled-robustness system.

    ``delta`` (the investment-reaction lag) must be an exact integer multiple
    of ``dt``: lagged lookups always land on a stored grid point, so the
    delayed system is solved without interpolation.  ``rho0_core`` may be a
    single value shared by every core bank or one value per core bank.
    """

    n: int = 6
    m: int = 2
    lam: float = 1.0
    sigma1: float = 0.2
    sigma2: float = 0.2
    delta: float = 0.1
    rho0: float = 0.5
    rho0_core: float | tuple[float, ...] = 0.5
    f_P: FitnessFn = field(default_factory=FitnessFn.arctan)
    f_B: FitnessFn = field(default_factory=FitnessFn.arctan)
    dt: float = 1e-3
    horizon: float = 1.0

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    @property
    def lag_steps(self) -> int:
        return int(round(self.delta / self.dt))

    @property
    def n_streams(self) -> int:
        """Stream count of one driver block: W^1..W^n, W^{B,1}..W^{B,m}, B^1, B^2, B^3."""
        return self.n + self.m + 3

    def rho0_core_array(self) -> np.ndarray:
        if isinstance(self.rho0_core, (tuple, list)):
            return np.asarray(self.rho0_core, dtype=float)
        return np.full(self.m, float(self.rho0_core))


def _is_grid_multiple(value: float, dt: float) -> bool:
    ratio = value / dt
    return abs(ratio - round(ratio)) <= 1e-9 * max(1.0, abs(ratio))


def validate_params(p: NetworkParams) -> NetworkParams:
    """Return ``p`` unchanged if every invariant holds; otherwise raise ParameterError
    naming each violated field."""
    problems: list[str] = []
    if not isinstance(p.n, int) or p.n < 2:
        problems.append(f"n must be an integer >= 2, got {p.n}")
    if not isinstance(p.m, int) or p.m < 2:
        problems.append(f"m must be >= 2, got {p.m}")
    if not (p.lam > 0 and math.isfinite(p.lam)):
        problems.append(f"lambda must be > 0, got {p.lam}")
    if not (p.sigma1 > 0 and math.isfinite(p.sigma1)):
        problems.append(f"sigma1 must be > 0, got {p.sigma1}")
    if not (p.sigma2 > 0 and math.isfinite(p.sigma2)):
        problems.append(f"sigma2 must be > 0, got {p.sigma2}")
    if not (p.dt > 0 and math.isfinite(p.dt)):
        problems.append(f"dt must be > 0, got {p.dt}")
    if not (p.delta >= 0 and math.isfinite(p.delta)):
        problems.append(f"delta must be >= 0, got {p.delta}")
    if not (math.isfinite(p.horizon) and p.horizon >= p.delta):
        problems.append(f"horizon must be >= delta, got horizon={p.horizon}, delta={p.delta}")
    if p.dt > 0 and math.isfinite(p.dt):
        if p.delta > 0 and not _is_grid_multiple(p.delta, p.dt):
            problems.append(f"delta not multiple of dt (delta={p.delta}, dt={p.dt})")
        if p.horizon > 0 and not _is_grid_multiple(p.horizon, p.dt):
            problems.append(f"horizon not multiple of dt (horizon={p.horizon}, dt={p.dt})")
        if p.horizon <= 0:
            problems.append(f"horizon must be positive, got {p.horizon}")
    if not (math.isfinite(p.rho0) and p.rho0 > 0):
        problems.append(f"rho0 must be finite and > 0, got {p.rho0}")
    core0 = p.rho0_core if isinstance(p.rho0_core, (tuple, list)) else (p.rho0_core,)
    if isinstance(p.rho0_core, (tuple, list)) and isinstance(p.m, int) and len(core0) != p.m:
        problems.append(f"rho0_core must have length m={p.m}, got {len(core0)}")
    if not all(math.isfinite(v) for v in core0):
        problems.append("rho0_core entries must be finite")
    if not isinstance(p.f_P, FitnessFn):
        problems.append("f_P must be a FitnessFn")
    if not isinstance(p.f_B, FitnessFn):
        problems.append("f_B must be a FitnessFn")
    if problems:
        raise ParameterError(problems)
    return p
