"""
Radial Ground Truth
Closed-form droplets around the unit-disk obstacle in the plane, the
hysteresis band between the advancing and receding branches, and the
half-line optimum. These are the oracles the grid simulator is checked against.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import optimize

from utils.errors import ConfigError
from utils.geometry import HysteresisParams

logger = logging.getLogger(__name__)

PINNED = 'pinned'
ADVANCING = 'advancing'
RECEDING = 'receding'

EVOLVE_COLUMNS = ('t', 'F', 'R', 'lambda', 'regime')


@dataclass(frozen=True)
class RadialState:
    R: float
    F: float
    lam: float
    regime: str = PINNED

    def as_dict(self) -> dict:
        return {"R": self.R, "F": self.F, "lambda": self.lam, "regime": self.regime}


# ============================================================
# ζ(s): the root R > 1 of R ln R = s
# ============================================================

def _zeta_guess(s):
    return 1.0 + s / (1.0 + np.log1p(s))


def zeta(s: float) -> float:
    """Unique R > 1 with R ln R = s.

    Newton from 1 + s/(1 + ln(1+s)); falls back to Brent's method on the
    bracket [1, 1 + s + sqrt(2s)] if Newton leaves it or stalls.
    """
    s = float(s)
    if not np.isfinite(s) or s <= 0:
        raise ConfigError(f"zeta needs s > 0, got {s}")
    upper = 1.0 + s + math.sqrt(2.0 * s)

    def f(R):
        return R * math.log(R) - s

    def fprime(R):
        return math.log(R) + 1.0

    try:
        sol = optimize.root_scalar(f, x0=float(_zeta_guess(s)), fprime=fprime,
                                   method='newton', xtol=1e-14, rtol=1e-14, maxiter=60)
        if sol.converged and 1.0 < sol.root <= upper:
            return float(sol.root)
    except (ValueError, ZeroDivisionError, OverflowError):
        pass
    logger.debug("zeta(%g): Newton failed, using the bracket", s)
    return float(optimize.brentq(f, 1.0, upper, xtol=1e-15, rtol=4 * np.finfo(float).eps))


def zeta_many(s: Sequence[float]) -> np.ndarray:
    """Vectorized zeta for arrays of s > 0."""
    s = np.asarray(s, dtype=np.float64)
    if np.any(~np.isfinite(s)) or np.any(s <= 0):
        raise ConfigError("zeta needs s > 0")
    roots = optimize.newton(lambda R: R * np.log(R) - s, _zeta_guess(s),
                            fprime=lambda R: np.log(R) + 1.0, tol=1e-12, maxiter=60)
    return np.asarray(roots, dtype=np.float64)


# ============================================================
# Profiles and the hysteresis band
# ============================================================

def radial_profile(lam: float, F: float) -> Tuple[float, Callable]:
    """Support radius R = ζ(F/λ) and u(r) = F(1 - ln r / ln R), zero for r >= R."""
    if lam <= 0 or F <= 0:
        raise ConfigError("radial_profile needs lambda > 0 and F > 0")
    R = zeta(F / lam)
    log_R = math.log(R)

    def u(r):
        r = np.asarray(r, dtype=np.float64)
        with np.errstate(divide='ignore'):
            values = F * (1.0 - np.log(r) / log_R)
        return np.where(r >= R, 0.0, values)

    return R, u


def boundary_slope(R: float, F: float) -> float:
    """|u'(R)| = F / (R ln R) of the radial profile with support radius R."""
    return F / (R * math.log(R))


def gamma_plus(F: float, params: HysteresisParams) -> float:
    """Advancing branch: the radius whose boundary slope² is 1 + μ₊."""
    return zeta(F / math.sqrt(params.q_plus))


def gamma_minus(F: float, params: HysteresisParams) -> float:
    """Receding branch: the radius whose boundary slope² is 1 − μ₋."""
    return zeta(F / math.sqrt(params.q_minus))


def sigma(params: HysteresisParams) -> float:
    """Slope ratio ((1+μ₊)/(1−μ₋))^(1/2) between the two branches."""
    return math.sqrt(params.q_plus / params.q_minus)


def in_band(state: RadialState, params: HysteresisParams) -> bool:
    """True iff the state lies in the closed band between the branches.

    The band is the pinned region S; ``in_region_S`` names the same test.
    """
    lo, hi = gamma_plus(state.F, params), gamma_minus(state.F, params)
    slack = 1e-12 * hi
    return lo - slack <= state.R <= hi + slack


in_region_S = in_band


def radial_energy(state: RadialState) -> Tuple[float, float, float]:
    """(Dirichlet energy 2πF²/ln R, wet area π(R²-1), J)."""
    dirichlet = 2.0 * math.pi * state.F ** 2 / math.log(state.R)
    volume = math.pi * (state.R ** 2 - 1.0)
    return dirichlet, volume, dirichlet + volume


def equivalent_radius(area: float, obstacle_radius: float = 1.0, droplets: int = 1) -> float:
    """Radius of an annulus around the obstacle with the given wet area per droplet."""
    return math.sqrt(area / (math.pi * droplets) + obstacle_radius ** 2)


# ============================================================
# Branch following
# ============================================================

def radial_evolve(schedule, R0: float, params: HysteresisParams) -> List[RadialState]:
    """Exact radial evolution along a Schedule (or a plain sequence F_0, F_1, ...).

    The radius moves only when the state would leave the band: up to the
    advancing branch, down to the receding branch, otherwise pinned.
    """
    forcing = [float(F) for F in getattr(schedule, "forcing", schedule)]
    if not forcing:
        return []
    F0 = forcing[0]
    if R0 <= 1.0:
        raise ConfigError(f"R0 must exceed the obstacle radius 1, got {R0}")
    first = RadialState(R=R0, F=F0, lam=boundary_slope(R0, F0))
    if not in_band(first, params):
        raise ConfigError(
            f"initial state (R0={R0:.6g}, F={F0:.6g}) lies outside the band "
            f"[{gamma_plus(F0, params):.6g}, {gamma_minus(F0, params):.6g}]")

    states = [first]
    R = R0
    for F in forcing[1:]:
        advancing, receding = gamma_plus(F, params), gamma_minus(F, params)
        if advancing > R:
            R = advancing
            states.append(RadialState(R, F, math.sqrt(params.q_plus), ADVANCING))
        elif receding < R:
            R = receding
            states.append(RadialState(R, F, math.sqrt(params.q_minus), RECEDING))
        else:
            states.append(RadialState(R, F, boundary_slope(R, F), PINNED))
    return states


def evolve_frame(times: Sequence[float], states: Sequence[RadialState]) -> pd.DataFrame:
    return pd.DataFrame({
        't': list(times),
        'F': [s.F for s in states],
        'R': [s.R for s in states],
        'lambda': [s.lam for s in states],
        'regime': [s.regime for s in states],
    }, columns=list(EVOLVE_COLUMNS))


def clamp_to_band(R: float, F: float, params: HysteresisParams) -> float:
    return min(max(R, gamma_plus(F, params)), gamma_minus(F, params))


# ============================================================
# Half-line oracle
# ============================================================

def halfline_optimum(F: float, Q: float) -> float:
    """Minimizer R = F/√Q of F²/R + QR."""
    if F <= 0 or Q <= 0:
        raise ConfigError("halfline_optimum needs F > 0 and Q > 0")
    return F / math.sqrt(Q)


def halfline_energy(F: float, Q: float) -> float:
    """Optimal value 2F√Q of F²/R + QR."""
    if F <= 0 or Q <= 0:
        raise ConfigError("halfline_energy needs F > 0 and Q > 0")
    return 2.0 * F * math.sqrt(Q)
