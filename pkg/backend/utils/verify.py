"""
Trace Certificates
Checks that a minimizing-movements Trace behaves like an energy solution:
stability, the dissipation inequality and balance, the Grönwall/BV bound,
dynamic slope statistics, jump structure and regularity proxies.

Every check is a pure function of the Trace; residuals are nondimensional.
"""

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import ndimage

from utils.errors import ConfigError
from utils.field import SLOPE_FIT, boundary_slope_samples, slope_field
from utils.geometry import (
    HysteresisParams, Mask, connected_components, diss, dry_cells, free_boundary,
    measure, perimeter,
)
from utils.minmove import Trace, is_local_minimizer

logger = logging.getLogger(__name__)

TOL_STABILITY = 0.15
TOL_DISSIPATION = 1e-6
TOL_BALANCE = 0.05
TOL_GRONWALL = 1e-6
TOL_DYNAMIC = 0.15
DYNAMIC_QUANTILE = 0.9
JUMP_THRESHOLD_CELLS = 10
ALL_PAIRS_LIMIT = 2000
DENSITY_C = 0.1
LIPSCHITZ_FACTOR = 1.2
NONDEGENERACY_FACTOR = 0.5
BALL_CELLS = 4


# ============================================================
# Types
# ============================================================

@dataclass
class Certificate:
    """Outcome of one check; ``passed`` iff ``worst_residual <= tolerance``."""
    name: str
    passed: bool
    worst_residual: float
    tolerance: float
    argmax_step: Optional[int] = None
    series: List[float] = field(default_factory=list)
    notes: Dict[str, Any] = field(default_factory=dict)
    vacuous: bool = False

    def to_json(self, series_path: Optional[str] = None) -> dict:
        return {
            "name": self.name,
            "pass": self.passed,
            "tolerance": self.tolerance,
            "worst_residual": self.worst_residual,
            "argmax_step": self.argmax_step,
            "vacuous": self.vacuous,
            "series_path": series_path,
            "notes": _jsonable(self.notes),
        }

    def series_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"step": np.arange(len(self.series)), "residual": self.series})

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        if self.vacuous:
            status += " (vacuous)"
        where = "" if self.argmax_step is None else f" at step {self.argmax_step}"
        return (f"{self.name}: {status} worst={self.worst_residual:.3e} "
                f"tol={self.tolerance:.3e}{where}")


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def _certificate(name: str, series: Sequence[float], tolerance: float,
                 notes: Optional[dict] = None, vacuous: bool = False) -> Certificate:
    series = [float(v) for v in series]
    if series:
        argmax = int(np.argmax(series))
        worst = series[argmax]
    else:
        argmax, worst = None, 0.0
    return Certificate(name=name, passed=bool(worst <= tolerance), worst_residual=worst,
                       tolerance=tolerance, argmax_step=argmax, series=series,
                       notes=notes or {}, vacuous=vacuous)


class ComponentRelation(enum.Enum):
    EQUAL = '='
    GROWS = '⊆'          # left ⊆ right
    RECEDES = '⊇'        # left ⊇ right
    INCOMPARABLE = 'incomparable'


@dataclass
class JumpRecord:
    index: int
    t: float
    left_mask: Mask
    right_mask: Mask
    measure: float
    per_component_ordering: List[Tuple[Mask, ComponentRelation]]
    right_is_minimizer: bool
    right_stable: bool

    @property
    def monotone(self) -> bool:
        return all(rel is not ComponentRelation.INCOMPARABLE
                   for _, rel in self.per_component_ordering)

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "t": self.t,
            "measure": self.measure,
            "components": [{"cells": comp.count(), "relation": rel.value}
                           for comp, rel in self.per_component_ordering],
            "right_is_minimizer": self.right_is_minimizer,
            "right_stable": self.right_stable,
        }


# ============================================================
# Trace arrays
# ============================================================

def _series(trace: Trace):
    F = np.array([r.F for r in trace.records])
    J = np.array([r.energy.j_energy for r in trace.records])
    D = np.array([r.energy.dirichlet for r in trace.records])
    P = np.array([r.energy.pressure for r in trace.records])
    return F, J, D, P


def _changing_cells(trace: Trace) -> np.ndarray:
    """(steps × cells) 0/1 matrix restricted to cells that change along the trace."""
    stack = np.array([r.mask.cells.ravel() for r in trace.records])
    varying = np.flatnonzero(stack.any(axis=0) & ~stack.all(axis=0))
    return stack[:, varying].astype(np.float64)


def _step_diss(trace: Trace) -> np.ndarray:
    masks = trace.masks
    return np.array([diss(a, b, trace.params, trace.domain) for a, b in zip(masks[:-1], masks[1:])])


# ============================================================
# Stability
# ============================================================

def stability_violations(slope2: np.ndarray, params: HysteresisParams) -> np.ndarray:
    """Distance of each slope² sample from the pinning interval (0 inside)."""
    return np.maximum.reduce([params.q_minus - slope2, slope2 - params.q_plus,
                              np.zeros_like(slope2)])


def check_stability(trace: Trace, tol: float = TOL_STABILITY,
                    method: str = SLOPE_FIT) -> Certificate:
    """Every free boundary slope² within the pinning interval widened by ``tol``."""
    params, domain = trace.params, trace.domain
    series, counts, medians, total = [], [], [], 0
    for record in trace.records:
        samples = boundary_slope_samples(record.profile, domain, method)
        s2 = np.array([s.slope ** 2 for s in samples])
        total += len(s2)
        if len(s2):
            v = stability_violations(s2, params)
            series.append(float(v.max()))
            counts.append(int(np.count_nonzero(v > tol)))
            medians.append(float(np.median(s2)))
        else:
            series.append(0.0)
            counts.append(0)
            medians.append(float('nan'))
    notes = {
        "interval": [params.q_minus, params.q_plus],
        "slope_method": method,
        "samples": total,
        "violation_count": int(sum(counts)),
        "violations_per_step": counts,
        "median_slope2": medians,
    }
    return _certificate("stability", series, tol, notes)


# ============================================================
# Dissipation inequality, balance and Grönwall bound
# ============================================================

def _left_point_work(F: np.ndarray, D: np.ndarray) -> np.ndarray:
    """((F_{m+1}/F_m)² - 1)·D_m = 2ΔF_m·P_m·(1 + g_m) with g_m = (F_{m+1}/F_m - 1)/2."""
    ratio = F[1:] / F[:-1]
    return (ratio * ratio - 1.0) * D[:-1]


def check_dissipation_inequality(trace: Trace, tol: float = TOL_DISSIPATION) -> Certificate:
    """J_k - J_l + work(k, l) >= Diss(Ω_k, Ω_l) for every pair k < l.

    Residuals are (Diss - J_k + J_l - work) / J_0; work uses the step
    correction g_m of the one-step inequality.
    """
    n = len(trace)
    F, J, D, _ = _series(trace)
    if n < 2:
        return _certificate("dissipation_inequality", [0.0] * n, tol, {"pairs": 0}, vacuous=True)
    params = trace.params
    hd = trace.domain.cell_volume
    scale = J[0]
    work = np.concatenate([[0.0], np.cumsum(_left_point_work(F, D))])

    M = _changing_cells(trace)
    if n <= ALL_PAIRS_LIMIT:
        gained = (1.0 - M) @ M.T       # [k, l] = #(Ω_l ∖ Ω_k)
        lost = M @ (1.0 - M).T         # [k, l] = #(Ω_k ∖ Ω_l)
        dissipation = (params.mu_plus * gained + params.mu_minus * lost) * hd
        resid = (dissipation - (J[:, None] - J[None, :] + work[None, :] - work[:, None])) / scale
        upper = np.triu(np.ones((n, n), dtype=bool), k=1)
        resid = np.where(upper, resid, -np.inf)
        per_step = np.concatenate([[0.0], resid.max(axis=0)[1:]])
        adjacent = np.diagonal(resid, offset=1)
        k_star, l_star = np.unravel_index(int(np.argmax(resid)), resid.shape)
        pairs = n * (n - 1) // 2
    else:
        steps = _step_diss(trace)
        adjacent = (steps - (J[:-1] - J[1:] + np.diff(work))) / scale
        from_start = np.array([diss(trace[0].mask, r.mask, params, trace.domain)
                               for r in trace.records[1:]])
        first = (from_start - (J[0] - J[1:] + work[1:])) / scale
        per_step = np.concatenate([[0.0], np.maximum(adjacent, first)])
        k_star, l_star = None, int(np.argmax(per_step))
        pairs = 2 * (n - 1)

    ratio = F[1:] / F[:-1]
    g = (ratio - 1.0) / 2.0
    g_bound = math.expm1(float(np.max(np.abs(np.log(ratio)))))
    notes = {
        "pairs": pairs,
        "worst_pair": None if k_star is None else [int(k_star), int(l_star)],
        "adjacent_worst": float(np.max(adjacent)),
        "g_max": float(np.max(np.abs(g))),
        "g_bound": g_bound,
    }
    cert = _certificate("dissipation_inequality", per_step, tol, notes)
    if cert.argmax_step is not None and l_star is not None:
        cert.argmax_step = int(l_star)
    return cert


def _is_monotone(trace: Trace) -> bool:
    masks = trace.masks
    growing = all(a <= b for a, b in zip(masks[:-1], masks[1:]))
    shrinking = all(a >= b for a, b in zip(masks[:-1], masks[1:]))
    return growing or shrinking


def check_energy_balance(trace: Trace, tol: float = TOL_BALANCE) -> Certificate:
    """|J_0 - J_k + Σ 2ΔF·P̄ - DissBar_k| relative to max(J_0, DissBar_N), for every k.

    P̄ is the trapezoidal average; DissBar uses the step partition, so on a
    non-monotone trace it is a lower bound for the total variation.
    """
    n = len(trace)
    F, J, _, P = _series(trace)
    if n < 2:
        return _certificate("energy_balance", [0.0] * n, tol, {}, vacuous=True)
    steps = _step_diss(trace)
    dissbar = np.concatenate([[0.0], np.cumsum(steps)])
    work = np.concatenate([[0.0], np.cumsum(np.diff(F) * (P[:-1] + P[1:]))])
    scale = max(J[0], dissbar[-1])
    residual = np.abs(J[0] - J + work - dissbar) / scale

    monotone = _is_monotone(trace)
    notes = {
        "dissbar": float(dissbar[-1]),
        "work": float(work[-1]),
        "energy_drop": float(J[0] - J[-1]),
        "monotone": monotone,
        "one_sided": not monotone,
    }
    cert = _certificate("energy_balance", residual, tol, notes)
    if monotone:
        direct = diss(trace[0].mask, trace[-1].mask, trace.params, trace.domain)
        telescopes = abs(direct - dissbar[-1]) <= 1e-9 * max(1.0, scale)
        notes["telescoping"] = bool(telescopes)
        if not telescopes:
            logger.warning("DissBar %.6g does not telescope to Diss(first, last) = %.6g",
                           dissbar[-1], direct)
    return cert


def check_gronwall(trace: Trace, tol: float = TOL_GRONWALL) -> Certificate:
    """J_k + (μ₊∧μ₋)·BV_k <= J_0·Π max((F_{m+1}/F_m)², 1), relative to J_0.

    The product equals F_k²/F_0² whenever F is non-decreasing.
    """
    n = len(trace)
    F, J, _, _ = _series(trace)
    hd = trace.domain.cell_volume
    masks = trace.masks
    jumps = np.array([(a ^ b).count() * hd for a, b in zip(masks[:-1], masks[1:])])
    bv = np.concatenate([[0.0], np.cumsum(jumps)])
    growth = np.concatenate([[1.0], np.cumprod(np.maximum((F[1:] / F[:-1]) ** 2, 1.0))])
    bound = J[0] * growth
    lhs = J + trace.params.mu_min * bv
    residual = (lhs - bound) / J[0]
    literal = (lhs - J[0] * (F / F[0]) ** 2) / J[0]
    notes = {
        "bv_series": bv.tolist(),
        "bound_series": bound.tolist(),
        "literal_bound_holds": bool(np.all(literal <= tol)),
    }
    return _certificate("gronwall", residual if n else [], tol, notes)


# ============================================================
# Dynamic slope condition
# ============================================================

def _neighborhood(cells: np.ndarray) -> np.ndarray:
    return ndimage.maximum_filter(cells.astype(np.uint8), size=3, mode='constant') > 0


def check_dynamic_slope(trace: Trace, tol: float = TOL_DYNAMIC,
                        quantile: float = DYNAMIC_QUANTILE,
                        method: str = SLOPE_FIT) -> Certificate:
    """slope² ≈ 1+μ₊ where the boundary advanced and ≈ 1−μ₋ where it receded.

    A free boundary cell of state k+1 is advancing if cells were wetted in
    its 3×3 neighborhood between k and k+1, receding if cells were dried
    there. Passes when the ``quantile`` of |slope²/Q - 1| is at most ``tol``
    for each nonempty class.
    """
    params, domain = trace.params, trace.domain
    advancing, receding, series = [], [], [0.0]
    for left, right in zip(trace.records[:-1], trace.records[1:]):
        a, b = left.mask.cells, right.mask.cells
        gained, lost = b & ~a, a & ~b
        if not gained.any() and not lost.any():
            series.append(0.0)
            continue
        ring = free_boundary(b, domain)
        near_gain, near_loss = _neighborhood(gained), _neighborhood(lost)
        s2 = slope_field(right.profile.values, b, domain, method) ** 2
        adv = np.abs(s2[ring & near_gain & ~near_loss] / params.q_plus - 1.0)
        rec = np.abs(s2[ring & near_loss & ~near_gain] / params.q_minus - 1.0)
        advancing.append(adv)
        receding.append(rec)
        both = np.concatenate([adv, rec])
        series.append(float(np.quantile(both, quantile, method='inverted_cdf')) if both.size else 0.0)

    adv = np.concatenate(advancing) if advancing else np.zeros(0)
    rec = np.concatenate(receding) if receding else np.zeros(0)
    if adv.size == 0 and rec.size == 0:
        return _certificate("dynamic_slope", [0.0] * len(trace), tol,
                            {"advancing_samples": 0, "receding_samples": 0}, vacuous=True)

    def _stats(values):
        if not values.size:
            return None, None, None
        return (float(np.quantile(values, quantile, method='inverted_cdf')),
                float(np.mean(values <= tol)), float(np.median(values)))

    adv_q, adv_frac, adv_med = _stats(adv)
    rec_q, rec_frac, rec_med = _stats(rec)
    worst = max(v for v in (adv_q, rec_q) if v is not None)
    notes = {
        "advancing_samples": int(adv.size),
        "receding_samples": int(rec.size),
        "advancing_quantile": adv_q,
        "receding_quantile": rec_q,
        "advancing_fraction_within": adv_frac,
        "receding_fraction_within": rec_frac,
        "advancing_median_deviation": adv_med,
        "receding_median_deviation": rec_med,
    }
    cert = _certificate("dynamic_slope", series, tol, notes)
    cert.worst_residual = worst
    cert.passed = worst <= tol
    return cert


# ============================================================
# Jumps
# ============================================================

def _relation(left: np.ndarray, right: np.ndarray) -> ComponentRelation:
    left_in_right = not (left & ~right).any()
    right_in_left = not (right & ~left).any()
    if left_in_right and right_in_left:
        return ComponentRelation.EQUAL
    if left_in_right:
        return ComponentRelation.GROWS
    if right_in_left:
        return ComponentRelation.RECEDES
    return ComponentRelation.INCOMPARABLE


def jump_report(trace: Trace, threshold: Optional[float] = None,
                tol_stability: float = TOL_STABILITY,
                check_minimality: bool = True,
                method: str = SLOPE_FIT) -> List[JumpRecord]:
    """Steps whose wet region changes by more than ``threshold`` (default 10 h^d)."""
    domain, params = trace.domain, trace.params
    if threshold is None:
        threshold = JUMP_THRESHOLD_CELLS * domain.cell_volume
    jumps = []
    for left, right in zip(trace.records[:-1], trace.records[1:]):
        changed = measure(left.mask ^ right.mask, domain)
        if changed <= threshold:
            continue
        union = left.mask | right.mask
        ordering = []
        for comp in connected_components(union, domain):
            ordering.append((comp, _relation(left.mask.cells & comp.cells,
                                             right.mask.cells & comp.cells)))
        samples = boundary_slope_samples(right.profile, domain, method)
        s2 = np.array([s.slope ** 2 for s in samples])
        stable = bool(not s2.size or stability_violations(s2, params).max() <= tol_stability)
        minimizer = True
        if check_minimality:
            minimizer = is_local_minimizer(left.mask, right.mask, right.F, domain, params)
        jumps.append(JumpRecord(index=right.index, t=right.t, left_mask=left.mask,
                                right_mask=right.mask, measure=changed,
                                per_component_ordering=ordering,
                                right_is_minimizer=minimizer, right_stable=stable))
        logger.info("jump at step %d (t=%.4g): %.4g changed, %s", right.index, right.t,
                    changed, ", ".join(rel.value for _, rel in ordering))
    return jumps


def jump_certificate(jumps: List[JumpRecord], n_steps: int,
                     expected: Optional[int] = None) -> Certificate:
    """Every jump monotone per component with a stable, locally minimal right state."""
    series = [0.0] * n_steps
    for j in jumps:
        bad = (not j.monotone) + (not j.right_stable) + (not j.right_is_minimizer)
        if 0 <= j.index < n_steps:
            series[j.index] = float(bad)
    notes = {"count": len(jumps), "expected": expected, "jumps": [j.to_dict() for j in jumps]}
    cert = _certificate("jumps", series, 0.0, notes)
    if expected is not None and len(jumps) != expected:
        # a missing or extra jump counts as one violation each
        cert.worst_residual = max(cert.worst_residual, float(abs(len(jumps) - expected)))
        cert.passed = False
    return cert


# ============================================================
# Regularity proxies
# ============================================================

def _ball(radius_cells: int, dim: int) -> np.ndarray:
    r = radius_cells
    grids = np.meshgrid(*([np.arange(-r, r + 1)] * dim), indexing='ij')
    return sum(g * g for g in grids) < r * r


def regularity_report(trace: Trace, density_c: float = DENSITY_C,
                      lipschitz_bound: Optional[float] = None,
                      nondegeneracy_floor: Optional[float] = None,
                      radius_cells: int = BALL_CELLS) -> Certificate:
    """Lipschitz, nondegeneracy and density proxies per state, plus perimeter.

    - Lipschitz: max u/dist over wet cells within r of the dry set.
    - Nondegeneracy: min over free boundary cells of sup_{B_r} u / r.
    - Density: wet fraction of B_r around free boundary cells, in [c, 1-c].
    r = ``radius_cells``·h; the residual is the largest relative violation.
    """
    params, domain = trace.params, trace.domain
    h = domain.h
    r = radius_cells * h
    lip_bound = lipschitz_bound if lipschitz_bound is not None else \
        LIPSCHITZ_FACTOR * math.sqrt(params.q_plus)
    floor = nondegeneracy_floor if nondegeneracy_floor is not None else \
        NONDEGENERACY_FACTOR * math.sqrt(params.q_minus)
    ball = _ball(radius_cells, domain.dim)
    open_cells = (~domain.obstacle).astype(np.float64)
    open_count = ndimage.convolve(open_cells, ball.astype(np.float64), mode='constant')

    series, lips, nondegs, dens_lo, dens_hi, perims = [], [], [], [], [], []
    for record in trace.records:
        wet = record.mask.cells
        u = record.profile.values
        dist = ndimage.distance_transform_edt(~dry_cells(wet, domain), sampling=h)
        band = wet & (dist > 0) & (dist <= r)
        lip = float(np.max(u[band] / dist[band])) if band.any() else 0.0

        ring = free_boundary(wet, domain)
        if ring.any():
            sup = ndimage.maximum_filter(u, footprint=ball, mode='constant')
            nondeg = float(np.min(sup[ring])) / r
            wet_count = ndimage.convolve(wet.astype(np.float64), ball.astype(np.float64),
                                         mode='constant')
            frac = wet_count[ring] / open_count[ring]
            lo, hi = float(frac.min()), float(frac.max())
        else:
            nondeg, lo, hi = float('inf'), 0.5, 0.5

        violation = max(lip / lip_bound - 1.0,
                        1.0 - nondeg / floor if math.isfinite(nondeg) else 0.0,
                        (density_c - lo) / density_c,
                        (hi - (1.0 - density_c)) / density_c,
                        0.0)
        series.append(violation)
        lips.append(lip)
        nondegs.append(nondeg)
        dens_lo.append(lo)
        dens_hi.append(hi)
        perims.append(perimeter(record.mask, domain))

    notes = {
        "lipschitz_bound": lip_bound,
        "nondegeneracy_floor": floor,
        "density_c": density_c,
        "lipschitz": lips,
        "nondegeneracy": nondegs,
        "density_min": dens_lo,
        "density_max": dens_hi,
        "perimeter": perims,
    }
    return _certificate("regularity", series, 0.0, notes)


# ============================================================
# Driver
# ============================================================

CERTIFICATE_NAMES = ('stability', 'dissipation_inequality', 'energy_balance', 'gronwall',
                     'dynamic_slope', 'regularity', 'jumps')


@dataclass
class VerifySettings:
    tol_stability: float = TOL_STABILITY
    tol_dissipation: float = TOL_DISSIPATION
    tol_balance: float = TOL_BALANCE
    tol_gronwall: float = TOL_GRONWALL
    tol_dynamic: float = TOL_DYNAMIC
    jump_threshold_cells: float = JUMP_THRESHOLD_CELLS
    expected_jumps: Optional[int] = None
    density_c: float = DENSITY_C
    slope_method: str = SLOPE_FIT


def verify_trace(trace: Trace, names: Sequence[str] = CERTIFICATE_NAMES,
                 settings: Optional[VerifySettings] = None
                 ) -> Tuple[Dict[str, Certificate], List[JumpRecord]]:
    """Run the named certificates; returns them by name plus the jump records."""
    settings = settings or VerifySettings()
    unknown = [n for n in names if n not in CERTIFICATE_NAMES]
    if unknown:
        raise ConfigError(f"unknown certificates: {', '.join(unknown)}")
    results: Dict[str, Certificate] = {}
    jumps: List[JumpRecord] = []
    for name in names:
        if name == 'stability':
            results[name] = check_stability(trace, settings.tol_stability,
                                            method=settings.slope_method)
        elif name == 'dissipation_inequality':
            results[name] = check_dissipation_inequality(trace, settings.tol_dissipation)
        elif name == 'energy_balance':
            results[name] = check_energy_balance(trace, settings.tol_balance)
        elif name == 'gronwall':
            results[name] = check_gronwall(trace, settings.tol_gronwall)
        elif name == 'dynamic_slope':
            results[name] = check_dynamic_slope(trace, settings.tol_dynamic,
                                                method=settings.slope_method)
        elif name == 'regularity':
            results[name] = regularity_report(trace, density_c=settings.density_c)
        elif name == 'jumps':
            threshold = settings.jump_threshold_cells * trace.domain.cell_volume
            jumps = jump_report(trace, threshold, settings.tol_stability,
                                method=settings.slope_method)
            results[name] = jump_certificate(jumps, len(trace), settings.expected_jumps)
        logger.info(results[name].summary())
    return results, jumps
