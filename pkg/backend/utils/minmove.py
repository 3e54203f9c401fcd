"""
Minimizing Movements
One step of the implicit scheme  Ω_k ∈ argmin J(w) + Diss(Ω_{k-1}, Ω(w))
by deterministic local search, an exhaustive oracle for small instances,
and the time loop that turns a forcing schedule into a Trace.

Flip energies are exact: the masked Laplacian of the current wet set is
factorized once (sparse LU) and single flips as well as whole layers are
priced by Schur-complement updates, so no move is accepted on approximate
energies.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import ndimage
from scipy.sparse import linalg as spla

from utils.errors import (
    ConfigError, DomainTooSmallError, DropletError, GeometryError, OracleLimitError,
    SolverError, StepError,
)
from utils.field import (
    EnergyReport, Profile, assemble_system, energy_report, solve_harmonic,
)
from utils.geometry import (
    Domain, HysteresisParams, Mask, check_mask, diss, free_boundary, frontier,
    neighbor_count, shifted,
)

logger = logging.getLogger(__name__)

FLIP_TOL = 1e-10                 # strict-decrease threshold, relative to F²
MAX_ORACLE_CANDIDATES = 22
ORACLE_CHUNK = 1 << 14
MAX_SWEEPS = 10000
MAX_WINDOW_CELLS = 18            # one-sided windows up to this size are enumerated
WINDOW_DEPTH = 2
MAX_BRACKET_ROUNDS = 8

GROW_FIRST = 'grow_first'
SHRINK_FIRST = 'shrink_first'
GROW = 'grow'
SHRINK = 'shrink'


# ============================================================
# Types
# ============================================================

@dataclass(frozen=True, eq=False)
class StepResult:
    profile: Profile
    mask: Mask
    energy: EnergyReport
    augmented: float        # J + Diss(prev, mask)
    dissipation: float      # Diss(prev, mask)
    flips: int
    sweeps: int


@dataclass(frozen=True)
class Schedule:
    """Piecewise-linear forcing sampled at steps of nominal size ``delta``."""
    times: Tuple[float, ...]
    forcing: Tuple[float, ...]
    delta: float

    def __post_init__(self):
        issues = []
        if len(self.times) != len(self.forcing) or len(self.times) == 0:
            issues.append("schedule: times and forcing must be nonempty and of equal length")
        elif np.any(np.diff(self.times) <= 0):
            issues.append("schedule: times must be strictly increasing")
        if any((not np.isfinite(f)) or f <= 0 for f in self.forcing):
            issues.append("schedule: forcing values must be > 0")
        if not np.isfinite(self.delta) or self.delta <= 0:
            issues.append(f"schedule.delta: must be > 0, got {self.delta}")
        if issues:
            raise ConfigError("; ".join(issues), issues)

    @classmethod
    def from_knots(cls, knots: Sequence[Sequence[float]], delta: float) -> 'Schedule':
        """Sample the interpolant of (t, F) knots.

        Each segment gets an integer number of steps round(Δt/δ), and F is
        interpolated by step fraction, so rescaling times and δ together
        reproduces the same forcing values bit for bit.
        """
        knots = [(float(t), float(F)) for t, F in knots]
        issues = []
        if len(knots) < 2:
            issues.append("schedule.knots: need at least two knots")
        if not np.isfinite(delta) or delta <= 0:
            issues.append(f"schedule.delta: must be > 0, got {delta}")
        for i, (t, F) in enumerate(knots):
            if not np.isfinite(F) or F <= 0:
                issues.append(f"schedule.knots[{i}]: F must be > 0, got {F}")
            if i and t <= knots[i - 1][0]:
                issues.append(f"schedule.knots[{i}]: times must be strictly increasing")
        if issues:
            raise ConfigError("; ".join(issues), issues)

        times, forcing = [knots[0][0]], [knots[0][1]]
        for (t0, F0), (t1, F1) in zip(knots[:-1], knots[1:]):
            n = max(1, int(round((t1 - t0) / delta)))
            for i in range(1, n + 1):
                if i == n:
                    times.append(t1)
                    forcing.append(F1)
                else:
                    times.append(t0 + (t1 - t0) * (i / n))
                    forcing.append(F0 + (F1 - F0) * (i / n))
        return cls(tuple(times), tuple(forcing), float(delta))

    def __len__(self):
        return len(self.times)

    def log_lipschitz(self) -> float:
        """max |Δ log F| / Δt over the sampled steps."""
        if len(self) < 2:
            return 0.0
        return float(np.max(np.abs(np.diff(np.log(self.forcing))) / np.diff(self.times)))


class OneSidedMinimality(NamedTuple):
    outward: bool        # no grow move lowers J_{1+μ₊}
    inward: bool         # no shrink move lowers J_{1−μ₋}
    outward_gain: float  # most negative energy change among grow moves (0 if none)
    inward_gain: float


# ============================================================
# Exact flip evaluation
# ============================================================

class _Configuration:
    """Factorized masked Laplacian of one wet set."""

    def __init__(self, domain: Domain, wet: np.ndarray, F: float):
        self.wet = wet
        self.system = assemble_system(domain, wet, F)
        n = self.system.size
        if n:
            self.lu = spla.splu(self.system.matrix.tocsc())
            self.x = self.lu.solve(self.system.rhs)
        else:
            self.lu = None
            self.x = np.zeros(0)
        values = np.zeros(domain.shape)
        values[domain.inner_boundary] = F
        values.flat[self.system.cells] = self.x
        self.values = values
        self.dirichlet = self.system.scale * (self.system.c0 - float(self.system.rhs @ self.x))

    def solve(self, columns: np.ndarray) -> np.ndarray:
        if self.lu is None or columns.shape[1] == 0:
            return np.zeros(columns.shape)
        return self.lu.solve(columns)


class _Search:
    """Local search for a minimizer of E(prev, ·) at forcing F."""

    def __init__(self, prev: Mask, F: float, domain: Domain, params: HysteresisParams,
                 start: Optional[Mask] = None):
        self.prev = prev.cells
        self.F = F
        self.domain = domain
        self.params = params
        self.tol = FLIP_TOL * F * F
        self.hd = domain.cell_volume
        self.degree = neighbor_count(~domain.obstacle)
        self.flips = 0
        self.sweeps = 0
        wet = (start if start is not None else prev).cells.copy()
        self._set(_Configuration(domain, wet, F))

    # ---------- energy bookkeeping ----------

    def _energy(self, config: _Configuration) -> float:
        wet = config.wet
        wetted = np.count_nonzero(wet & ~self.prev)
        dried = np.count_nonzero(self.prev & ~wet)
        dissipation = (self.params.mu_plus * wetted + self.params.mu_minus * dried) * self.hd
        return config.dirichlet + np.count_nonzero(wet) * self.hd + dissipation

    def _set(self, config: _Configuration) -> None:
        touching = config.wet & self.domain.outer_boundary
        if touching.any():
            cell = tuple(int(i) for i in np.argwhere(touching)[0])
            raise DomainTooSmallError(
                f"wet region reached the outer boundary at cell {cell}; enlarge the box", cell)
        self.config = config
        self.energy = self._energy(config)

    # ---------- candidates ----------

    def _candidates(self, kind: str) -> np.ndarray:
        wet = self.config.wet
        if kind == GROW:
            ring = frontier(wet, self.domain)
        else:
            ring = free_boundary(wet, self.domain) & ~self.domain.inner_boundary
        return np.flatnonzero(ring)

    def _flip_energies(self, kind: str, cells: np.ndarray) -> np.ndarray:
        """Exact change of E for flipping each of ``cells`` on its own."""
        config = self.config
        system = config.system
        n, k = system.size, len(cells)
        scale = system.scale
        columns = np.zeros((n, k))
        if kind == GROW:
            sums = np.zeros(k)
            for axis in range(self.domain.dim):
                for step in (-1, 1):
                    vals = shifted(config.values, axis, step, 0.0).flat[cells]
                    idx = shifted(system.index, axis, step, -1).flat[cells]
                    sums += vals
                    hit = idx >= 0
                    columns[idx[hit], np.flatnonzero(hit)] = 1.0
            z = config.solve(columns)
            schur = self.degree.flat[cells] - np.einsum('ij,ij->j', columns, z)
            d_dirichlet = -scale * sums * sums / schur
            d_volume = self.hd
            d_diss = np.where(self.prev.flat[cells], -self.params.mu_minus,
                              self.params.mu_plus) * self.hd
        else:
            idx = system.index.flat[cells]
            columns[idx, np.arange(k)] = 1.0
            z = config.solve(columns)
            diag = z[idx, np.arange(k)]
            x = config.x[idx]
            d_dirichlet = scale * x * x / diag
            d_volume = -self.hd
            d_diss = np.where(self.prev.flat[cells], self.params.mu_minus,
                              -self.params.mu_plus) * self.hd
        return d_dirichlet + d_volume + d_diss

    def _flipped(self, kind: str, cells) -> np.ndarray:
        wet = self.config.wet.copy()
        wet.flat[cells] = (kind == GROW)
        return wet

    # ---------- moves ----------

    def _layer_path(self, kind: str) -> Tuple[np.ndarray, np.ndarray]:
        """Greedy flip order over the whole ring and the exact E change of every prefix.

        Growing prices subsets of the frontier through the Schur complement
        of the enlarged Laplacian; shrinking prices subsets of the ring
        through the inverse of the current one. Each pick is the cheapest
        remaining cell given the ones already taken.
        """
        config = self.config
        system = config.system
        mu_plus, mu_minus = self.params.mu_plus, self.params.mu_minus
        if kind == GROW:
            cells = np.flatnonzero(frontier(config.wet, self.domain)
                                   & ~self.domain.outer_boundary)
            k = len(cells)
            if not k:
                return cells, np.zeros(0)
            pos = np.full(self.domain.shape, -1, dtype=np.int64)
            pos.flat[cells] = np.arange(k)
            columns = np.zeros((system.size, k))
            drive = np.zeros(k)
            coupling = np.diag(self.degree.flat[cells].astype(np.float64))
            for axis in range(self.domain.dim):
                for step in (-1, 1):
                    drive += shifted(config.values, axis, step, 0.0).flat[cells]
                    idx = shifted(system.index, axis, step, -1).flat[cells]
                    hit = idx >= 0
                    columns[idx[hit], np.flatnonzero(hit)] = 1.0
                    other = shifted(pos, axis, step, -1).flat[cells]
                    linked = other >= 0
                    coupling[np.flatnonzero(linked), other[linked]] = -1.0
            coupling -= columns.T @ config.solve(columns)
            cost = np.where(self.prev.flat[cells], 1.0 - mu_minus, 1.0 + mu_plus) * self.hd
            weight = -system.scale
        else:
            cells = self._candidates(SHRINK)
            k = len(cells)
            if not k:
                return cells, np.zeros(0)
            idx = system.index.flat[cells]
            columns = np.zeros((system.size, k))
            columns[idx, np.arange(k)] = 1.0
            coupling = config.solve(columns)[idx, :]
            drive = config.x[idx].copy()
            cost = np.where(self.prev.flat[cells], mu_minus - 1.0, -1.0 - mu_plus) * self.hd
            weight = system.scale
        order, changes = _greedy_order(coupling, drive, cost, weight)
        return cells[order], np.cumsum(changes)

    def layer_move(self, kind: str) -> int:
        """Flip the best prefix of the greedy layer order; returns cells flipped."""
        cells, totals = self._layer_path(kind)
        if not len(cells):
            return 0
        m = int(np.argmin(totals))
        if totals[m] >= -self.tol:
            return 0
        trial = _Configuration(self.domain, self._flipped(kind, cells[:m + 1]), self.F)
        if self._energy(trial) >= self.energy - self.tol:
            logger.debug("%s layer of %d cells rejected on re-solve", kind, m + 1)
            return 0
        self._set(trial)
        self.flips += m + 1
        return m + 1

    def _window(self, kind: str) -> np.ndarray:
        """Changeable cells within WINDOW_DEPTH steps of the free boundary, on one side."""
        wet = self.config.wet
        interface = free_boundary(wet, self.domain) | frontier(wet, self.domain)
        cross = ndimage.generate_binary_structure(self.domain.dim, 1)
        near = ndimage.binary_dilation(interface, structure=cross, iterations=WINDOW_DEPTH)
        near &= self.domain.free & ~self.domain.inner_boundary
        near &= ~wet if kind == GROW else wet
        return np.flatnonzero(near)

    def _window_minimum(self, kind: str) -> Optional[Tuple[np.ndarray, float]]:
        cells = self._window(kind)
        if not len(cells) or len(cells) > MAX_WINDOW_CELLS:
            return None
        return _exhaustive(self.prev, self.config.wet, self.F, self.domain, self.params, cells)

    def window_move(self, kind: str) -> int:
        """Best one-sided change of a small window, by enumeration; returns cells flipped."""
        found = self._window_minimum(kind)
        if found is None or found[1] >= self.energy - self.tol:
            return 0
        trial = _Configuration(self.domain, found[0], self.F)
        if self._energy(trial) >= self.energy - self.tol:
            return 0
        changed = int(np.count_nonzero(found[0] != self.config.wet))
        self._set(trial)
        self.flips += changed
        return changed

    def single_pass(self, kind: str) -> int:
        """Row-major sweep of single flips; accepts the first improving flip and continues."""
        accepted = 0
        position = -1
        while True:
            cells = self._candidates(kind)
            cells = cells[cells > position]
            if not len(cells):
                return accepted
            gains = self._flip_energies(kind, cells)
            hits = np.flatnonzero(gains < -self.tol)
            if not len(hits):
                return accepted
            cell = int(cells[hits[0]])
            self._set(_Configuration(self.domain, self._flipped(kind, [cell]), self.F))
            self.flips += 1
            accepted += 1
            position = cell

    def run_pass(self, kind: str) -> int:
        accepted = self.single_pass(kind)
        while True:
            moved = self.layer_move(kind) or self.window_move(kind)
            if not moved:
                return accepted
            accepted += moved + self.single_pass(kind)

    def run(self, order: str) -> None:
        kinds = (GROW, SHRINK) if order == GROW_FIRST else (SHRINK, GROW)
        while True:
            self.sweeps += 1
            if self.sweeps > MAX_SWEEPS:
                raise SolverError(f"local search did not settle within {MAX_SWEEPS} sweeps")
            if sum(self.run_pass(kind) for kind in kinds) == 0:
                return

    def best_gain(self, kind: str) -> float:
        """Most negative E change over single flips, layer prefixes and the window (0 if none)."""
        best = 0.0
        cells = self._candidates(kind)
        if len(cells):
            best = min(best, float(np.min(self._flip_energies(kind, cells))))
        _, totals = self._layer_path(kind)
        if len(totals):
            best = min(best, float(np.min(totals)))
        found = self._window_minimum(kind)
        if found is not None:
            best = min(best, found[1] - self.energy)
        return best


def _greedy_order(coupling: np.ndarray, drive: np.ndarray, cost: np.ndarray,
                  weight: float) -> Tuple[np.ndarray, np.ndarray]:
    """Pick order and E change per pick, eliminating each pick from ``coupling``.

    Picking j changes the Dirichlet part by weight·a_j²/C_jj, where C and a
    are ``coupling`` and ``drive`` after eliminating the earlier picks.
    """
    C = np.array(coupling, dtype=np.float64)
    a = np.array(drive, dtype=np.float64)
    k = len(a)
    free = np.ones(k, dtype=bool)
    order = np.empty(k, dtype=np.int64)
    changes = np.empty(k)
    for i in range(k):
        pivots = np.where(free, np.diag(C), 1.0)
        gains = np.where(free, weight * a * a / pivots + cost, np.inf)
        j = int(np.argmin(gains))
        order[i], changes[i] = j, gains[j]
        free[j] = False
        col = C[:, j].copy()
        a -= col * (a[j] / col[j])
        C -= np.outer(col, col / col[j])
    return order, changes


# ============================================================
# Steps
# ============================================================

def _result(prev: Mask, wet: np.ndarray, F: float, domain: Domain,
            params: HysteresisParams, flips: int, sweeps: int) -> StepResult:
    mask = Mask(wet)
    profile = solve_harmonic(domain, mask, F)
    energy = energy_report(profile, domain)
    dissipation = diss(prev, mask, params, domain)
    return StepResult(profile=profile, mask=mask, energy=energy,
                      augmented=energy.j_energy + dissipation, dissipation=dissipation,
                      flips=flips, sweeps=sweeps)


def _check_forcing(F: float) -> None:
    if not np.isfinite(F) or F <= 0:
        raise ConfigError(f"forcing must be > 0, got {F}")


def step(prev: Mask, F: float, domain: Domain, params: HysteresisParams,
         order: str = GROW_FIRST, start: Optional[Mask] = None) -> StepResult:
    """Local minimizer of E(prev, ·) reached from ``start`` (default ``prev``).

    Sweeps alternate grow and shrink passes (``order`` picks which comes
    first) until a full sweep accepts nothing. A pass runs single flips in
    row-major order, then the best prefix of the greedy layer order, then
    an exhaustive one-sided change of the cells near the free boundary when
    there are at most MAX_WINDOW_CELLS of them. A move is accepted iff it
    lowers E by more than 1e-10·F².
    """
    _check_forcing(F)
    check_mask(prev, domain)
    if order not in (GROW_FIRST, SHRINK_FIRST):
        raise ConfigError(f"unknown sweep order '{order}'")
    search = _Search(prev, F, domain, params, start)
    search.run(order)
    logger.debug("step F=%.6g order=%s: %d flips in %d sweeps", F, order,
                 search.flips, search.sweeps)
    return _result(prev, search.config.wet, F, domain, params, search.flips, search.sweeps)


def bracket_minimizers(prev: Mask, F: float, domain: Domain,
                       params: HysteresisParams) -> Tuple[StepResult, StepResult]:
    """(minimal, maximal): fixed points of the shrink-first and grow-first protocols.

    If the two are not nested, both restart from their meet and join
    (E(∧) + E(∨) <= E(u1) + E(u2)) until they are; SolverError after
    MAX_BRACKET_ROUNDS restarts.
    """
    minimal = step(prev, F, domain, params, order=SHRINK_FIRST)
    maximal = step(prev, F, domain, params, order=GROW_FIRST)
    rounds = 0
    while not minimal.mask <= maximal.mask:
        if rounds == MAX_BRACKET_ROUNDS:
            raise SolverError(
                f"bracket at F={F:.6g} is not nested after {rounds} meet/join restarts "
                f"({(minimal.mask - maximal.mask).count()} cells outside)")
        rounds += 1
        meet, join = minimal.mask & maximal.mask, minimal.mask | maximal.mask
        minimal = step(prev, F, domain, params, order=SHRINK_FIRST, start=meet)
        maximal = step(prev, F, domain, params, order=GROW_FIRST, start=join)
    if rounds:
        logger.debug("bracket at F=%.6g nested after %d restarts", F, rounds)
    return minimal, maximal


def brute_force_step(prev: Mask, F: float, domain: Domain, params: HysteresisParams,
                     candidates: Iterable) -> StepResult:
    """Exact minimizer of E(prev, ·) over all wet/dry choices on ``candidates``.

    Cells outside ``candidates`` keep their status in ``prev``. Among
    minimizers the smallest bitset wins, reading the candidates in
    row-major order with the first one as the most significant bit.
    """
    _check_forcing(F)
    check_mask(prev, domain)
    cand = _candidate_cells(candidates, domain)
    k = len(cand)
    if k > MAX_ORACLE_CANDIDATES:
        raise OracleLimitError(
            f"brute force is limited to {MAX_ORACLE_CANDIDATES} candidates, got {k}")
    if k == 0:
        return _result(prev, prev.cells, F, domain, params, flips=0, sweeps=0)
    chosen, _ = _exhaustive(prev.cells, prev.cells, F, domain, params, cand)
    flips = int(np.count_nonzero(chosen != prev.cells))
    return _result(prev, chosen, F, domain, params, flips=flips, sweeps=0)


def _exhaustive(prev: np.ndarray, base: np.ndarray, F: float, domain: Domain,
                params: HysteresisParams, cand: np.ndarray) -> Tuple[np.ndarray, float]:
    """Minimizer of E(prev, ·) and its energy over every status of the ``cand`` cells.

    Other cells keep their status in ``base``. The candidate block is
    reduced to a dense Schur complement once, then 2^k small systems are
    solved in chunks.
    """
    k = len(cand)
    all_wet = base.copy()
    all_wet.flat[cand] = True
    system = assemble_system(domain, all_wet, F)
    is_cand = np.zeros(domain.shape, dtype=bool)
    is_cand.flat[cand] = True
    cand_pos = system.index.flat[cand]
    fixed_pos = np.flatnonzero(~is_cand.flat[system.cells])

    A = system.matrix.tocsc()
    A_pp = A[fixed_pos][:, fixed_pos]
    A_pc = A[fixed_pos][:, cand_pos].toarray()
    A_cc = A[cand_pos][:, cand_pos].toarray()
    b_p, b_c = system.rhs[fixed_pos], system.rhs[cand_pos]
    if len(fixed_pos):
        lu = spla.splu(A_pp.tocsc())
        solved = lu.solve(np.column_stack([A_pc, b_p]))
        z, y = solved[:, :k], solved[:, k]
        schur = A_cc - A_pc.T @ z
        reduced = b_c - A_pc.T @ y
        offset = float(b_p @ y)
    else:
        schur, reduced, offset = A_cc, b_c.copy(), 0.0

    hd = domain.cell_volume
    fixed = ~is_cand
    fixed_wet = int(np.count_nonzero(base & fixed))
    fixed_diss = (params.mu_plus * np.count_nonzero(base & ~prev & fixed)
                  + params.mu_minus * np.count_nonzero(prev & ~base & fixed)) * hd
    prev_c = prev.flat[cand]
    shifts = np.arange(k - 1, -1, -1)
    eye = np.eye(k)

    tie = 1e-12 * max(F * F, 1.0)
    best_energy, best_code = np.inf, 0
    for start in range(0, 1 << k, ORACLE_CHUNK):
        codes = np.arange(start, min(start + ORACLE_CHUNK, 1 << k), dtype=np.int64)
        bits = ((codes[:, None] >> shifts) & 1).astype(bool)
        pair = bits[:, :, None] & bits[:, None, :]
        mats = np.where(pair, schur, eye)
        rhs = np.where(bits, reduced, 0.0)
        x = np.linalg.solve(mats, rhs[..., None])[..., 0]
        q = np.einsum('ij,ij->i', rhs, x)
        dirichlet = system.scale * (system.c0 - offset - q)
        wet_count = fixed_wet + bits.sum(axis=1)
        wetted = (bits & ~prev_c).sum(axis=1)
        dried = (~bits & prev_c).sum(axis=1)
        energy = (dirichlet + wet_count * hd + fixed_diss
                  + (params.mu_plus * wetted + params.mu_minus * dried) * hd)
        low = float(energy.min())
        if low < best_energy - tie:
            i = int(np.flatnonzero(energy <= low + tie)[0])
            best_energy, best_code = low, int(codes[i])

    chosen = base.copy()
    chosen.flat[cand] = ((best_code >> shifts) & 1).astype(bool)
    return chosen, best_energy


def _candidate_cells(candidates, domain: Domain) -> np.ndarray:
    if isinstance(candidates, Mask):
        flat = np.flatnonzero(candidates.cells)
    elif isinstance(candidates, np.ndarray) and candidates.dtype == bool:
        flat = np.flatnonzero(candidates)
    else:
        cells = [tuple(np.atleast_1d(c)) for c in candidates]
        flat = np.array([np.ravel_multi_index(c, domain.shape) for c in cells], dtype=np.int64)
    flat = np.unique(flat)
    bad = ~domain.free.flat[flat] | domain.inner_boundary.flat[flat]
    if bad.any():
        cell = np.unravel_index(int(flat[bad][0]), domain.shape)
        raise GeometryError(f"candidate cell {tuple(int(i) for i in cell)} cannot change status")
    return flat


# ============================================================
# Fixed-point and lattice checks
# ============================================================

def augmented_energy(prev: Mask, mask: Mask, F: float, domain: Domain,
                     params: HysteresisParams) -> float:
    """E(prev, u) with u the harmonic profile on ``mask``."""
    profile = solve_harmonic(domain, mask, F)
    return energy_report(profile, domain).j_energy + diss(prev, mask, params, domain)


def is_local_minimizer(prev: Mask, mask: Mask, F: float, domain: Domain,
                       params: HysteresisParams) -> bool:
    """True iff no single flip, layer prefix or window move lowers E(prev, ·) from ``mask``."""
    _check_forcing(F)
    check_mask(prev, domain)
    check_mask(mask, domain)
    search = _Search(prev, F, domain, params, start=mask)
    return all(search.best_gain(kind) >= -search.tol for kind in (GROW, SHRINK))


def one_sided_minimality(profile: Profile, domain: Domain,
                         params: HysteresisParams) -> OneSidedMinimality:
    """Outward test for J_{1+μ₊} (grow moves) and inward test for J_{1−μ₋} (shrink moves).

    With ``prev`` equal to the state itself, E(prev, w) - E(prev, u) is the
    change of J_{1+μ₊} for w ⊇ Ω(u) and of J_{1−μ₋} for w ⊆ Ω(u).
    """
    mask = profile.mask
    search = _Search(mask, profile.forcing, domain, params)
    outward = search.best_gain(GROW)
    inward = search.best_gain(SHRINK)
    return OneSidedMinimality(outward >= -search.tol, inward >= -search.tol, outward, inward)


def lattice_defect(prev: Mask, m1: Mask, m2: Mask, F: float, domain: Domain,
                   params: HysteresisParams) -> Tuple[float, float]:
    """(E(m1 ∨ m2) + E(m1 ∧ m2), E(m1) + E(m2)); the first never exceeds the second."""
    energies = {name: augmented_energy(prev, m, F, domain, params)
                for name, m in (('join', m1 | m2), ('meet', m1 & m2), ('a', m1), ('b', m2))}
    return energies['join'] + energies['meet'], energies['a'] + energies['b']


# ============================================================
# Time loop
# ============================================================

@dataclass(frozen=True, eq=False)
class TraceRecord:
    index: int
    t: float
    F: float
    profile: Profile
    energy: EnergyReport
    diss_increment: float
    cumulative_dissbar: float
    flips: int
    jump_flag: bool

    @property
    def mask(self) -> Mask:
        return self.profile.mask


@dataclass(eq=False)
class Trace:
    domain: Domain
    params: HysteresisParams
    records: List[TraceRecord] = field(default_factory=list)
    settle_flips: int = 0
    settle_diss: float = 0.0

    TRACE_COLUMNS = ('t', 'F', 'area', 'D', 'J', 'P', 'diss_increment',
                     'cumulative_dissbar', 'flips', 'jump_flag')

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i) -> TraceRecord:
        return self.records[i]

    @property
    def masks(self) -> List[Mask]:
        return [r.mask for r in self.records]

    def frame(self) -> pd.DataFrame:
        rows = [{
            't': r.t, 'F': r.F, 'area': r.energy.volume, 'D': r.energy.dirichlet,
            'J': r.energy.j_energy, 'P': r.energy.pressure,
            'diss_increment': r.diss_increment, 'cumulative_dissbar': r.cumulative_dissbar,
            'flips': r.flips, 'jump_flag': int(r.jump_flag),
        } for r in self.records]
        return pd.DataFrame(rows, columns=list(self.TRACE_COLUMNS))

    def to_csv(self, path) -> None:
        self.frame().to_csv(path, index=False, float_format='%.17g')


def run(schedule: Schedule, init: Mask, domain: Domain, params: HysteresisParams,
        on_record: Optional[Callable[[TraceRecord], None]] = None) -> Trace:
    """Minimizing movements along ``schedule`` starting from ``init``.

    Advancing steps (F non-decreasing) keep the maximal element of the
    bracket, receding steps the minimal one; a step whose bracket is not a
    single state is flagged as a jump.
    """
    trace = Trace(domain=domain, params=params)
    F0 = schedule.forcing[0]
    try:
        check_mask(init, domain)
        if is_local_minimizer(init, init, F0, domain, params):
            start = _result(init, init.cells, F0, domain, params, flips=0, sweeps=0)
        else:
            start = step(init, F0, domain, params, order=GROW_FIRST)
            trace.settle_flips = start.flips
            trace.settle_diss = start.dissipation
            logger.warning("initial state is not stable at F=%.6g; settled with %d flips",
                           F0, start.flips)
    except DropletError as e:
        raise StepError(0, e) from e

    def _emit(record: TraceRecord) -> None:
        trace.records.append(record)
        if on_record is not None:
            on_record(record)

    _emit(TraceRecord(index=0, t=schedule.times[0], F=F0, profile=start.profile,
                      energy=start.energy, diss_increment=0.0, cumulative_dissbar=0.0,
                      flips=start.flips, jump_flag=False))

    n = len(schedule)
    report_every = max(1, n // 10)
    prev = start.mask
    dissbar = 0.0
    for k in range(1, n):
        F = schedule.forcing[k]
        try:
            minimal, maximal = bracket_minimizers(prev, F, domain, params)
        except DropletError as e:
            raise StepError(k, e) from e
        advancing = F >= schedule.forcing[k - 1]
        chosen = maximal if advancing else minimal
        jump = minimal.mask != maximal.mask
        dissbar += chosen.dissipation
        record = TraceRecord(index=k, t=schedule.times[k], F=F, profile=chosen.profile,
                             energy=chosen.energy, diss_increment=chosen.dissipation,
                             cumulative_dissbar=dissbar, flips=chosen.flips, jump_flag=jump)
        _emit(record)
        logger.debug("step %d t=%.6g F=%.6g area=%.6g flips=%d jump=%s", k, record.t, F,
                     chosen.energy.volume, chosen.flips, jump)
        if k % report_every == 0 or k == n - 1:
            logger.info("step %d/%d F=%.4f area=%.4f DissBar=%.4f", k, n - 1, F,
                        chosen.energy.volume, dissbar)
        prev = chosen.mask
    return trace
