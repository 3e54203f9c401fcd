"""
Harmonic Field Solver
Masked Dirichlet problems on the 5-point (2d) / 3-point (1d) stencil,
energy and pressure evaluation, and free boundary slope estimates.
"""

import logging
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse import linalg as spla

from utils.errors import ConfigError, FieldError, SolverError
from utils.geometry import (
    Domain, Mask, check_mask, dry_cells, free_boundary, neighbor_count, shifted,
)

logger = logging.getLogger(__name__)

DEFAULT_RTOL = 1e-10
ENERGY_TOL = 1e-8        # absolute, after division by F²
HARMONIC_TOL = 1e-6      # Laplacian residual accepted as "discrete-harmonic", relative to F
CLIP_TOL = 1e-6         # overshoot of [0, F] tolerated as roundoff, relative to F
FIT_RADIUS_CELLS = 4
MAX_LEVEL_SHIFT = 1.5   # cells; how far the fitted estimate may move to the zero level

SLOPE_STENCIL = 'stencil'
SLOPE_FIT = 'fit'
SLOPE_METHODS = (SLOPE_STENCIL, SLOPE_FIT)


# ============================================================
# Types
# ============================================================

@dataclass(frozen=True, eq=False)
class Profile:
    """Harmonic height field of a wet region.

    ``values`` equals ``forcing`` on the inner boundary and 0 off ``mask``.
    """
    values: np.ndarray
    mask: Mask
    forcing: float
    residual: float = 0.0

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)


@dataclass(frozen=True)
class EnergyReport:
    """Dirichlet energy, wet volume and the derived J and pressure."""
    dirichlet: float
    volume: float
    forcing: float

    @property
    def j_energy(self) -> float:
        return self.dirichlet + self.volume

    @property
    def pressure(self) -> float:
        return self.dirichlet / self.forcing

    def j_q(self, q: float) -> float:
        """Energy with volume weight ``q``."""
        return self.dirichlet + q * self.volume

    def as_dict(self) -> dict:
        return {
            "dirichlet": self.dirichlet,
            "volume": self.volume,
            "j_energy": self.j_energy,
            "pressure": self.pressure,
        }


class SlopeSample(NamedTuple):
    cell: Tuple[int, ...]
    slope: float


class EnergyDifference(NamedTuple):
    lhs: float
    rhs: float
    ok: bool


# ============================================================
# Linear system
# ============================================================

@dataclass(frozen=True, eq=False)
class LinearSystem:
    """Masked Laplacian A x = b over the wet cells off the inner boundary.

    The Dirichlet energy of the solution is ``scale * (c0 - b @ x)``.
    """
    cells: np.ndarray       # flat grid index of each unknown, row-major
    index: np.ndarray       # grid of unknown numbers, -1 where not an unknown
    matrix: sparse.csr_matrix
    rhs: np.ndarray
    c0: float
    scale: float

    @property
    def size(self) -> int:
        return len(self.cells)


def assemble_system(domain: Domain, wet: np.ndarray, F: float) -> LinearSystem:
    """Build the masked 2d-point Laplacian for wet cells ``wet`` and forcing ``F``."""
    inner = domain.inner_boundary
    unknown = wet & ~inner
    cells = np.flatnonzero(unknown)
    n = len(cells)
    index = np.full(domain.shape, -1, dtype=np.int64)
    index.flat[cells] = np.arange(n)

    open_cells = ~domain.obstacle
    degree = neighbor_count(open_cells)[unknown].astype(np.float64)

    rows, cols = [np.arange(n)], [np.arange(n)]
    data = [degree]
    for axis in range(domain.dim):
        pair = unknown & shifted(unknown, axis, 1, False)
        i = index[pair]
        j = shifted(index, axis, 1, -1)[pair]
        rows += [i, j]
        cols += [j, i]
        data += [-np.ones(len(i)), -np.ones(len(i))]
    matrix = sparse.csr_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))

    rhs = F * neighbor_count(inner)[unknown].astype(np.float64)
    outside = open_cells & ~inner
    inner_edges = 0
    for axis in range(domain.dim):
        for step in (-1, 1):
            inner_edges += int(np.count_nonzero(inner & shifted(outside, axis, step, False)))
    return LinearSystem(cells=cells, index=index, matrix=matrix, rhs=rhs,
                        c0=F * F * inner_edges, scale=domain.h ** (domain.dim - 2))


def profile_values(domain: Domain, system: LinearSystem, x: np.ndarray, F: float) -> np.ndarray:
    """Scatter a solution vector onto the grid, clipped to [0, F].

    The exact solution obeys the maximum principle; an overshoot beyond
    CLIP_TOL·F means the solve went wrong and is logged before clipping.
    """
    if len(x):
        overshoot = max(float(np.max(x)) - F, -float(np.min(x)), 0.0)
        if overshoot > CLIP_TOL * F:
            logger.warning("solution leaves [0, F] by %.3e (F=%.6g); clipping", overshoot, F)
    values = np.zeros(domain.shape)
    values[domain.inner_boundary] = F
    values.flat[system.cells] = np.clip(x, 0.0, F)
    return values


def solve_harmonic(domain: Domain, mask: Mask, F: float,
                   rtol: float = DEFAULT_RTOL, maxiter: Optional[int] = None) -> Profile:
    """Discrete harmonic profile on ``mask`` with u = F on the inner boundary.

    Jacobi-preconditioned conjugate gradients, relative residual ``rtol``,
    at most 50·N iterations.
    """
    if not np.isfinite(F) or F <= 0:
        raise FieldError(f"forcing must be > 0, got {F}")
    check_mask(mask, domain)
    system = assemble_system(domain, mask.cells, F)
    n = system.size
    if n == 0:
        return Profile(profile_values(domain, system, np.zeros(0), F), mask, F, 0.0)

    b_norm = float(np.linalg.norm(system.rhs))
    if b_norm == 0.0:
        return Profile(profile_values(domain, system, np.zeros(n), F), mask, F, 0.0)

    limit = maxiter if maxiter is not None else 50 * n
    jacobi = sparse.diags(1.0 / system.matrix.diagonal())
    iterations = [0]

    def _count(_):
        iterations[0] += 1

    x, info = spla.cg(system.matrix, system.rhs, rtol=rtol, atol=0.0,
                      maxiter=limit, M=jacobi, callback=_count)
    residual = float(np.linalg.norm(system.rhs - system.matrix @ x)) / b_norm
    if info != 0 or residual > 100 * rtol:
        raise SolverError(
            f"conjugate gradients stopped at relative residual {residual:.3e} "
            f"after {iterations[0]} iterations",
            residual=residual, iterations=iterations[0])
    logger.debug("harmonic solve: %d unknowns, %d iterations, residual %.2e",
                 n, iterations[0], residual)
    return Profile(profile_values(domain, system, x, F), mask, F, residual)


# ============================================================
# Energies
# ============================================================

def edge_slices(domain: Domain, axis: int):
    """Index pairs (lower, upper) of the cells joined by the edges along ``axis``."""
    n = domain.shape[axis]
    lower = [slice(None)] * domain.dim
    upper = [slice(None)] * domain.dim
    lower[axis], upper[axis] = slice(0, n - 1), slice(1, n)
    return tuple(lower), tuple(upper)


def dirichlet_energy(values: np.ndarray, domain: Domain) -> float:
    """Sum of squared differences over edges between non-obstacle cells, times h^(d-2)."""
    open_cells = ~domain.obstacle
    total = 0.0
    for axis in range(domain.dim):
        lo, up = edge_slices(domain, axis)
        diff = values[up] - values[lo]
        edge = open_cells[lo] & open_cells[up]
        total += float(np.sum(np.where(edge, diff * diff, 0.0)))
    return total * domain.h ** (domain.dim - 2)


def energy_report(profile: Profile, domain: Domain) -> EnergyReport:
    if profile.forcing <= 0:
        raise FieldError("pressure is undefined for forcing F = 0")
    if profile.values.shape != domain.shape:
        raise FieldError(f"profile shape {profile.values.shape} does not match domain {domain.shape}")
    return EnergyReport(
        dirichlet=dirichlet_energy(profile.values, domain),
        volume=profile.mask.count() * domain.cell_volume,
        forcing=profile.forcing,
    )


def laplacian_residual(profile: Profile, domain: Domain) -> float:
    """Largest |Δ_h u| over wet cells off the inner boundary, relative to F."""
    values = profile.values
    unknown = profile.mask.cells & ~domain.inner_boundary
    if not unknown.any():
        return 0.0
    open_cells = ~domain.obstacle
    lap = neighbor_count(open_cells) * values
    for axis in range(domain.dim):
        for step in (-1, 1):
            lap -= shifted(values, axis, step, 0.0)
    return float(np.abs(lap[unknown]).max()) / profile.forcing


# ============================================================
# Slopes
# ============================================================

def slope_field(values: np.ndarray, wet: np.ndarray, domain: Domain,
                method: str = SLOPE_STENCIL) -> np.ndarray:
    """Gradient magnitude at free boundary cells, NaN elsewhere.

    ``stencil``, per axis: toward a dry neighbor use the one-sided stencil
    (4u_c - u_behind)/2h, or u_c/h when the cell behind is not wet;
    between two non-dry neighbors use a centered difference.

    ``fit``: least-squares quadratic through the cell's wet component and
    the dry cells bordering it (u = 0) within FIT_RADIUS_CELLS, with its
    gradient taken at the fitted zero level.
    """
    if method not in SLOPE_METHODS:
        raise ConfigError(f"slope method: expected one of {SLOPE_METHODS}, got '{method}'")
    ring = free_boundary(wet, domain)
    slopes = np.full(domain.shape, np.nan)
    if method == SLOPE_FIT:
        slopes[ring] = _fitted_slopes(values, wet, domain, np.argwhere(ring))
        return slopes

    h = domain.h
    dry = dry_cells(wet, domain)
    obstacle = domain.obstacle
    grad2 = np.zeros(domain.shape)
    for axis in range(domain.dim):
        u_p = shifted(values, axis, 1, 0.0)
        u_m = shifted(values, axis, -1, 0.0)
        dry_p, dry_m = shifted(dry, axis, 1, False), shifted(dry, axis, -1, False)
        wet_p, wet_m = shifted(wet, axis, 1, False), shifted(wet, axis, -1, False)
        obs_p, obs_m = shifted(obstacle, axis, 1, False), shifted(obstacle, axis, -1, False)

        first_order = values / h
        toward_p = np.where(wet_m, (4.0 * values - u_m) / (2.0 * h), first_order)
        toward_m = np.where(wet_p, (4.0 * values - u_p) / (2.0 * h), first_order)
        g = np.where(dry_p & dry_m, first_order, 0.0)
        g = np.where(dry_p & ~dry_m, toward_p, g)
        g = np.where(dry_m & ~dry_p, toward_m, g)
        neither = ~dry_p & ~dry_m
        g = np.where(neither & wet_p & wet_m, (u_p - u_m) / (2.0 * h), g)
        g = np.where(neither & obs_p & wet_m, (values - u_m) / h, g)
        g = np.where(neither & obs_m & wet_p, (u_p - values) / h, g)
        grad2 += g * g

    slopes[ring] = np.sqrt(grad2[ring])
    return slopes


def _quadratic_basis(offsets: np.ndarray) -> np.ndarray:
    """Columns 1, o_a, o_a·o_b (a <= b) for integer offsets of shape (P, dim)."""
    dim = offsets.shape[1]
    columns = [np.ones(len(offsets))] + [offsets[:, a] for a in range(dim)]
    columns += [offsets[:, a] * offsets[:, b] for a in range(dim) for b in range(a, dim)]
    return np.column_stack(columns).astype(np.float64)


def _fitted_slopes(values: np.ndarray, wet: np.ndarray, domain: Domain,
                   cells: np.ndarray) -> np.ndarray:
    if not len(cells):
        return np.zeros(0)
    dim, shape = domain.dim, np.array(domain.shape)
    r = FIT_RADIUS_CELLS
    axes = np.meshgrid(*[np.arange(-r, r + 1)] * dim, indexing='ij')
    offsets = np.stack(axes, axis=-1).reshape(-1, dim)
    offsets = offsets[(offsets ** 2).sum(axis=1) <= r * r]
    basis = _quadratic_basis(offsets)

    labels, _ = ndimage.label(wet, structure=ndimage.generate_binary_structure(dim, 1))
    own = labels[tuple(cells.T)]
    points = cells[:, None, :] + offsets[None, :, :]
    inside = np.all((points >= 0) & (points < shape), axis=-1)
    flat = np.ravel_multi_index(tuple(np.clip(points, 0, shape - 1)[..., a] for a in range(dim)),
                                domain.shape)
    same = labels.flat[flat] == own[:, None]
    touching = np.zeros(same.shape, dtype=bool)
    for axis in range(dim):
        for step in (-1, 1):
            touching |= shifted(labels, axis, step, 0).flat[flat] == own[:, None]
    weight = (inside & (same | (dry_cells(wet, domain).flat[flat] & touching))).astype(np.float64)
    u = np.where(same, values.flat[flat], 0.0)

    normal = np.einsum('mp,pi,pj->mij', weight, basis, basis)
    moment = np.einsum('mp,pi,mp->mi', weight, basis, u)
    coef = np.einsum('mij,mj->mi', np.linalg.pinv(normal), moment)

    level = coef[:, 0]
    grad = coef[:, 1:1 + dim]
    hessian = np.zeros((len(cells), dim, dim))
    col = 1 + dim
    for a in range(dim):
        for b in range(a, dim):
            if a == b:
                hessian[:, a, a] = 2.0 * coef[:, col]
            else:
                hessian[:, a, b] = hessian[:, b, a] = coef[:, col]
            col += 1

    # One Newton step from the cell center to the fitted zero level.
    norm2 = np.einsum('mi,mi->m', grad, grad)
    safe = np.where(norm2 > 0, norm2, 1.0)
    shift = (-level / safe)[:, None] * grad
    length = np.linalg.norm(shift, axis=1)
    shift *= np.minimum(1.0, MAX_LEVEL_SHIFT / np.maximum(length, 1e-300))[:, None]
    at_level = grad + np.einsum('mij,mj->mi', hessian, shift)
    return np.linalg.norm(at_level, axis=1) / domain.h


def boundary_slope_samples(profile: Profile, domain: Domain,
                           method: str = SLOPE_STENCIL) -> List[SlopeSample]:
    """Slope estimate at every free boundary cell, row-major."""
    slopes = slope_field(profile.values, profile.mask.cells, domain, method)
    ring = ~np.isnan(slopes)
    return [SlopeSample(tuple(int(i) for i in cell), float(slopes[tuple(cell)]))
            for cell in np.argwhere(ring)]


# ============================================================
# Energy-difference inequality
# ============================================================

def energy_difference_check(v0: Profile, v1: Profile, domain: Domain,
                            tol: Optional[float] = None) -> EnergyDifference:
    """Compare D(v0) - D(v1) with the energy of v1 on edges outside Ω(v0).

    Requires v0 <= v1, equality on the inner boundary and v1 discrete-harmonic
    on its mask.
    """
    for p in (v0, v1):
        if p.values.shape != domain.shape:
            raise FieldError(f"profile shape {p.values.shape} does not match domain {domain.shape}")
    scale = max(v0.forcing, v1.forcing, 1e-300)
    slack = 1e-12 * scale

    above = v0.values > v1.values + slack
    if above.any():
        cell = tuple(int(i) for i in np.argwhere(above)[0])
        raise FieldError(f"ordering v0 <= v1 fails at cell {cell}")
    mismatch = domain.inner_boundary & (np.abs(v0.values - v1.values) > slack)
    if mismatch.any():
        cell = tuple(int(i) for i in np.argwhere(mismatch)[0])
        raise FieldError(f"v0 and v1 differ on the inner boundary at cell {cell}")
    if laplacian_residual(v1, domain) > HARMONIC_TOL:
        raise FieldError("v1 is not discrete-harmonic on its mask")

    lhs = dirichlet_energy(v0.values, domain) - dirichlet_energy(v1.values, domain)

    omega0 = v0.mask.cells
    gained = v1.mask.cells & ~omega0
    open_cells = ~domain.obstacle
    rhs = 0.0
    for axis in range(domain.dim):
        a, b = edge_slices(domain, axis)
        diff = v1.values[b] - v1.values[a]
        edge = open_cells[a] & open_cells[b] & ~omega0[a] & ~omega0[b] & (gained[a] | gained[b])
        rhs += float(np.sum(np.where(edge, diff * diff, 0.0)))
    rhs *= domain.h ** (domain.dim - 2)

    tol = ENERGY_TOL * scale * scale if tol is None else tol
    return EnergyDifference(lhs, rhs, bool(lhs >= rhs - tol))
