"""
Discrete Geometry
Cell-centered domains, wet-region masks, exact set algebra and the
dissipation distance between wet regions.
"""

import logging
from dataclasses import dataclass, field
from typing import List, NamedTuple, Sequence, Tuple

import numpy as np
from scipy import ndimage

from utils.errors import ConfigError, GeometryError

logger = logging.getLogger(__name__)

# Cell classification codes returned by Domain.classify()
INTERIOR = 0
INNER = 1
OUTER = 2
OBSTACLE = 3


# ============================================================
# Parameters
# ============================================================

@dataclass(frozen=True)
class HysteresisParams:
    """Advancing/receding coefficients of the dissipation distance."""
    mu_plus: float
    mu_minus: float

    def __post_init__(self):
        issues = []
        if not np.isfinite(self.mu_plus) or self.mu_plus <= 0:
            issues.append(f"params.mu_plus: must be > 0, got {self.mu_plus}")
        if not np.isfinite(self.mu_minus) or not 0 < self.mu_minus < 1:
            issues.append(f"params.mu_minus: must lie in (0, 1), got {self.mu_minus}")
        if issues:
            raise ConfigError("; ".join(issues), issues)

    @property
    def q_plus(self) -> float:
        """Upper end of the pinning interval for slope²."""
        return 1.0 + self.mu_plus

    @property
    def q_minus(self) -> float:
        """Lower end of the pinning interval for slope²."""
        return 1.0 - self.mu_minus

    @property
    def mu_min(self) -> float:
        return min(self.mu_plus, self.mu_minus)


# ============================================================
# Grid helpers
# ============================================================

def shifted(arr: np.ndarray, axis: int, step: int, fill) -> np.ndarray:
    """Value of the neighbor at ``index + step`` along ``axis``; ``fill`` off the box."""
    out = np.full(arr.shape, fill, dtype=arr.dtype)
    src = [slice(None)] * arr.ndim
    dst = [slice(None)] * arr.ndim
    if step > 0:
        dst[axis], src[axis] = slice(0, -1), slice(1, None)
    else:
        dst[axis], src[axis] = slice(1, None), slice(0, -1)
    out[tuple(dst)] = arr[tuple(src)]
    return out


def neighbor_count(cells: np.ndarray) -> np.ndarray:
    """Number of true axis neighbors of every cell."""
    count = np.zeros(cells.shape, dtype=np.int64)
    for axis in range(cells.ndim):
        for step in (-1, 1):
            count += shifted(cells, axis, step, False)
    return count


def any_neighbor(cells: np.ndarray) -> np.ndarray:
    return neighbor_count(cells) > 0


def box_edge(shape: Tuple[int, ...]) -> np.ndarray:
    edge = np.zeros(shape, dtype=bool)
    for axis in range(len(shape)):
        idx = [slice(None)] * len(shape)
        idx[axis] = 0
        edge[tuple(idx)] = True
        idx[axis] = -1
        edge[tuple(idx)] = True
    return edge


# ============================================================
# Domain
# ============================================================

@dataclass(frozen=True, eq=False)
class Domain:
    """A box of cells of width ``h`` with a rasterized obstacle.

    Cell ``i`` along an axis has its center at ``origin[axis] + i*h``.
    ``inner_boundary`` and ``outer_boundary`` are derived from the obstacle.
    """
    obstacle: np.ndarray
    h: float
    origin: Tuple[float, ...] = ()
    inner_boundary: np.ndarray = field(init=False, repr=False)
    outer_boundary: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        obstacle = np.array(self.obstacle, dtype=bool)
        if obstacle.ndim not in (1, 2):
            raise ConfigError(f"domain.dim: must be 1 or 2, got {obstacle.ndim}")
        if min(obstacle.shape) < 3:
            raise ConfigError(f"domain.shape: need at least 3 cells per axis, got {obstacle.shape}")
        if not np.isfinite(self.h) or self.h <= 0:
            raise ConfigError(f"domain.h: must be > 0, got {self.h}")
        if not obstacle.any():
            raise ConfigError("domain.obstacle: the obstacle covers no cell")
        if obstacle.all():
            raise ConfigError("domain.obstacle: the obstacle covers the whole box")

        inner = ~obstacle & any_neighbor(obstacle)
        edge = box_edge(obstacle.shape)
        if (inner & edge).any():
            cell = tuple(int(i) for i in np.argwhere(inner & edge)[0])
            raise GeometryError(f"inner boundary cell {cell} lies on the box edge")
        outer = edge & ~obstacle

        origin = tuple(float(o) for o in self.origin) if self.origin else (0.0,) * obstacle.ndim
        if len(origin) != obstacle.ndim:
            raise ConfigError(f"domain.origin: expected {obstacle.ndim} coordinates")

        for arr in (obstacle, inner, outer):
            arr.setflags(write=False)
        object.__setattr__(self, 'obstacle', obstacle)
        object.__setattr__(self, 'origin', origin)
        object.__setattr__(self, 'inner_boundary', inner)
        object.__setattr__(self, 'outer_boundary', outer)

    # ---------- constructors ----------

    @classmethod
    def centered(cls, obstacle: np.ndarray, h: float) -> 'Domain':
        """Domain whose box center is the coordinate origin."""
        return cls(obstacle=obstacle, h=h, origin=centered_origin(np.shape(obstacle), h))

    @classmethod
    def with_disks(cls, shape: Sequence[int], h: float,
                   disks: Sequence[Tuple[Sequence[float], float]]) -> 'Domain':
        """2d box-centered domain whose obstacle is a union of disks (center, radius)."""
        shape = tuple(int(n) for n in shape)
        if len(shape) != 2:
            raise ConfigError("domain.shape: disk obstacles need a 2d shape")
        coords = grid_centers(shape, h, centered_origin(shape, h))
        obstacle = np.zeros(shape, dtype=bool)
        for center, radius in disks:
            obstacle |= sum((x - c) ** 2 for x, c in zip(coords, center)) < radius ** 2
        return cls.centered(obstacle, h)

    @classmethod
    def halfline(cls, n_cells: int, h: float) -> 'Domain':
        """1d domain: cell 0 is the obstacle, cell 1 the contact point x = 0."""
        obstacle = np.zeros(int(n_cells), dtype=bool)
        obstacle[0] = True
        return cls(obstacle=obstacle, h=h, origin=(-h,))

    # ---------- derived quantities ----------

    @property
    def dim(self) -> int:
        return self.obstacle.ndim

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.obstacle.shape

    @property
    def cell_volume(self) -> float:
        return self.h ** self.dim

    @property
    def free(self) -> np.ndarray:
        """Cells that may be wet: interior and inner boundary."""
        return ~self.obstacle & ~self.outer_boundary

    def classify(self) -> np.ndarray:
        codes = np.full(self.shape, INTERIOR, dtype=np.int8)
        codes[self.inner_boundary] = INNER
        codes[self.outer_boundary] = OUTER
        codes[self.obstacle] = OBSTACLE
        return codes

    def centers(self) -> List[np.ndarray]:
        """Cell-center coordinates, one array per axis (ij indexing)."""
        return grid_centers(self.shape, self.h, self.origin)

    def cell_center(self, cell: Tuple[int, ...]) -> Tuple[float, ...]:
        return tuple(o + self.h * i for o, i in zip(self.origin, cell))


def centered_origin(shape: Sequence[int], h: float) -> Tuple[float, ...]:
    return tuple(-(n - 1) / 2.0 * h for n in shape)


def grid_centers(shape: Sequence[int], h: float, origin: Sequence[float]) -> List[np.ndarray]:
    axes = [o + h * np.arange(n) for o, n in zip(origin, shape)]
    return list(np.meshgrid(*axes, indexing="ij"))


def disk_cells(domain: Domain, center: Sequence[float], radius: float) -> np.ndarray:
    """Cells whose center lies strictly inside the disk."""
    coords = domain.centers()
    r2 = sum((x - c) ** 2 for x, c in zip(coords, center))
    return r2 < radius ** 2


def distance_to_points(domain: Domain, centers: Sequence[Sequence[float]]) -> np.ndarray:
    """Distance from every cell center to the nearest of ``centers``."""
    coords = domain.centers()
    dist = np.full(domain.shape, np.inf)
    for center in centers:
        r = np.sqrt(sum((x - c) ** 2 for x, c in zip(coords, center)))
        dist = np.minimum(dist, r)
    return dist


# ============================================================
# Mask
# ============================================================

class Mask:
    """Immutable set of wet cells, stored as a read-only boolean grid."""

    __slots__ = ('cells', '_key')

    def __init__(self, cells):
        arr = np.array(cells, dtype=bool)
        arr.setflags(write=False)
        object.__setattr__(self, 'cells', arr)
        object.__setattr__(self, '_key', None)

    def __setattr__(self, name, value):
        raise AttributeError("Mask is immutable")

    @classmethod
    def inner(cls, domain: Domain) -> 'Mask':
        """The smallest admissible wet region: the inner boundary ring."""
        return cls(domain.inner_boundary)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.cells.shape

    def count(self) -> int:
        return int(np.count_nonzero(self.cells))

    def key(self) -> bytes:
        if self._key is None:
            object.__setattr__(self, '_key', np.packbits(self.cells, axis=None).tobytes())
        return self._key

    def _other(self, other: 'Mask') -> np.ndarray:
        if not isinstance(other, Mask):
            raise TypeError(f"expected Mask, got {type(other).__name__}")
        if other.shape != self.shape:
            raise GeometryError(f"mask shapes differ: {self.shape} vs {other.shape}")
        return other.cells

    def __or__(self, other):
        return Mask(self.cells | self._other(other))

    def __and__(self, other):
        return Mask(self.cells & self._other(other))

    def __sub__(self, other):
        return Mask(self.cells & ~self._other(other))

    def __xor__(self, other):
        return Mask(self.cells ^ self._other(other))

    def __le__(self, other):
        return not (self.cells & ~self._other(other)).any()

    def __ge__(self, other):
        return not (self._other(other) & ~self.cells).any()

    def __eq__(self, other):
        if not isinstance(other, Mask):
            return NotImplemented
        return self.shape == other.shape and self.key() == other.key()

    def __hash__(self):
        return hash((self.shape, self.key()))

    def __repr__(self):
        return f"Mask(shape={self.shape}, count={self.count()})"


def check_mask(mask: Mask, domain: Domain) -> None:
    """Raise GeometryError unless ``mask`` is an admissible wet region of ``domain``."""
    if mask.shape != domain.shape:
        raise GeometryError(f"mask shape {mask.shape} does not match domain {domain.shape}")
    missing = domain.inner_boundary & ~mask.cells
    if missing.any():
        cell = tuple(int(i) for i in np.argwhere(missing)[0])
        raise GeometryError(f"mask misses inner boundary cell {cell}")
    if (mask.cells & domain.obstacle).any():
        cell = tuple(int(i) for i in np.argwhere(mask.cells & domain.obstacle)[0])
        raise GeometryError(f"mask covers obstacle cell {cell}")
    if (mask.cells & domain.outer_boundary).any():
        cell = tuple(int(i) for i in np.argwhere(mask.cells & domain.outer_boundary)[0])
        raise GeometryError(f"mask touches the outer boundary at {cell}")


def _same_shape(domain: Domain, *masks: Mask) -> None:
    for m in masks:
        if m.shape != domain.shape:
            raise GeometryError(f"mask shape {m.shape} does not match domain {domain.shape}")


def radial_mask(domain: Domain, radius: float, centers: Sequence[Sequence[float]]) -> Mask:
    """Inner boundary plus every free cell within ``radius`` of one of ``centers``."""
    near = distance_to_points(domain, centers) < radius
    return Mask((near & domain.free) | domain.inner_boundary)


# ============================================================
# Measures and distances
# ============================================================

def measure(a: Mask, domain: Domain) -> float:
    """Cell count times h^d."""
    _same_shape(domain, a)
    return a.count() * domain.cell_volume


def diss(a: Mask, b: Mask, params: HysteresisParams, domain: Domain) -> float:
    """Dissipation distance of moving the wet region from ``a`` to ``b``."""
    _same_shape(domain, a, b)
    wetted = int(np.count_nonzero(b.cells & ~a.cells))
    dried = int(np.count_nonzero(a.cells & ~b.cells))
    return (params.mu_plus * wetted + params.mu_minus * dried) * domain.cell_volume


class TriangleDefect(NamedTuple):
    lhs: float
    rhs: float
    plus_count: int     # #(b∖a) + #(c∖b) − #(c∖a)
    minus_count: int    # #(a∖b) + #(b∖c) − #(a∖c)
    excess_count: int   # #(b∖(a∪c)) + #((a∩c)∖b)


def triangle_defect(a: Mask, b: Mask, c: Mask, params: HysteresisParams,
                    domain: Domain) -> TriangleDefect:
    """Defect Diss(a,b) + Diss(b,c) − Diss(a,c) and its closed form.

    Both sides are assembled from integer cell counts, so ``lhs == rhs``
    holds bit for bit whenever the counting identity holds.
    """
    _same_shape(domain, a, b, c)
    A, B, C = a.cells, b.cells, c.cells

    def n(x):
        return int(np.count_nonzero(x))

    plus = n(B & ~A) + n(C & ~B) - n(C & ~A)
    minus = n(A & ~B) + n(B & ~C) - n(A & ~C)
    excess = n(B & ~(A | C)) + n((A & C) & ~B)
    hd = domain.cell_volume
    lhs = (params.mu_plus * plus + params.mu_minus * minus) * hd
    rhs = (params.mu_plus * excess + params.mu_minus * excess) * hd
    return TriangleDefect(lhs, rhs, plus, minus, excess)


def hausdorff_distance(a: Mask, b: Mask, domain: Domain) -> float:
    """Hausdorff distance between the cell-center sets of ``a`` and ``b``."""
    _same_shape(domain, a, b)
    if a.count() == 0 or b.count() == 0:
        raise GeometryError("hausdorff_distance needs two nonempty masks")
    if a == b:
        return 0.0
    to_b = ndimage.distance_transform_edt(~b.cells, sampling=domain.h)
    to_a = ndimage.distance_transform_edt(~a.cells, sampling=domain.h)
    return float(max(to_b[a.cells].max(), to_a[b.cells].max()))


def perimeter(a: Mask, domain: Domain) -> float:
    """Faces between ``a`` and its complement inside the box, times h^(d-1)."""
    _same_shape(domain, a)
    cells = a.cells.astype(np.int8)
    faces = sum(int(np.count_nonzero(np.diff(cells, axis=k))) for k in range(domain.dim))
    return faces * domain.h ** (domain.dim - 1)


def connected_components(a: Mask, domain: Domain) -> List[Mask]:
    """Axis-neighbor connected components, ordered by first cell in row-major order."""
    _same_shape(domain, a)
    structure = ndimage.generate_binary_structure(domain.dim, 1)
    labels, n = ndimage.label(a.cells, structure=structure)
    return [Mask(labels == k) for k in range(1, n + 1)]


# ============================================================
# Free boundary rings
# ============================================================

def dry_cells(wet: np.ndarray, domain: Domain) -> np.ndarray:
    """Non-obstacle cells outside ``wet`` (outer boundary included)."""
    return ~wet & ~domain.obstacle


def free_boundary(wet: np.ndarray, domain: Domain) -> np.ndarray:
    """Wet cells with at least one dry axis neighbor."""
    return wet & any_neighbor(dry_cells(wet, domain))


def frontier(wet: np.ndarray, domain: Domain) -> np.ndarray:
    """Dry cells with at least one wet axis neighbor."""
    return dry_cells(wet, domain) & any_neighbor(wet)
