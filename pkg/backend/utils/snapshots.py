"""
Snapshot files: PGM masks and PDRP profile dumps.

PGM (P2): 0 = dry, 255 = wet, 128 = obstacle, one comment line with t and F.
PDRP: 32-byte little-endian header (magic, dim, n0, n1, h, F) followed by
row-major float64 values.
"""

import logging
import struct
from pathlib import Path
from typing import Tuple

import numpy as np
import pandas as pd

from utils.errors import ConfigError
from utils.field import Profile
from utils.geometry import Domain, Mask

logger = logging.getLogger(__name__)

PGM_DRY = 0
PGM_WET = 255
PGM_OBSTACLE = 128

PDRP_MAGIC = b'PDRP'
PDRP_HEADER = struct.Struct('<4sIIIdd')


def _as_rows(cells: np.ndarray) -> np.ndarray:
    return cells.reshape(1, -1) if cells.ndim == 1 else cells


# ============================================================
# PGM masks
# ============================================================

def write_pgm(path, mask: Mask, domain: Domain, t: float, F: float) -> Path:
    path = Path(path)
    grid = np.full(domain.shape, PGM_DRY, dtype=np.int64)
    grid[mask.cells] = PGM_WET
    grid[domain.obstacle] = PGM_OBSTACLE
    rows = _as_rows(grid)
    lines = ["P2", f"# t={t!r} F={F!r}", f"{rows.shape[1]} {rows.shape[0]}", "255"]
    lines += [" ".join(str(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_pgm(path, dim: int = 2) -> Tuple[np.ndarray, np.ndarray]:
    """Return (wet, obstacle) boolean grids from a P2 file."""
    path = Path(path)
    tokens = []
    for line in path.read_text().splitlines():
        line = line.split('#', 1)[0]
        tokens.extend(line.split())
    if not tokens or tokens[0] != 'P2':
        raise ConfigError(f"{path}: not a plain PGM (P2) file")
    try:
        width, height, maxval = (int(v) for v in tokens[1:4])
        pixels = np.array([int(v) for v in tokens[4:]], dtype=np.int64)
    except ValueError as e:
        raise ConfigError(f"{path}: malformed PGM header or pixel ({e})")
    if pixels.size != width * height:
        raise ConfigError(f"{path}: expected {width * height} pixels, found {pixels.size}")
    if maxval != 255:
        raise ConfigError(f"{path}: maxval must be 255, got {maxval}")
    grid = pixels.reshape(height, width)
    if dim == 1:
        if height != 1:
            raise ConfigError(f"{path}: a 1d mask must have height 1")
        grid = grid[0]
    unknown = ~np.isin(grid, (PGM_DRY, PGM_WET, PGM_OBSTACLE))
    if unknown.any():
        raise ConfigError(f"{path}: pixel values must be 0, 128 or 255")
    return grid == PGM_WET, grid == PGM_OBSTACLE


# ============================================================
# Profile dumps
# ============================================================

def write_profile(path, profile: Profile, domain: Domain) -> Path:
    path = Path(path)
    shape = domain.shape if domain.dim == 2 else (domain.shape[0], 1)
    header = PDRP_HEADER.pack(PDRP_MAGIC, domain.dim, shape[0], shape[1],
                              float(domain.h), float(profile.forcing))
    with open(path, 'wb') as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(profile.values, dtype='<f8').tobytes())
    return path


def read_profile(path) -> Tuple[np.ndarray, float, float]:
    """Return (values, h, F) from a PDRP file."""
    raw = Path(path).read_bytes()
    if len(raw) < PDRP_HEADER.size:
        raise ConfigError(f"{path}: truncated header")
    magic, dim, n0, n1, h, F = PDRP_HEADER.unpack_from(raw)
    if magic != PDRP_MAGIC:
        raise ConfigError(f"{path}: bad magic {magic!r}")
    values = np.frombuffer(raw, dtype='<f8', offset=PDRP_HEADER.size)
    if values.size != n0 * n1:
        raise ConfigError(f"{path}: expected {n0 * n1} values, found {values.size}")
    shape = (n0,) if dim == 1 else (n0, n1)
    return values.reshape(shape).copy(), h, F


def export_profile_csv(path, profile: Profile, domain: Domain) -> Path:
    """Columns x, y, u for every non-obstacle cell (y = 0 in 1d)."""
    coords = domain.centers()
    keep = ~domain.obstacle
    frame = pd.DataFrame({
        "x": coords[0][keep],
        "y": coords[1][keep] if domain.dim == 2 else np.zeros(int(keep.sum())),
        "u": profile.values[keep],
    })
    frame.to_csv(path, index=False, float_format='%.17g')
    return Path(path)
