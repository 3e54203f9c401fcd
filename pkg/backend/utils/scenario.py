"""
Scenario files, run orchestration and the radial comparison.

A scenario is a versioned JSON document naming the domain, the hysteresis
parameters, the forcing schedule, the initial wet region, the certificates
to check and where to write artifacts. Physics fields have no defaults;
only the verify and output blocks do.
"""

import json
import logging
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from utils.errors import ConfigError, DropletError
from utils.field import SLOPE_METHODS
from utils.geometry import (
    Domain, HysteresisParams, Mask, centered_origin, check_mask, grid_centers, radial_mask,
)
from utils.minmove import Schedule, Trace, TraceRecord, run
from utils.radial import (
    clamp_to_band, equivalent_radius, gamma_minus, gamma_plus,
    radial_evolve, zeta,
)
from utils.snapshots import export_profile_csv, read_pgm, write_pgm, write_profile
from utils.verify import CERTIFICATE_NAMES, Certificate, JumpRecord, VerifySettings, verify_trace

logger = logging.getLogger(__name__)

SCENARIO_VERSION = 1
OBSTACLE_MARGIN_CELLS = 10
DEFAULT_OUT_ROOT = 'out'
OUT_ENV = 'DROPLET_OUT'

EXIT_OK = 0
EXIT_CERTIFICATE = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

COMPARE_COLUMNS = ('t', 'F', 'R_measured', 'R_exact', 'regime', 'error', 'within')


# ============================================================
# Types
# ============================================================

@dataclass
class OutputOptions:
    directory: Optional[str] = None
    snapshot_stride: int = 0
    compare_radial: bool = False
    profiles: bool = False


@dataclass
class Scenario:
    name: str
    domain: Domain
    params: HysteresisParams
    schedule: Schedule
    initial: Mask
    certificates: Tuple[str, ...]
    settings: VerifySettings
    output: OutputOptions
    disks: List[Tuple[Tuple[float, float], float]] = field(default_factory=list)
    radial_initial: bool = False
    source: Optional[Path] = None

    @property
    def is_radial(self) -> bool:
        """Equal disks and an analytic radial start: the radial oracle applies."""
        return (self.domain.dim == 2 and self.radial_initial and bool(self.disks)
                and len({radius for _, radius in self.disks}) == 1)

    def output_dir(self, out_root: Optional[str] = None) -> Path:
        root = out_root or os.environ.get(OUT_ENV)
        if root:
            return Path(root) / self.name
        if self.output.directory:
            return Path(self.output.directory)
        return Path(DEFAULT_OUT_ROOT) / self.name


@dataclass
class RadialComparison:
    frame: pd.DataFrame
    max_error: float
    mean_error: float
    pinned_drift: float
    clamped: bool = False

    def summary(self) -> str:
        return (f"radial comparison: max error {self.max_error:.4g}, "
                f"mean error {self.mean_error:.4g}, pinned drift {self.pinned_drift:.4g}")


@dataclass
class ScenarioOutcome:
    scenario: Scenario
    trace: Trace
    certificates: Dict[str, Certificate]
    jumps: List[JumpRecord]
    directory: Path
    comparison: Optional[RadialComparison] = None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.certificates.values())

    @property
    def exit_code(self) -> int:
        return EXIT_OK if self.passed else EXIT_CERTIFICATE


# ============================================================
# Validation
# ============================================================

class _Fields:
    """Reads one JSON object, collecting issues with dotted field paths."""

    def __init__(self, obj, path: str, issues: List[str], text: Optional[str] = None):
        self.path = path
        self.issues = issues
        self.text = text
        self.seen = set()
        if not isinstance(obj, dict):
            self.error(path, "must be an object")
            obj = {}
        self.obj = obj

    def where(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def error(self, where: str, message: str) -> None:
        line = _line_of(self.text, where.rsplit('.', 1)[-1]) if self.text else None
        suffix = f" (line {line})" if line else ""
        self.issues.append(f"{where}{suffix}: {message}")

    def get(self, key: str, required: bool = True, default=None):
        self.seen.add(key)
        if key not in self.obj:
            if required:
                self.error(self.where(key), "is required")
            return default
        return self.obj[key]

    def number(self, key: str, required: bool = True, default=None, positive: bool = False):
        value = self.get(key, required, default)
        if key not in self.obj:
            return value
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            self.error(self.where(key), f"must be a number, got {value!r}")
            return None
        if positive and value <= 0:
            self.error(self.where(key), f"must be > 0, got {value}")
            return None
        return float(value)

    def integer(self, key: str, required: bool = True, default=None, minimum: int = 0):
        value = self.get(key, required, default)
        if value is None or key not in self.obj:
            return value
        if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
            self.error(self.where(key), f"must be an integer >= {minimum}, got {value!r}")
            return None
        return value

    def boolean(self, key: str, default: bool = False) -> bool:
        value = self.get(key, required=False, default=default)
        if not isinstance(value, bool):
            self.error(self.where(key), f"must be true or false, got {value!r}")
            return default
        return value

    def section(self, key: str, required: bool = True) -> '_Fields':
        value = self.get(key, required, default={} if not required else None)
        if value is None:
            value = {}
        return _Fields(value, self.where(key), self.issues, self.text)

    def finish(self) -> None:
        for key in self.obj:
            if key not in self.seen:
                self.error(self.where(key), "unknown field")


def _line_of(text: str, key: str) -> Optional[int]:
    match = re.search(r'"%s"\s*:' % re.escape(key), text)
    if not match:
        return None
    return text.count('\n', 0, match.start()) + 1


def _point(value, where: str, issues: List[str], dim: int = 2):
    if (not isinstance(value, (list, tuple)) or len(value) != dim
            or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value)):
        issues.append(f"{where}: must be a list of {dim} numbers")
        return None
    return tuple(float(v) for v in value)


def _segment_cells(shape, h, a, b, width) -> np.ndarray:
    """Cells whose center lies within width/2 of the segment [a, b]."""
    x, y = grid_centers(shape, h, centered_origin(shape, h))
    ax, ay = a
    dx, dy = b[0] - ax, b[1] - ay
    length2 = dx * dx + dy * dy
    if length2 == 0:
        t = np.zeros_like(x)
    else:
        t = np.clip(((x - ax) * dx + (y - ay) * dy) / length2, 0.0, 1.0)
    return np.hypot(x - ax - t * dx, y - ay - t * dy) <= width / 2.0


def _build_domain(section: _Fields, issues: List[str]):
    """Returns (domain, disks) or (None, []) if the section has issues."""
    dim = section.integer('dim', minimum=1)
    shape = section.get('shape')
    h = section.number('h', positive=True)
    obstacle = section.section('obstacle')
    section.finish()

    if dim not in (1, 2):
        if dim is not None:
            issues.append(f"domain.dim: must be 1 or 2, got {dim}")
        return None, []
    if (not isinstance(shape, list) or len(shape) != dim
            or any(isinstance(n, bool) or not isinstance(n, int) or n < 3 for n in shape)):
        issues.append(f"domain.shape: must be a list of {dim} integers >= 3")
        shape = None

    disks: List[Tuple[Tuple[float, float], float]] = []
    if dim == 1:
        halfline = obstacle.boolean('halfline')
        obstacle.finish()
        if not halfline:
            issues.append("domain.obstacle.halfline: a 1d domain needs {\"halfline\": true}")
        if shape is None or h is None or not halfline:
            return None, []
        return Domain.halfline(shape[0], h), []

    kinds = [k for k in ('disk', 'disks', 'segment') if k in obstacle.obj]
    if len(kinds) != 1:
        issues.append("domain.obstacle: give exactly one of disk, disks or segment")
    for kind in ('disk', 'disks', 'segment'):
        obstacle.seen.add(kind)
    obstacle.finish()
    if len(kinds) != 1:
        return None, []

    kind = kinds[0]
    if kind in ('disk', 'disks'):
        entries = [obstacle.obj['disk']] if kind == 'disk' else obstacle.obj['disks']
        if not isinstance(entries, list) or not entries:
            issues.append("domain.obstacle.disks: must be a nonempty list")
            return None, []
        for i, entry in enumerate(entries):
            path = "domain.obstacle.disk" if kind == 'disk' else f"domain.obstacle.disks[{i}]"
            disk = _Fields(entry, path, issues)
            center = _point(disk.get('center'), f"{path}.center", issues)
            radius = disk.number('radius', positive=True)
            disk.finish()
            if center is not None and radius is not None:
                disks.append((center, radius))
        if shape is None or h is None or len(disks) != len(entries):
            return None, []
        domain = Domain.with_disks(shape, h, disks)
    else:
        seg = _Fields(obstacle.obj['segment'], "domain.obstacle.segment", issues)
        a = _point(seg.get('a'), "domain.obstacle.segment.a", issues)
        b = _point(seg.get('b'), "domain.obstacle.segment.b", issues)
        width = seg.number('width', positive=True)
        seg.finish()
        if None in (a, b, width) or shape is None or h is None:
            return None, []
        domain = Domain.centered(_segment_cells(tuple(shape), h, a, b, width), h)

    margin = _obstacle_margin(domain)
    if margin < OBSTACLE_MARGIN_CELLS:
        issues.append(f"domain.obstacle: must stay at least {OBSTACLE_MARGIN_CELLS} cells "
                      f"inside the box, found {margin}")
    return domain, disks


def _obstacle_margin(domain: Domain) -> int:
    cells = np.argwhere(domain.obstacle)
    upper = np.array(domain.shape) - 1 - cells
    return int(min(cells.min(), upper.min()))


def _build_initial(section: _Fields, domain: Domain, schedule: Optional[Schedule],
                   disks, base_dir: Optional[Path], issues: List[str]) -> Tuple[Optional[Mask], bool]:
    kind = section.get('kind')
    if kind == 'radial':
        R0 = section.number('R0', required=False)
        lam = section.number('lambda', required=False, positive=True)
        section.finish()
        if (R0 is None) == (lam is None):
            issues.append("initial: radial needs exactly one of R0 or lambda")
            return None, False
        if schedule is None:
            return None, False
        F0 = schedule.forcing[0]
        if domain.dim == 1:
            radius = R0 if R0 is not None else F0 / lam
            return radial_mask(domain, radius, [(0.0,)]), True
        if not disks:
            issues.append("initial: radial needs disk obstacles")
            return None, False
        a = disks[0][1]
        radius = R0 if R0 is not None else a * zeta(F0 / (lam * a))
        return radial_mask(domain, radius, [c for c, _ in disks]), True

    if kind == 'mask_file':
        path = section.get('path')
        section.finish()
        if not isinstance(path, str):
            issues.append("initial.path: must be a file path")
            return None, False
        full = (base_dir / path) if base_dir is not None else Path(path)
        try:
            wet, obstacle = read_pgm(full, dim=domain.dim)
        except (OSError, ConfigError) as e:
            issues.append(f"initial.path: {e}")
            return None, False
        if wet.shape != domain.shape or not np.array_equal(obstacle, domain.obstacle):
            issues.append("initial.path: the mask's obstacle does not match the domain")
            return None, False
        return Mask(wet | domain.inner_boundary), False

    if kind == 'obstacle_ring':
        section.finish()
        return Mask.inner(domain), False

    section.finish()
    issues.append(f"initial.kind: must be radial, mask_file or obstacle_ring, got {kind!r}")
    return None, False


def _build_verify(section: _Fields, issues: List[str]) -> Tuple[Tuple[str, ...], VerifySettings]:
    names = section.get('certificates', required=False, default=list(CERTIFICATE_NAMES))
    if not isinstance(names, list) or any(n not in CERTIFICATE_NAMES for n in names):
        issues.append(f"verify.certificates: must be a list drawn from {', '.join(CERTIFICATE_NAMES)}")
        names = list(CERTIFICATE_NAMES)
    defaults = VerifySettings()
    settings = VerifySettings(
        tol_stability=section.number('tol_stability', False, defaults.tol_stability, positive=True),
        tol_dissipation=section.number('tol_dissipation', False, defaults.tol_dissipation, positive=True),
        tol_balance=section.number('tol_balance', False, defaults.tol_balance, positive=True),
        tol_gronwall=section.number('tol_gronwall', False, defaults.tol_gronwall, positive=True),
        tol_dynamic=section.number('tol_dynamic', False, defaults.tol_dynamic, positive=True),
        jump_threshold_cells=section.number('jump_threshold_cells', False,
                                            defaults.jump_threshold_cells, positive=True),
        expected_jumps=section.integer('expected_jumps', required=False),
        density_c=section.number('density_c', False, defaults.density_c, positive=True),
        slope_method=section.get('slope_method', required=False, default=defaults.slope_method),
    )
    section.finish()
    if settings.density_c is not None and settings.density_c >= 0.5:
        issues.append("verify.density_c: must be < 0.5")
    if settings.slope_method not in SLOPE_METHODS:
        issues.append(f"verify.slope_method: must be one of {', '.join(SLOPE_METHODS)}")
    return tuple(names), settings


def _build_output(section: _Fields, issues: List[str]) -> OutputOptions:
    directory = section.get('directory', required=False)
    if directory is not None and not isinstance(directory, str):
        issues.append("output.directory: must be a path")
        directory = None
    options = OutputOptions(
        directory=directory,
        snapshot_stride=section.integer('snapshot_stride', required=False, default=0),
        compare_radial=section.boolean('compare_radial'),
        profiles=section.boolean('profiles'),
    )
    section.finish()
    return options


def scenario_from_dict(doc: Dict[str, Any], base_dir: Optional[Path] = None,
                       text: Optional[str] = None) -> Scenario:
    """Validate a parsed scenario document; raises ConfigError listing every issue."""
    issues: List[str] = []
    top = _Fields(doc, "", issues, text)
    version = top.get('version')
    if version is not None and version != SCENARIO_VERSION:
        issues.append(f"version: unsupported scenario version {version!r}")
    name = top.get('name')
    if not isinstance(name, str) or not re.fullmatch(r'[A-Za-z0-9_.-]+', name or ''):
        issues.append("name: must be a nonempty string of letters, digits, '-', '_' or '.'")

    domain, disks = None, []
    try:
        domain, disks = _build_domain(top.section('domain'), issues)
    except ConfigError as e:
        issues.extend(e.issues or [str(e)])
    except DropletError as e:
        issues.append(f"domain: {e}")

    params_section = top.section('params')
    mu_plus = params_section.number('mu_plus')
    mu_minus = params_section.number('mu_minus')
    params_section.finish()
    params = None
    if mu_plus is not None and mu_minus is not None:
        try:
            params = HysteresisParams(mu_plus, mu_minus)
        except ConfigError as e:
            issues.extend(e.issues or [str(e)])

    schedule_section = top.section('schedule')
    knots = schedule_section.get('knots')
    delta = schedule_section.number('delta', positive=True)
    schedule_section.finish()
    schedule = None
    if knots is not None and delta is not None:
        if not isinstance(knots, list) or any(
                not isinstance(k, list) or len(k) != 2
                or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in k)
                for k in knots):
            issues.append("schedule.knots: must be a list of [t, F] pairs")
        else:
            try:
                schedule = Schedule.from_knots(knots, delta)
            except ConfigError as e:
                issues.extend(e.issues or [str(e)])

    initial_section = top.section('initial')
    initial, radial_initial = None, False
    if domain is not None:
        initial, radial_initial = _build_initial(initial_section, domain, schedule, disks,
                                                 base_dir, issues)
        if initial is not None:
            try:
                check_mask(initial, domain)
            except DropletError as e:
                issues.append(f"initial: {e}")
    else:
        initial_section.seen.update(initial_section.obj)

    certificates, settings = _build_verify(top.section('verify', required=False), issues)
    output = _build_output(top.section('output', required=False), issues)
    top.finish()

    if output.compare_radial and domain is not None and (domain.dim != 2 or not disks):
        issues.append("output.compare_radial: needs a 2d domain with disk obstacles")

    if issues:
        raise ConfigError(f"invalid scenario: {len(issues)} issue(s)", issues)
    return Scenario(name=name, domain=domain, params=params, schedule=schedule, initial=initial,
                    certificates=certificates, settings=settings, output=output, disks=disks,
                    radial_initial=radial_initial, source=None)


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"{path}: {e.strerror or e}", [f"{path}: cannot be read"])
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        issue = f"{path}: line {e.lineno} column {e.colno}: {e.msg}"
        raise ConfigError(issue, [issue])
    scenario = scenario_from_dict(doc, base_dir=path.parent, text=text)
    scenario.source = path
    return scenario


def validate_document(doc: Dict[str, Any]) -> List[str]:
    """Issues of a parsed document; empty when it is a valid scenario."""
    try:
        scenario_from_dict(doc)
    except ConfigError as e:
        return list(e.issues or [str(e)])
    return []


# ============================================================
# Radial comparison
# ============================================================

def compare_radial(trace_frame: pd.DataFrame, params: HysteresisParams,
                   h: Optional[float] = None, obstacle_radius: float = 1.0,
                   droplets: int = 1, radial: bool = True) -> RadialComparison:
    """Equivalent-area radius of a trace against exact branch following.

    R_measured = sqrt(area/(π·droplets) + r_obstacle²). When ``h`` is given,
    the lattice holds u = F and u = 0 at the centers of the first cells
    outside the obstacle and outside the wet region, so both radii are
    taken h/2 further out; ``within`` then flags steps whose error is at
    most max(2h, 3% of R_exact).
    """
    if not radial:
        logger.warning("comparing a non-radial trace with the radial solution")
    missing = [c for c in ('t', 'F', 'area') if c not in trace_frame.columns]
    if missing:
        raise ConfigError(f"trace is missing columns: {', '.join(missing)}")
    if trace_frame.empty:
        raise ConfigError("trace has no rows")

    offset = 0.5 * h if h is not None else 0.0
    scale = float(obstacle_radius) + offset
    measured = np.array([equivalent_radius(a, obstacle_radius, droplets) + offset
                         for a in trace_frame['area']]) / scale
    F = trace_frame['F'].to_numpy(dtype=np.float64)
    # the radial solution is stated for a unit obstacle; F scales with it
    F_unit = F / scale

    R0 = measured[0]
    clamped_R0 = clamp_to_band(R0, F_unit[0], params)
    clamped = clamped_R0 != R0
    if clamped:
        logger.warning("measured R0=%.6g is outside [%.6g, %.6g]; clamped to %.6g", R0,
                       gamma_plus(F_unit[0], params), gamma_minus(F_unit[0], params), clamped_R0)
    states = radial_evolve(F_unit, clamped_R0, params)
    exact = np.array([s.R for s in states])
    error = np.abs(measured - exact) * scale

    frame = pd.DataFrame({
        't': trace_frame['t'].to_numpy(),
        'F': F,
        'R_measured': measured * scale,
        'R_exact': exact * scale,
        'regime': [s.regime for s in states],
        'error': error,
    })
    if h is not None:
        frame['within'] = error <= np.maximum(2.0 * h, 0.03 * exact * scale)
    else:
        frame['within'] = np.nan

    pinned = frame['regime'].to_numpy() == 'pinned'
    drift = 0.0
    run_start = None
    for k in range(len(frame)):
        if pinned[k] and k > 0:
            run_start = k - 1 if run_start is None else run_start
            drift = max(drift, abs(measured[k] - measured[run_start]) * scale)
        else:
            run_start = None
    return RadialComparison(frame=frame[list(COMPARE_COLUMNS)], max_error=float(error.max()),
                            mean_error=float(error.mean()), pinned_drift=drift, clamped=clamped)


def load_trace_csv(path) -> pd.DataFrame:
    try:
        return pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ConfigError(f"{path}: cannot read trace ({e})")


# ============================================================
# Running
# ============================================================

def _snapshot_writer(scenario: Scenario, directory: Path, stride: int):
    if stride <= 0:
        return None
    snapshots = directory / 'snapshots'
    snapshots.mkdir(parents=True, exist_ok=True)

    def write(record: TraceRecord) -> None:
        if record.index % stride == 0:
            write_pgm(snapshots / f"step_{record.index:06d}.pgm", record.mask,
                      scenario.domain, record.t, record.F)
    return write


def write_certificates(directory: Path, scenario: Scenario,
                       certificates: Dict[str, Certificate], jumps: List[JumpRecord]) -> Path:
    series_dir = directory / 'certificates'
    series_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, cert in certificates.items():
        series_path = series_dir / f"{name}.csv"
        cert.series_frame().to_csv(series_path, index=False, float_format='%.17g')
        entries.append(cert.to_json(str(series_path.relative_to(directory))))
    doc = {
        "scenario": scenario.name,
        "pass": all(c.passed for c in certificates.values()),
        "certificates": entries,
        "jumps": [j.to_dict() for j in jumps],
    }
    path = directory / 'certificates.json'
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path


def run_scenario(scenario: Scenario, out_root: Optional[str] = None,
                 snapshot_stride: Optional[int] = None,
                 certificates: Optional[Sequence[str]] = None) -> ScenarioOutcome:
    """Run the trace, write its artifacts and check the certificates.

    Writes trace.csv, snapshots/ (every ``snapshot_stride`` steps),
    certificates.json with one residual CSV per certificate, radial.csv when
    the radial comparison is enabled and final_profile.{pdrp,csv} when
    profiles are requested.
    """
    directory = scenario.output_dir(out_root)
    directory.mkdir(parents=True, exist_ok=True)
    stride = scenario.output.snapshot_stride if snapshot_stride is None else snapshot_stride
    names = tuple(certificates) if certificates is not None else scenario.certificates

    logger.info("scenario %s: %d steps on %s cells, writing to %s", scenario.name,
                len(scenario.schedule), 'x'.join(map(str, scenario.domain.shape)), directory)
    trace = run(scenario.schedule, scenario.initial, scenario.domain, scenario.params,
                on_record=_snapshot_writer(scenario, directory, stride))
    trace.to_csv(directory / 'trace.csv')

    if scenario.output.profiles:
        final = trace[-1]
        write_profile(directory / 'final_profile.pdrp', final.profile, scenario.domain)
        export_profile_csv(directory / 'final_profile.csv', final.profile, scenario.domain)

    comparison = None
    if scenario.output.compare_radial:
        radius = scenario.disks[0][1]
        comparison = compare_radial(trace.frame(), scenario.params, h=scenario.domain.h,
                                    obstacle_radius=radius, droplets=len(scenario.disks),
                                    radial=scenario.is_radial)
        comparison.frame.to_csv(directory / 'radial.csv', index=False, float_format='%.17g')
        logger.info(comparison.summary())

    results, jumps = verify_trace(trace, names, scenario.settings)
    write_certificates(directory, scenario, results, jumps)
    return ScenarioOutcome(scenario=scenario, trace=trace, certificates=results, jumps=jumps,
                           directory=directory, comparison=comparison)
