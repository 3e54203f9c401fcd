"""Shared test fixtures and markers for backend tests."""

import os
import sys

import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from utils.geometry import Domain, HysteresisParams, radial_mask  # noqa: E402
from utils.minmove import Schedule, run  # noqa: E402
from utils.radial import zeta  # noqa: E402


def _slow_enabled():
    """Full-size bundled scenarios take minutes; run them only on request."""
    return os.environ.get('RUN_SLOW', '') not in ('', '0')


requires_slow = pytest.mark.skipif(
    not _slow_enabled(),
    reason="full-size scenario; set RUN_SLOW=1 to run"
)

SCENARIO_DIR = os.path.join(os.path.dirname(__file__), '..', '..', 'scenarios')


@pytest.fixture
def app():
    """Create Flask test app."""
    from app import create_app
    app = create_app()
    app.config['TESTING'] = True
    return app


@pytest.fixture
def client(app):
    """Create Flask test client."""
    return app.test_client()


# ============================================================
# Small domains
# ============================================================

@pytest.fixture
def params():
    return HysteresisParams(mu_plus=0.2, mu_minus=0.2)


@pytest.fixture
def halfline():
    """Half-line of length 2 with h = 0.005 (cell 1 is the contact at x = 0)."""
    return Domain.halfline(400, 0.005)


@pytest.fixture
def disk_domain():
    """Unit-disk obstacle, 8 cells per unit length, box half-width 3.75."""
    return Domain.with_disks((61, 61), 0.125, [((0.0, 0.0), 1.0)])


@pytest.fixture(scope='module')
def halfline_trace():
    """Pinned, then advancing, then receding evolution on the half-line."""
    domain = Domain.halfline(400, 0.005)
    params = HysteresisParams(mu_plus=0.21, mu_minus=0.19)
    schedule = Schedule.from_knots([[0.0, 1.0], [1.0, 1.4], [2.0, 0.9]], 0.05)
    init = radial_mask(domain, 0.9975, [(0.0,)])   # 200 cells, R = 1
    return run(schedule, init, domain, params)


def radial_run(cells_per_unit, knots, delta, params=None, half_width=5.5):
    """Run around a unit disk, started on the advancing branch R ln R = F0/sqrt(1.2)."""
    h = 1.0 / cells_per_unit
    n = 2 * int(round(half_width * cells_per_unit)) + 1
    domain = Domain.with_disks((n, n), h, [((0.0, 0.0), 1.0)])
    params = params or HysteresisParams(mu_plus=0.2, mu_minus=0.2)
    schedule = Schedule.from_knots(knots, delta)
    init = radial_mask(domain, zeta(schedule.forcing[0] / 1.2 ** 0.5), [(0.0, 0.0)])
    return run(schedule, init, domain, params)


@pytest.fixture(scope='session')
def small_radial_loop():
    """Advance from F = 1 to 2 and recede back to 1 around a unit disk, h = 1/6."""
    return radial_run(6, [[0.0, 1.0], [1.0, 2.0], [2.0, 1.0]], 0.04)
