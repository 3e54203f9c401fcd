"""
Tests for minimizing movements: the forcing schedule, single steps against
the half-line closed forms, the exhaustive oracle, minimizer brackets and
the time loop.
"""

from types import SimpleNamespace

import numpy as np
import pytest

from utils.errors import (
    ConfigError, DomainTooSmallError, GeometryError, OracleLimitError, SolverError, StepError,
)
from utils.geometry import (
    Domain, HysteresisParams, Mask, connected_components, measure, radial_mask,
)
from utils.minmove import (
    GROW, GROW_FIRST, MAX_BRACKET_ROUNDS, MAX_ORACLE_CANDIDATES, MAX_WINDOW_CELLS, SHRINK,
    SHRINK_FIRST, Schedule, _greedy_order, _Search, augmented_energy, bracket_minimizers,
    brute_force_step, is_local_minimizer, lattice_defect, one_sided_minimality, run, step,
)


def _box_with_bar(h=3.0):
    """7×7 box, two-cell obstacle; leaves exactly 17 cells that can change status."""
    obstacle = np.zeros((7, 7), dtype=bool)
    obstacle[3, 2] = obstacle[3, 3] = True
    return Domain.centered(obstacle, h)


# ============================================================
# Schedule
# ============================================================

class TestSchedule:

    def test_from_knots(self):
        s = Schedule.from_knots([[0, 1.0], [1, 2.0], [2, 1.0]], 0.25)
        assert len(s) == 9
        assert s.times == (0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0)
        assert s.forcing[:5] == (1.0, 1.25, 1.5, 1.75, 2.0)
        assert s.forcing[-1] == 1.0

    def test_segment_shorter_than_delta(self):
        s = Schedule.from_knots([[0, 1.0], [0.01, 1.1]], 0.5)
        assert s.forcing == (1.0, 1.1)

    def test_rescaled_time_gives_same_forcing(self):
        a = Schedule.from_knots([[0, 1.0], [1, 1.7], [3, 0.9]], 0.1)
        b = Schedule.from_knots([[0, 1.0], [10, 1.7], [30, 0.9]], 1.0)
        assert a.forcing == b.forcing

    def test_log_lipschitz(self):
        s = Schedule.from_knots([[0, 1.0], [1, 2.0]], 1.0)
        assert s.log_lipschitz() == pytest.approx(np.log(2.0))

    @pytest.mark.parametrize("knots,delta", [
        ([[0, 1.0]], 0.1),
        ([[0, 1.0], [0, 2.0]], 0.1),
        ([[0, 1.0], [1, -2.0]], 0.1),
        ([[0, 1.0], [1, 2.0]], 0.0),
    ])
    def test_invalid(self, knots, delta):
        with pytest.raises(ConfigError):
            Schedule.from_knots(knots, delta)


# ============================================================
# Single steps on the half-line
# ============================================================

class TestHalflineStep:
    """D = F²/R, so a step stops where R(R ± h) crosses F²/Q."""

    def test_advancing(self):
        domain = Domain.halfline(2000, 0.001)
        params = HysteresisParams(0.21, 0.19)
        prev = radial_mask(domain, 0.5, [(0.0,)])
        result = step(prev, 1.0, domain, params)
        assert abs(measure(result.mask, domain) - 1 / 1.1) <= domain.h
        assert prev <= result.mask
        assert result.dissipation == pytest.approx(
            0.21 * (measure(result.mask, domain) - measure(prev, domain)))

    def test_pinned(self):
        domain = Domain.halfline(2000, 0.001)
        params = HysteresisParams(0.21, 0.19)
        prev = radial_mask(domain, 0.95, [(0.0,)])
        result = step(prev, 1.0, domain, params)
        assert result.mask == prev
        assert result.flips == 0 and result.dissipation == 0.0
        assert is_local_minimizer(prev, prev, 1.0, domain, params)

    def test_receding(self):
        domain = Domain.halfline(800, 0.005)
        params = HysteresisParams(0.21, 0.19)
        prev = radial_mask(domain, 2.0, [(0.0,)])
        result = step(prev, 1.0, domain, params)
        assert abs(measure(result.mask, domain) - 1 / 0.9) <= 2 * domain.h
        assert result.mask <= prev

    def test_orders_agree_on_unique_minimizer(self):
        domain = Domain.halfline(2000, 0.001)
        params = HysteresisParams(0.21, 0.19)
        prev = radial_mask(domain, 0.5, [(0.0,)])
        minimal, maximal = bracket_minimizers(prev, 1.0, domain, params)
        assert minimal.mask <= maximal.mask
        assert abs(measure(maximal.mask, domain) - measure(minimal.mask, domain)) <= domain.h

    def test_augmented_energy_matches_result(self, halfline, params):
        prev = radial_mask(halfline, 0.5, [(0.0,)])
        result = step(prev, 1.2, halfline, params)
        assert augmented_energy(prev, result.mask, 1.2, halfline, params) == pytest.approx(
            result.augmented, rel=1e-9)

    def test_box_too_small(self):
        domain = Domain.halfline(30, 0.01)
        params = HysteresisParams(0.2, 0.2)
        prev = radial_mask(domain, 0.2, [(0.0,)])
        with pytest.raises(DomainTooSmallError) as exc:
            step(prev, 1.0, domain, params)
        assert exc.value.cell == (29,)

    def test_bad_arguments(self, halfline, params):
        prev = radial_mask(halfline, 0.5, [(0.0,)])
        with pytest.raises(ConfigError):
            step(prev, 0.0, halfline, params)
        with pytest.raises(ConfigError):
            step(prev, 1.0, halfline, params, order='sideways')
        with pytest.raises(GeometryError):
            step(Mask(np.zeros(400, dtype=bool)), 1.0, halfline, params)


# ============================================================
# Exhaustive oracle
# ============================================================

class TestOracle:

    def test_matches_step_on_halfline(self):
        domain = Domain.halfline(20, 0.1)
        params = HysteresisParams(0.21, 0.19)
        prev = radial_mask(domain, 0.3, [(0.0,)])
        candidates = [(i,) for i in range(2, 19)]
        oracle = brute_force_step(prev, 1.0, domain, params, candidates)
        local = step(prev, 1.0, domain, params)
        assert oracle.mask.count() == 9
        assert oracle.mask == local.mask
        assert oracle.augmented == pytest.approx(local.augmented, rel=1e-9)

    def test_matches_local_search_2d(self):
        # every changeable cell of the bar box lies within the enumerated window
        domain = _box_with_bar()
        candidates = domain.free & ~domain.inner_boundary
        assert np.count_nonzero(candidates) == 17 <= MAX_WINDOW_CELLS
        rng = np.random.default_rng(11)
        for _ in range(50):
            F = float(rng.uniform(0.5, 2.0))
            params = HysteresisParams(float(rng.uniform(0.1, 0.5)), float(rng.uniform(0.5, 0.95)))
            prev = Mask(domain.inner_boundary | (candidates & (rng.random(domain.shape) < 0.5)))
            oracle = brute_force_step(prev, F, domain, params, candidates)
            local = step(prev, F, domain, params)
            assert abs(local.augmented - oracle.augmented) <= 1e-9 * max(abs(oracle.augmented), 1.0)
            assert is_local_minimizer(prev, oracle.mask, F, domain, params)

    def test_empty_candidates_returns_prev(self, halfline, params):
        prev = radial_mask(halfline, 0.5, [(0.0,)])
        result = brute_force_step(prev, 1.0, halfline, params, [])
        assert result.mask == prev and result.flips == 0

    def test_candidate_limit(self, halfline, params):
        prev = radial_mask(halfline, 0.5, [(0.0,)])
        cells = [(i,) for i in range(2, 2 + MAX_ORACLE_CANDIDATES + 1)]
        with pytest.raises(OracleLimitError):
            brute_force_step(prev, 1.0, halfline, params, cells)

    def test_inner_boundary_not_a_candidate(self, halfline, params):
        prev = radial_mask(halfline, 0.5, [(0.0,)])
        with pytest.raises(GeometryError):
            brute_force_step(prev, 1.0, halfline, params, [(1,)])


# ============================================================
# Lattice structure and one-sided minimality
# ============================================================

class TestLattice:

    def test_join_and_meet_do_not_raise_energy(self, disk_domain, params):
        prev = radial_mask(disk_domain, 2.0, [(0.0, 0.0)])
        m1 = radial_mask(disk_domain, 1.8, [(0.4, 0.0)])
        m2 = radial_mask(disk_domain, 1.9, [(-0.3, 0.5)])
        for F in (0.8, 1.5, 2.5):
            lhs, rhs = lattice_defect(prev, m1, m2, F, disk_domain, params)
            assert lhs <= rhs + 1e-8 * F * F

    def test_one_sided_minimality_of_step_result(self, halfline):
        params = HysteresisParams(0.21, 0.19)
        prev = radial_mask(halfline, 0.5, [(0.0,)])
        result = step(prev, 1.0, halfline, params)
        check = one_sided_minimality(result.profile, halfline, params)
        assert check.outward and check.inward
        assert check.outward_gain >= -1e-9 and check.inward_gain >= -1e-9

    def test_bracket_is_nested_2d(self, disk_domain, params):
        prev = radial_mask(disk_domain, 1.5, [(0.0, 0.0)])
        minimal, maximal = bracket_minimizers(prev, 1.6, disk_domain, params)
        assert minimal.mask <= maximal.mask
        for result in (minimal, maximal):
            assert is_local_minimizer(prev, result.mask, 1.6, disk_domain, params)

    def test_bracket_separates_merged_and_split_droplets(self):
        # droplet on cells 1..47, island on cells 53..70; the five-cell gap is a barrier
        domain = Domain.halfline(120, 0.02)
        params = HysteresisParams(0.2, 0.2)
        cells = np.zeros(120, dtype=bool)
        cells[1:48] = True
        cells[53:71] = True
        prev = Mask(cells)
        assert len(connected_components(prev, domain)) == 2
        minimal, maximal = bracket_minimizers(prev, 1.0, domain, params)
        assert minimal.mask <= maximal.mask and minimal.mask != maximal.mask
        # shrinking first drops the island; growing first bridges the gap, then recedes
        assert minimal.mask.count() == 47
        assert maximal.mask.count() == 56
        assert len(connected_components(maximal.mask, domain)) == 1
        for result in (minimal, maximal):
            assert is_local_minimizer(prev, result.mask, 1.0, domain, params)

    def test_bracket_raises_when_restarts_never_nest(self, monkeypatch, halfline, params):
        left = radial_mask(halfline, 0.5, [(0.0,)])
        right = Mask(halfline.inner_boundary)
        calls = []

        def fake_step(prev, F, domain, params, order=GROW_FIRST, start=None):
            calls.append(order)
            return SimpleNamespace(mask=left if order == SHRINK_FIRST else right)

        monkeypatch.setattr('utils.minmove.step', fake_step)
        with pytest.raises(SolverError, match="not nested"):
            bracket_minimizers(left, 1.0, halfline, params)
        assert len(calls) == 2 * (MAX_BRACKET_ROUNDS + 1)


class TestLayerMoves:
    """Greedy layer prefixes priced by Schur elimination."""

    @pytest.mark.parametrize("kind,radius,F", [(GROW, 1.6, 1.5), (SHRINK, 2.4, 0.6)])
    def test_prefix_totals_match_resolved_energy(self, disk_domain, params, kind, radius, F):
        prev = radial_mask(disk_domain, radius, [(0.0, 0.0)])
        search = _Search(prev, F, disk_domain, params)
        cells, totals = search._layer_path(kind)
        assert len(cells) > 20
        base = augmented_energy(prev, prev, F, disk_domain, params)
        for m in (0, 4, len(cells) // 2, len(cells) - 1):
            wet = prev.cells.copy()
            wet.flat[cells[:m + 1]] = (kind == GROW)
            flipped = augmented_energy(prev, Mask(wet), F, disk_domain, params)
            assert flipped - base == pytest.approx(totals[m], abs=1e-7)

    def test_greedy_order_on_decoupled_cells(self):
        # diagonal coupling: picks are independent, cheapest first
        coupling = np.diag([1.0, 2.0, 4.0])
        drive = np.array([1.0, 2.0, 1.0])
        order, changes = _greedy_order(coupling, drive, np.full(3, 0.5), -1.0)
        assert list(order) == [1, 0, 2]
        np.testing.assert_allclose(changes, [-1.5, -0.5, 0.25])

    def test_disk_advances_as_a_layer(self, disk_domain, params):
        prev = radial_mask(disk_domain, 1.5, [(0.0, 0.0)])
        result = step(prev, 2.5, disk_domain, params)
        assert prev <= result.mask
        assert result.mask.count() > prev.count() + 20
        assert is_local_minimizer(prev, result.mask, 2.5, disk_domain, params)


# ============================================================
# Time loop
# ============================================================

class TestRun:

    def test_record_fields(self, halfline_trace):
        assert len(halfline_trace) == 41
        assert halfline_trace.settle_flips == 0
        assert [r.index for r in halfline_trace] == list(range(41))
        assert halfline_trace[0].F == 1.0 and halfline_trace[20].F == 1.4
        assert halfline_trace[-1].t == 2.0

    def test_pinned_then_advancing_then_receding(self, halfline_trace):
        areas = [r.energy.volume for r in halfline_trace]
        assert all(a == pytest.approx(1.0) for a in areas[:6])
        assert areas[20] == pytest.approx(1.4 / 1.1, abs=0.02)
        assert max(areas) == areas[20]
        assert areas[-1] == pytest.approx(1.0, abs=0.02)
        assert all(b >= a for a, b in zip(areas[:21], areas[1:21]))
        assert all(b <= a for a, b in zip(areas[20:], areas[21:]))

    def test_dissipation_bookkeeping(self, halfline_trace):
        increments = [r.diss_increment for r in halfline_trace]
        cumulative = [r.cumulative_dissbar for r in halfline_trace]
        np.testing.assert_allclose(np.cumsum(increments), cumulative, rtol=1e-12)
        assert not any(r.jump_flag for r in halfline_trace)

    def test_frame(self, halfline_trace, tmp_path):
        frame = halfline_trace.frame()
        assert list(frame.columns) == ['t', 'F', 'area', 'D', 'J', 'P', 'diss_increment',
                                       'cumulative_dissbar', 'flips', 'jump_flag']
        np.testing.assert_allclose(frame['J'], frame['D'] + frame['area'])
        np.testing.assert_allclose(frame['P'], frame['D'] / frame['F'])
        halfline_trace.to_csv(tmp_path / 'trace.csv')
        assert (tmp_path / 'trace.csv').read_text().startswith('t,F,area,D,J,P')

    def test_rate_independence(self):
        domain = Domain.halfline(300, 0.01)
        params = HysteresisParams(0.2, 0.2)
        init = radial_mask(domain, 1.0, [(0.0,)])
        slow = run(Schedule.from_knots([[0, 1.0], [1, 1.5], [2, 1.1]], 0.1), init, domain, params)
        fast = run(Schedule.from_knots([[0, 1.0], [4, 1.5], [8, 1.1]], 0.4), init, domain, params)
        assert slow.masks == fast.masks
        assert [r.cumulative_dissbar for r in slow] == [r.cumulative_dissbar for r in fast]

    def test_rate_independence_2d(self, disk_domain, params):
        init = radial_mask(disk_domain, 1.6, [(0.0, 0.0)])
        slow = run(Schedule.from_knots([[0, 1.0], [1, 1.4], [2, 1.1]], 0.1), init,
                   disk_domain, params)
        fast = run(Schedule.from_knots([[0, 1.0], [10, 1.4], [20, 1.1]], 1.0), init,
                   disk_domain, params)
        assert slow.masks == fast.masks
        assert [r.cumulative_dissbar for r in slow] == [r.cumulative_dissbar for r in fast]
        assert len({m.count() for m in slow.masks}) > 1

    def test_unstable_initial_state_settles(self):
        domain = Domain.halfline(300, 0.01)
        params = HysteresisParams(0.2, 0.2)
        init = radial_mask(domain, 0.3, [(0.0,)])
        seen = []
        trace = run(Schedule.from_knots([[0, 1.0], [1, 1.0]], 0.5), init, domain, params,
                    on_record=seen.append)
        assert trace.settle_flips > 0 and trace.settle_diss > 0
        assert len(seen) == len(trace) == 3
        assert trace[0].diss_increment == 0.0
        assert trace[0].energy.volume == pytest.approx(1 / np.sqrt(1.2), abs=0.02)

    def test_step_error_carries_index(self):
        domain = Domain.halfline(30, 0.01)
        params = HysteresisParams(0.2, 0.2)
        init = radial_mask(domain, 0.2, [(0.0,)])
        with pytest.raises(StepError) as exc:
            run(Schedule.from_knots([[0, 1.0], [1, 1.2]], 0.5), init, domain, params)
        assert exc.value.index == 0
        assert isinstance(exc.value.cause, DomainTooSmallError)
