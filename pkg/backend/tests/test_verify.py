"""
Tests for the verification harness: certificates on a simulated trace and
on hand-built traces that break one property at a time.
"""

import math

import numpy as np
import pytest

from tests.conftest import radial_run
from utils.field import energy_report, solve_harmonic
from utils.geometry import (
    Domain, HysteresisParams, Mask, connected_components, frontier, radial_mask,
)
from utils.minmove import Schedule, Trace, TraceRecord, run
from utils.verify import (
    CERTIFICATE_NAMES, Certificate, ComponentRelation, JumpRecord, VerifySettings,
    check_dissipation_inequality, check_dynamic_slope, check_energy_balance, check_gronwall,
    check_stability, jump_certificate, jump_report, regularity_report, stability_violations,
    verify_trace,
)


def _trace(domain, params, masks, forcing, times=None):
    """Trace from given states; the bookkeeping columns are left at zero."""
    times = times if times is not None else list(range(len(masks)))
    records = []
    for k, (mask, F, t) in enumerate(zip(masks, forcing, times)):
        profile = solve_harmonic(domain, mask, F)
        records.append(TraceRecord(index=k, t=float(t), F=F, profile=profile,
                                   energy=energy_report(profile, domain), diss_increment=0.0,
                                   cumulative_dissbar=0.0, flips=0, jump_flag=False))
    return Trace(domain=domain, params=params, records=records)


@pytest.fixture
def coarse_line():
    return Domain.halfline(60, 0.1)


# ============================================================
# A simulated trace passes everything
# ============================================================

class TestSimulatedTrace:

    def test_all_certificates_pass(self, halfline_trace):
        results, jumps = verify_trace(halfline_trace)
        assert set(results) == set(CERTIFICATE_NAMES)
        failed = [c.summary() for c in results.values() if not c.passed]
        assert failed == []
        assert jumps == []

    def test_balance_notes_for_loop(self, halfline_trace):
        cert = check_energy_balance(halfline_trace)
        assert cert.notes["monotone"] is False and cert.notes["one_sided"] is True
        assert cert.notes["dissbar"] > 0

    def test_dissipation_inequality_notes(self, halfline_trace):
        cert = check_dissipation_inequality(halfline_trace)
        assert cert.notes["pairs"] == 41 * 40 // 2
        assert cert.notes["g_max"] <= cert.notes["g_bound"] + 1e-12
        assert len(cert.series) == 41

    def test_dynamic_slope_sees_both_directions(self, halfline_trace):
        cert = check_dynamic_slope(halfline_trace)
        assert not cert.vacuous
        assert cert.notes["advancing_samples"] > 0 and cert.notes["receding_samples"] > 0

    def test_gronwall_series(self, halfline_trace):
        cert = check_gronwall(halfline_trace)
        bv = cert.notes["bv_series"]
        assert bv[0] == 0.0 and all(b >= a for a, b in zip(bv, bv[1:]))

    def test_subset_and_unknown_names(self, halfline_trace):
        results, _ = verify_trace(halfline_trace, ['gronwall'])
        assert list(results) == ['gronwall']
        with pytest.raises(ValueError, match="unknown certificates"):
            verify_trace(halfline_trace, ['gronwall', 'vibes'])


# ============================================================
# Broken traces
# ============================================================

class TestStability:

    def test_violation_distance(self):
        p = HysteresisParams(0.2, 0.2)
        np.testing.assert_allclose(stability_violations(np.array([0.5, 1.0, 1.5]), p),
                                   [0.3, 0.0, 0.3])

    def test_stable_state(self, coarse_line):
        p = HysteresisParams(0.2, 0.2)
        trace = _trace(coarse_line, p, [radial_mask(coarse_line, 0.95, [(0.0,)])], [1.0])
        assert check_stability(trace).passed

    def test_dilated_state_fails(self, coarse_line):
        p = HysteresisParams(0.2, 0.2)
        good = radial_mask(coarse_line, 0.95, [(0.0,)])
        dilated = radial_mask(coarse_line, 1.25, [(0.0,)])
        assert dilated.count() == good.count() + 3
        cert = check_stability(_trace(coarse_line, p, [good, dilated], [1.0, 1.0]))
        assert not cert.passed
        assert cert.argmax_step == 1
        assert cert.worst_residual == pytest.approx(0.8 - 1 / 1.69, rel=1e-6)
        assert cert.notes["violation_count"] == 1


class TestEnergyInequalities:

    def _spurious_growth(self, domain):
        p = HysteresisParams(0.2, 0.2)
        masks = [radial_mask(domain, r, [(0.0,)]) for r in (0.95, 1.45)]
        return _trace(domain, p, masks, [1.0, 1.0])

    def test_dissipation_inequality_fails(self, coarse_line):
        cert = check_dissipation_inequality(self._spurious_growth(coarse_line))
        assert not cert.passed
        assert cert.notes["worst_pair"] == [0, 1]
        expected = (0.2 * 0.5 - (2.0 - (1 / 1.5 + 1.5))) / 2.0
        assert cert.worst_residual == pytest.approx(expected, rel=1e-6)

    def test_gronwall_fails(self, coarse_line):
        cert = check_gronwall(self._spurious_growth(coarse_line))
        assert not cert.passed
        assert cert.argmax_step == 1

    def test_single_record_is_vacuous(self, coarse_line):
        trace = _trace(coarse_line, HysteresisParams(0.2, 0.2),
                       [radial_mask(coarse_line, 0.95, [(0.0,)])], [1.0])
        assert check_dissipation_inequality(trace).vacuous
        assert check_energy_balance(trace).vacuous

    def test_constant_state_is_vacuous_for_dynamic_slope(self, coarse_line):
        mask = radial_mask(coarse_line, 0.95, [(0.0,)])
        trace = _trace(coarse_line, HysteresisParams(0.2, 0.2), [mask, mask, mask], [1.0, 1.0, 1.0])
        cert = check_dynamic_slope(trace)
        assert cert.vacuous and cert.passed


# ============================================================
# Regularity
# ============================================================

class TestRegularity:

    def _radial_state(self, disk_domain):
        return radial_mask(disk_domain, 2.0, [(0.0, 0.0)])

    def test_radial_state_passes(self, disk_domain):
        trace = _trace(disk_domain, HysteresisParams(0.2, 0.2), [self._radial_state(disk_domain)],
                       [2 * math.log(2.0)])
        cert = regularity_report(trace)
        assert cert.passed, cert.notes
        assert cert.notes["perimeter"][0] > 2 * math.pi * 2.0

    def test_tendril_fails_density(self, disk_domain):
        cells = self._radial_state(disk_domain).cells.copy()
        cells[46:54, 30] = True
        trace = _trace(disk_domain, HysteresisParams(0.2, 0.2), [Mask(cells)], [2 * math.log(2.0)])
        cert = regularity_report(trace)
        assert not cert.passed
        assert cert.notes["density_min"][0] == pytest.approx(4 / 45)


# ============================================================
# Jumps
# ============================================================

class TestJumps:

    @pytest.fixture
    def two_disks(self):
        return Domain.with_disks((61, 97), 0.125, [((0.0, -2.5), 1.0), ((0.0, 2.5), 1.0)])

    def test_growth_on_one_droplet(self, two_disks):
        left = radial_mask(two_disks, 1.5, [(0.0, -2.5), (0.0, 2.5)])
        right = left | radial_mask(two_disks, 2.0, [(0.0, -2.5)])
        trace = _trace(two_disks, HysteresisParams(0.2, 0.2), [left, right], [1.5, 1.5])
        jumps = jump_report(trace, check_minimality=False)
        assert len(jumps) == 1
        relations = [rel for _, rel in jumps[0].per_component_ordering]
        assert relations == [ComponentRelation.GROWS, ComponentRelation.EQUAL]
        assert jumps[0].monotone and jumps[0].index == 1
        assert jumps[0].to_dict()["components"][0]["relation"] == '⊆'

    def test_sliding_droplet_is_incomparable(self, disk_domain):
        left = radial_mask(disk_domain, 1.8, [(0.3, 0.0)])
        right = radial_mask(disk_domain, 1.8, [(-0.3, 0.0)])
        trace = _trace(disk_domain, HysteresisParams(0.2, 0.2), [left, right], [1.2, 1.2])
        jumps = jump_report(trace, check_minimality=False)
        assert [rel for _, rel in jumps[0].per_component_ordering] == [ComponentRelation.INCOMPARABLE]
        assert not jumps[0].monotone
        assert not jump_certificate(jumps, len(trace)).passed

    def test_facet_run_and_merge_at_scenario_threshold(self, two_disks):
        centers = [(0.0, -2.5), (0.0, 2.5)]
        apart = radial_mask(two_disks, 1.4, centers)
        run_cells = np.flatnonzero(frontier(apart.cells, two_disks))[:20]
        facet = apart.cells.copy()
        facet.flat[run_cells] = True
        facet = Mask(facet)
        x, y = two_disks.centers()
        merged = facet | Mask((np.abs(x) < 0.5) & (np.abs(y) < 1.6) & two_disks.free)
        assert (apart ^ facet).count() == 20 and (facet ^ merged).count() > 60
        assert len(connected_components(merged, two_disks)) == 1
        trace = _trace(two_disks, HysteresisParams(0.2, 0.2), [apart, facet, merged],
                       [1.5, 1.5, 1.5])
        assert len(jump_report(trace, check_minimality=False)) == 2
        jumps = jump_report(trace, 60 * two_disks.cell_volume, check_minimality=False)
        assert [j.index for j in jumps] == [2]
        assert [rel for _, rel in jumps[0].per_component_ordering] == [ComponentRelation.GROWS]

    def test_small_changes_are_not_jumps(self, coarse_line):
        masks = [radial_mask(coarse_line, r, [(0.0,)]) for r in (0.95, 1.05, 1.15)]
        trace = _trace(coarse_line, HysteresisParams(0.2, 0.2), masks, [1.0, 1.1, 1.2])
        assert jump_report(trace) == []

    def _record(self, relation, index=3):
        mask = Mask(np.ones((3, 3), dtype=bool))
        return JumpRecord(index=index, t=0.5, left_mask=mask, right_mask=mask, measure=1.0,
                          per_component_ordering=[(mask, relation)],
                          right_is_minimizer=True, right_stable=True)

    def test_certificate_counts(self):
        good = [self._record(ComponentRelation.GROWS)]
        assert jump_certificate(good, 5, expected=1).passed
        cert = jump_certificate(good, 5, expected=3)
        assert not cert.passed and cert.worst_residual == 2.0
        assert jump_certificate([], 5).passed

    def test_certificate_flags_bad_step(self):
        cert = jump_certificate([self._record(ComponentRelation.INCOMPARABLE, index=2)], 5)
        assert cert.series == [0.0, 0.0, 1.0, 0.0, 0.0]
        assert cert.argmax_step == 2


# ============================================================
# Certificate records
# ============================================================

class TestCertificate:

    def test_json_replaces_non_finite(self):
        cert = Certificate(name='x', passed=True, worst_residual=0.0, tolerance=1.0,
                           notes={"a": float('nan'), "b": [np.float64(2.0), float('inf')]})
        doc = cert.to_json('certificates/x.csv')
        assert doc["notes"] == {"a": None, "b": [2.0, None]}
        assert doc["pass"] is True and doc["series_path"] == 'certificates/x.csv'

    def test_summary_and_frame(self):
        cert = Certificate(name='gronwall', passed=False, worst_residual=0.5, tolerance=0.1,
                           argmax_step=4, series=[0.0, 0.5])
        assert cert.summary().startswith("gronwall: FAIL")
        assert "at step 4" in cert.summary()
        assert list(cert.series_frame().columns) == ['step', 'residual']

    def test_settings_flow_into_checks(self, halfline_trace):
        strict = VerifySettings(tol_stability=0.0)
        results, _ = verify_trace(halfline_trace, ['stability'], strict)
        assert results['stability'].tolerance == 0.0

    def test_slope_method_setting(self, halfline_trace):
        settings = VerifySettings(slope_method='stencil')
        results, _ = verify_trace(halfline_trace, ['stability'], settings)
        assert results['stability'].notes['slope_method'] == 'stencil'


# ============================================================
# Radial loop around a disk and refinement
# ============================================================

class TestRadialLoop:
    """Slope certificates on a coarse 2d loop, F = 1 → 2 → 1."""

    def test_stability_violations_are_rare(self, small_radial_loop):
        cert = check_stability(small_radial_loop)
        notes = cert.notes
        assert notes["slope_method"] == 'fit'
        assert notes["violation_count"] <= 0.05 * notes["samples"]
        q_minus, q_plus = notes["interval"]
        medians = np.array(notes["median_slope2"])
        assert np.all((medians >= q_minus - cert.tolerance) & (medians <= q_plus + cert.tolerance))

    def test_dynamic_slope_medians(self, small_radial_loop):
        cert = check_dynamic_slope(small_radial_loop)
        notes = cert.notes
        assert notes["advancing_samples"] > 0 and notes["receding_samples"] > 0
        assert notes["advancing_median_deviation"] <= cert.tolerance
        assert notes["receding_median_deviation"] <= cert.tolerance

    def test_advancing_half_passes(self, small_radial_loop):
        records = small_radial_loop.records[:26]
        assert records[-1].F == pytest.approx(2.0)
        advancing = Trace(domain=small_radial_loop.domain, params=small_radial_loop.params,
                          records=records)
        assert check_dynamic_slope(advancing).passed
        stability = check_stability(advancing).notes
        assert stability["violation_count"] <= 0.02 * stability["samples"]


class TestRefinement:

    def test_violation_count_halves_with_h(self):
        knots = [[0.0, 1.0], [1.0, 1.6]]
        coarse = check_stability(radial_run(6, knots, 0.1)).notes["violation_count"]
        fine = check_stability(radial_run(12, knots, 0.1)).notes["violation_count"]
        assert fine <= coarse / 2

    def test_balance_improves_with_h_and_delta(self):
        params = HysteresisParams(0.2, 0.2)
        knots = [[0.0, 1.0], [1.0, 1.6], [2.0, 1.2]]
        residuals = []
        for n, h, delta in ((300, 0.01, 0.04), (600, 0.005, 0.02)):
            domain = Domain.halfline(n, h)
            init = radial_mask(domain, 1.0 / 1.2 ** 0.5, [(0.0,)])
            trace = run(Schedule.from_knots(knots, delta), init, domain, params)
            residuals.append(check_energy_balance(trace).worst_residual)
        assert residuals[1] < residuals[0] <= 0.05
