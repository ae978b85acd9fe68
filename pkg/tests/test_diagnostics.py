import math
import warnings

import numpy as np
import pytest
from scipy.stats import norm

from stoplab import GbmParams, green_scan, sample_entry_time, stable_boundary_check
from stoplab.putsolver import Boundary

FLAT_LEVEL = 90.0


def crossing_probability(params: GbmParams, x0: float, level: float, horizon: float) -> float:
    """P(GBM from x0 dips to `level` by `horizon`), via the reflection formula
    for the running minimum of drifted Brownian motion in log space."""
    a = math.log(x0 / level)
    m = params.r - 0.5 * params.sigma**2
    st = params.sigma * math.sqrt(horizon)
    return float(
        norm.cdf((-a - m * horizon) / st)
        + math.exp(-2.0 * m * a / params.sigma**2) * norm.cdf((-a + m * horizon) / st)
    )


@pytest.fixture(scope="module")
def flat():
    return Boundary(t_grid=np.array([0.0, 1.0]), b=np.array([FLAT_LEVEL, FLAT_LEVEL]))


@pytest.fixture(scope="module")
def flat_samples(flat, params):
    on = sample_entry_time(flat, params, (0.0, 100.0), 20_000, 1e-3, seed=13, bridge=True)
    off = sample_entry_time(flat, params, (0.0, 100.0), 20_000, 1e-3, seed=13, bridge=False)
    return on, off


class TestSampleEntryTime:
    def test_first_passage_matches_closed_form(self, flat_samples, params):
        on, _ = flat_samples
        p_true = crossing_probability(params, 100.0, FLAT_LEVEL, 1.0)
        se = math.sqrt(p_true * (1.0 - p_true) / on.tau.size)
        z = (float(np.mean(on.hit)) - p_true) / se
        assert abs(z) <= 3.5

    def test_bridge_off_undercounts(self, flat_samples, params):
        # Monitoring only at grid times misses within-step excursions below
        # the level, so the no-bridge route must come in biased low.  Keeping
        # both routes honest is the point of having two of them.
        on, off = flat_samples
        p_true = crossing_probability(params, 100.0, FLAT_LEVEL, 1.0)
        se = math.sqrt(p_true * (1.0 - p_true) / off.tau.size)
        z = (float(np.mean(off.hit)) - p_true) / se
        assert z < -3.0
        assert float(np.mean(off.hit)) < float(np.mean(on.hit))

    def test_entry_state_sits_on_the_boundary(self, flat_samples):
        on, _ = flat_samples
        np.testing.assert_allclose(on.x_at_tau[on.hit], FLAT_LEVEL, rtol=1e-12)
        assert np.all(on.x_at_tau[~on.hit] > FLAT_LEVEL)

    def test_bridge_flags(self, flat_samples):
        on, off = flat_samples
        assert on.bridge_corrected.any()
        assert not off.bridge_corrected.any()
        assert np.all(on.hit[on.bridge_corrected])

    def test_tau_censoring(self, flat_samples):
        on, _ = flat_samples
        assert np.all(on.tau >= 0.0)
        assert np.all(on.tau[on.hit] < on.remaining)
        assert np.all(on.tau[~on.hit] == on.remaining)

    def test_far_start_rarely_hits(self, flat, params):
        sm = sample_entry_time(flat, params, (0.9, 200.0), 2000, 5e-4, seed=3)
        assert float(np.mean(sm.hit)) < 0.01

    def test_seed_reproducible(self, flat, params):
        a = sample_entry_time(flat, params, (0.9, 95.0), 1000, 5e-4, seed=5)
        b = sample_entry_time(flat, params, (0.9, 95.0), 1000, 5e-4, seed=5)
        c = sample_entry_time(flat, params, (0.9, 95.0), 1000, 5e-4, seed=6)
        np.testing.assert_array_equal(a.tau, b.tau)
        np.testing.assert_array_equal(a.x_at_tau, b.x_at_tau)
        assert not np.array_equal(a.tau, c.tau)

    def test_chunk_invariance(self, flat, params):
        # 4200 paths straddle the internal processing chunk; per-path streams
        # keep the first paths identical regardless.
        big = sample_entry_time(flat, params, (0.9, 95.0), 4200, 5e-4, seed=5)
        small = sample_entry_time(flat, params, (0.9, 95.0), 100, 5e-4, seed=5)
        np.testing.assert_array_equal(big.tau[:100], small.tau)
        np.testing.assert_array_equal(big.x_at_tau[:100], small.x_at_tau)

    def test_start_on_boundary_counts_time_zero(self, flat, params):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            sm = sample_entry_time(flat, params, (0.5, FLAT_LEVEL), 500, 1e-3, seed=1)
        assert np.all(sm.tau == 0.0)
        assert np.all(sm.hit)
        assert np.all(sm.x_at_tau == FLAT_LEVEL)

    def test_deep_start_warns(self, flat, params):
        with pytest.warns(UserWarning, match="deep inside"):
            sm = sample_entry_time(flat, params, (0.5, 50.0), 500, 1e-3, seed=1)
        assert np.all(sm.tau == 0.0)

    def test_hitting_variant_enters_immediately(self, flat, params):
        # From a boundary point the closed region is entered at once even
        # when the time-zero sample is excluded; only the interior set has a
        # genuinely positive hitting time.
        sm = sample_entry_time(flat, params, (0.5, FLAT_LEVEL), 2000, 1e-3, seed=4, include_start=False)
        assert np.all(sm.hit)
        assert np.all(sm.tau <= 1e-12)

    def test_rejects_bad_inputs(self, flat, params):
        with pytest.raises(ValueError, match="n_paths"):
            sample_entry_time(flat, params, (0.0, 100.0), 0, 1e-3, seed=0)
        with pytest.raises(ValueError, match="state"):
            sample_entry_time(flat, params, (0.0, -1.0), 10, 1e-3, seed=0)
        with pytest.raises(ValueError, match="remaining"):
            sample_entry_time(flat, params, (1.0, 100.0), 10, 1e-3, seed=0)
        with pytest.raises(ValueError, match="coarse"):
            sample_entry_time(flat, params, (0.0, 100.0), 10, 0.02, seed=0)
        bad = Boundary(t_grid=np.array([0.0, 1.0]), b=np.array([-5.0, -5.0]))
        with pytest.raises(ValueError, match="positive"):
            sample_entry_time(bad, params, (0.0, 100.0), 10, 1e-3, seed=0)


@pytest.fixture(scope="module")
def scan(boundary, params):
    return green_scan(
        boundary,
        params,
        (0.5, boundary(0.5)),
        n_terms=5,
        eps_list=(0.01, 0.02, 0.05),
        n_paths=3000,
        dt=2e-3,
        seed=7,
    )


@pytest.fixture(scope="module")
def report(boundary, params):
    return stable_boundary_check(boundary, params, (0.5, boundary(0.5)), n_paths=5000, dt=2e-4, seed=11)


class TestGreenScan:
    def test_approach_sequence(self, scan, boundary):
        b_t = boundary(0.5)
        np.testing.assert_array_equal(scan.n_values, np.arange(1, 6))
        np.testing.assert_allclose(scan.x_n, b_t * (1.0 + 0.1 * 0.5 ** scan.n_values))

    def test_table_shapes_and_ranges(self, scan):
        assert scan.p_hat.shape == scan.se.shape == (5, 3)
        assert np.all((scan.p_hat >= 0.0) & (scan.p_hat <= 1.0))
        np.testing.assert_allclose(scan.se, np.sqrt(scan.p_hat * (1.0 - scan.p_hat) / 3000))
        assert np.all(scan.mean_tau > 0.0)
        assert np.all(scan.mean_tau <= 0.5)

    def test_tail_nonincreasing_in_eps(self, scan):
        # Same taus per row, nested events: exact ordering, not statistical.
        assert np.all(np.diff(scan.p_hat, axis=1) <= 0.0)

    def test_monotone_toward_the_boundary(self, scan):
        assert scan.monotone

    def test_rejects_bad_inputs(self, boundary, params):
        with pytest.raises(ValueError, match="horizon"):
            green_scan(boundary, params, (1.0, 85.0))
        with pytest.raises(ValueError, match="n_terms"):
            green_scan(boundary, params, (0.5, boundary(0.5)), n_terms=3)
        with pytest.raises(ValueError, match="eps_list"):
            green_scan(boundary, params, (0.5, boundary(0.5)), eps_list=())
        with pytest.raises(ValueError, match="eps_list"):
            green_scan(boundary, params, (0.5, boundary(0.5)), eps_list=(0.01, -0.02))


class TestStableBoundaryCheck:
    def test_passes_on_extracted_boundary(self, report):
        assert report.passed
        assert report.fraction_exceeding <= 0.01
        assert abs(report.mean_difference) < 1e-3

    def test_default_interior_margin(self, report, params):
        assert report.delta == pytest.approx(params.sigma * report.boundary_level * math.sqrt(2e-4) * 1e-2)

    def test_region_entered_immediately(self, report):
        # Hitting the closed region from its boundary takes no time; the
        # signal lives entirely in the interior hitting times.
        assert np.all(report.tau_region <= 1e-12)
        assert np.all(report.tau_interior >= 0.0)
        assert np.any(report.tau_interior > 0.0)

    def test_decreasing_boundary_rejected(self, params):
        bad = Boundary(t_grid=np.array([0.0, 1.0]), b=np.array([90.0, 80.0]))
        with pytest.raises(ValueError, match="nondecreasing"):
            stable_boundary_check(bad, params, (0.5, 85.0))

    def test_negative_delta_rejected(self, boundary, params):
        with pytest.raises(ValueError, match="delta"):
            stable_boundary_check(boundary, params, (0.5, boundary(0.5)), n_paths=100, dt=1e-3, delta=-1.0)
