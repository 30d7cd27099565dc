# tests/unit/test_bessel.py
import os
import sys
import unittest

import numpy as np
import pytest
from scipy.special import ive

# Add the project root to the Python path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '../..')))

from feedflow.core.errors import DomainError
from feedflow.core.numerics import (
    THETA_TILDE,
    BesselMethod,
    amos_log_bounds,
    bessel_log_and_ratios,
    bessel_ratio,
    bessel_ratio2,
    bessel_ratio_bounds,
    evaluate_log_bessel,
    log_bessel_i,
)


class TestLogBessel(unittest.TestCase):
    """Log-domain Bessel values on the series path"""

    def test_zero_argument(self):
        """I_0(0) is one and higher orders vanish at zero"""
        self.assertEqual(log_bessel_i(0, 0.0), 0.0)
        self.assertTrue(np.isneginf(log_bessel_i(3, 0.0)))

    def test_known_value(self):
        """log I_0(2) matches its tabulated value"""
        self.assertAlmostEqual(log_bessel_i(0, 2.0), np.log(2.2795853023360673), places=12)

    def test_matches_scaled_scipy(self):
        """Series values agree with scipy's scaled Bessel function"""
        for d in (0, 1, 5, 20):
            for theta in (0.1, 1.0, 10.0, 300.0):
                expected = np.log(ive(d, theta)) + theta
                self.assertAlmostEqual(log_bessel_i(d, theta), expected, delta=1e-9 * max(1.0, abs(expected)))

    def test_large_argument_is_finite(self):
        """Very large arguments stay finite on the series path"""
        result = evaluate_log_bessel(2, 5e4)
        self.assertTrue(np.isfinite(result.log_value))
        self.assertEqual(result.method, BesselMethod.SERIES)
        self.assertAlmostEqual(result.log_value, np.log(ive(2, 5e4)) + 5e4, delta=1e-6)

    def test_domain_errors(self):
        """Negative orders and negative or infinite arguments are rejected"""
        with self.assertRaises(DomainError):
            log_bessel_i(-1, 1.0)
        with self.assertRaises(DomainError):
            log_bessel_i(0, -1.0)
        with self.assertRaises(DomainError):
            log_bessel_i(0, float("inf"))

    def test_fallback_when_series_capped(self):
        """A capped series falls back to a value between the Amos bounds"""
        result = evaluate_log_bessel(1, 2000.0, max_terms=10)
        self.assertEqual(result.method, BesselMethod.AMOS_BOUNDS)
        log_lower, log_upper = amos_log_bounds(1, 2000.0, THETA_TILDE)
        self.assertLessEqual(log_lower[0], result.log_value)
        self.assertLessEqual(result.log_value, log_upper[0])


class TestBesselRatios(unittest.TestCase):
    """First and second order ratios"""

    def test_zero_argument(self):
        """Both ratios vanish at a zero argument"""
        self.assertEqual(bessel_ratio(0, 0.0), 0.0)
        self.assertEqual(bessel_ratio2(0, 0.0), 0.0)

    def test_ratio_inside_bounds(self):
        """The first ratio lies inside its closed-form bounds"""
        lower, upper = bessel_ratio_bounds(0, 10.0)
        self.assertAlmostEqual(lower[0], 10.0 / (0.5 + np.sqrt(102.25)), places=12)
        self.assertAlmostEqual(upper[0], 10.0 / (0.5 + np.sqrt(100.25)), places=12)
        ratio = bessel_ratio(0, 10.0)
        self.assertTrue(lower[0] <= ratio <= upper[0])

    def test_series_ratio(self):
        """Series ratios agree with scipy"""
        self.assertAlmostEqual(bessel_ratio(5, 3.0), ive(6, 3.0) / ive(5, 3.0), delta=1e-10)
        self.assertAlmostEqual(bessel_ratio2(0, 2.0), ive(2, 2.0) / ive(0, 2.0), delta=1e-10)

    def test_second_ratio_below_first(self):
        """I_{d+2}/I_d never exceeds I_{d+1}/I_d"""
        for d in (0, 3, 12):
            for theta in (0.5, 7.0, 90.0):
                self.assertLessEqual(bessel_ratio2(d, theta), bessel_ratio(d, theta))

    def test_fallback_ratio_is_mid_bound(self):
        """On the fallback path the first ratio is the midpoint of its bounds"""
        _, ratio1, ratio2, on_series = bessel_log_and_ratios(0, 2000.0, max_terms=10)
        lower, upper = bessel_ratio_bounds(0, 2000.0)
        self.assertFalse(on_series[0])
        self.assertAlmostEqual(ratio1[0], 0.5 * (lower[0] + upper[0]), places=12)
        self.assertLessEqual(ratio2[0], ratio1[0])


@pytest.mark.parametrize("d", [0, 1, 7, 25, 50])
def test_amos_sandwich(d):
    """The series value lies between the Amos bounds anchored on the series path"""
    thetas = np.logspace(-1, 4, 15)
    log_values, _, _, _ = bessel_log_and_ratios(np.full(thetas.shape, d), thetas)
    anchors = np.minimum(thetas, THETA_TILDE)
    log_lower, log_upper = amos_log_bounds(np.full(thetas.shape, d), thetas, anchors)
    assert np.all(log_lower <= log_values + 1e-9)
    assert np.all(log_values <= log_upper + 1e-9)


@pytest.mark.parametrize("d", [0, 2, 10, 40])
def test_ratio_bounds_bracket_series(d):
    """Ratio bounds stay in [0, 1] and bracket the series ratio"""
    thetas = np.logspace(-1, 3, 12)
    _, ratio1, _, _ = bessel_log_and_ratios(np.full(thetas.shape, d), thetas)
    lower, upper = bessel_ratio_bounds(np.full(thetas.shape, d), thetas)
    assert np.all((0.0 <= lower) & (upper <= 1.0))
    assert np.all(lower <= ratio1 + 1e-12)
    assert np.all(ratio1 <= upper + 1e-12)


if __name__ == '__main__':
    unittest.main()
