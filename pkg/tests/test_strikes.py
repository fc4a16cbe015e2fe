"""Zero-vanna strike solving on synthetic smiles with known roots."""

import numpy as np
import pytest
from scipy.optimize import brentq

import roughskew.blackscholes as bs
from roughskew.errors import NoConvergence
from roughskew.smile import SmileInterpolant, SmileSlice
from roughskew.strikes import (
    dual_zero_vanna_strike,
    skew_diff,
    zero_vanna_pair,
    zero_vanna_strike,
)


def flat_smile(sigma=0.2, tau=0.5, x=0.0, n=21, half_width=0.4):
    k = x + np.linspace(-half_width, half_width, n)
    return SmileInterpolant(
        SmileSlice(t=0.0, maturity=tau, log_spot=x, strikes=k,
                   ivs=np.full(n, sigma))
    )


def sloped_smile(sigma=0.2, slope=-0.2, tau=0.5, x=0.0, n=41, half_width=0.4):
    k = x + np.linspace(-half_width, half_width, n)
    ivs = sigma + slope * (k - x)
    return SmileInterpolant(
        SmileSlice(t=0.0, maturity=tau, log_spot=x, strikes=k, ivs=ivs)
    )


class TestFlatSmileClosedForm:
    """On a flat smile both fixed points are exact: k∓ = x ∓ σ²τ/2."""

    @pytest.mark.parametrize("sigma,tau,x", [
        (0.2, 0.5, 0.0),
        (0.45, 2.0, 1.3),
        (0.05, 0.01, -0.7),
    ])
    def test_both_roots(self, sigma, tau, x):
        interp = flat_smile(sigma, tau, x)
        minus = zero_vanna_strike(interp)
        plus = dual_zero_vanna_strike(interp)
        assert minus.k == pytest.approx(x - sigma**2 * tau / 2, abs=1e-10)
        assert plus.k == pytest.approx(x + sigma**2 * tau / 2, abs=1e-10)
        assert minus.iv == pytest.approx(sigma, abs=1e-12)
        assert plus.iv == pytest.approx(sigma, abs=1e-12)

    def test_pair_width(self):
        interp = flat_smile(0.2, 1.0, 0.0)
        pair = zero_vanna_pair(interp)
        assert pair.width == pytest.approx(0.2**2 * 1.0, abs=1e-10)

    def test_flat_skew_diff_is_zero(self):
        est = skew_diff(flat_smile())
        assert est.value == pytest.approx(0.0, abs=1e-12)
        assert est.stderr == 0.0


class TestResiduals:
    def test_d_functions_vanish_at_roots(self):
        interp = sloped_smile()
        minus = zero_vanna_strike(interp)
        plus = dual_zero_vanna_strike(interp)
        slc = interp.slice
        d2 = bs.d2(bs.BsPoint(slc.log_spot, minus.k, slc.tau, minus.iv))
        d1 = bs.d1(bs.BsPoint(slc.log_spot, plus.k, slc.tau, plus.iv))
        assert abs(d2) < 1e-9
        assert abs(d1) < 1e-9
        assert minus.residual < 1e-9 and plus.residual < 1e-9
        assert minus.iterations <= 50 and plus.iterations <= 50

    def test_against_independent_root_finder(self):
        # brentq on the same d-functions is a fully independent solver
        interp = sloped_smile(sigma=0.25, slope=-0.35, tau=1.5)
        slc = interp.slice

        def d2_of_k(k):
            return bs.d2(bs.BsPoint(slc.log_spot, k, slc.tau, interp.iv_at(k)))

        def d1_of_k(k):
            return bs.d1(bs.BsPoint(slc.log_spot, k, slc.tau, interp.iv_at(k)))

        lo, hi = interp.domain
        k_minus_ref = brentq(d2_of_k, lo, hi, xtol=1e-14)
        k_plus_ref = brentq(d1_of_k, lo, hi, xtol=1e-14)
        assert zero_vanna_strike(interp).k == pytest.approx(k_minus_ref, abs=1e-9)
        assert dual_zero_vanna_strike(interp).k == pytest.approx(k_plus_ref, abs=1e-9)

    def test_skew_diff_sign_on_negative_slope(self):
        # downward-sloping smile: iv at k+ is below iv at k-
        est = skew_diff(sloped_smile(slope=-0.2))
        assert est.value < 0.0


class TestShortExpiryCollapse:
    def test_tiny_tau_returns_atm(self):
        interp = flat_smile(0.2, 1e-8, 0.3)
        minus = zero_vanna_strike(interp)
        plus = dual_zero_vanna_strike(interp)
        assert minus.k == 0.3 and plus.k == 0.3
        assert minus.iterations == 0

    def test_moderately_short_tau_still_solves(self):
        interp = flat_smile(0.2, 1e-4, 0.0, half_width=0.05)
        minus = zero_vanna_strike(interp)
        assert minus.k == pytest.approx(-0.2**2 * 1e-4 / 2, abs=1e-12)


class TestStderrPlumbing:
    def test_stderr_read_off_the_band(self):
        n = 21
        k = np.linspace(-0.4, 0.4, n)
        interp = SmileInterpolant(
            SmileSlice(t=0.0, maturity=0.5, log_spot=0.0, strikes=k,
                       ivs=np.full(n, 0.2), iv_stderrs=np.full(n, 3e-4))
        )
        pair = zero_vanna_pair(interp)
        assert pair.minus.stderr == pytest.approx(3e-4)
        est = skew_diff(interp)
        assert est.stderr == pytest.approx(np.hypot(3e-4, 3e-4))


class TestFailureModes:
    def test_domain_too_narrow(self):
        # root at ±σ²τ/2 = ±0.045 but the grid only spans ±0.01:
        # the d2 function never changes sign inside the domain
        interp = flat_smile(0.3, 1.0, 0.0, half_width=0.01)
        with pytest.raises(NoConvergence):
            zero_vanna_strike(interp)

    def test_bisection_fallback_recovers_root(self):
        # starve the fixed point of iterations; the bisection fallback
        # must land on the same root
        interp = flat_smile(0.2, 0.5, 0.0)
        minus = zero_vanna_strike(interp, max_iter=1)
        assert minus.k == pytest.approx(-0.2**2 * 0.5 / 2, abs=1e-9)
        assert minus.residual < 1e-8
