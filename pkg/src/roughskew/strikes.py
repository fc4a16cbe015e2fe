"""Zero-vanna strikes on an interpolated smile.

The vanna of a call vanishes where ``d2(k, I(k)) = 0``, i.e. at the
fixed point ``k- = x - I(k-)^2 tau / 2``; the dual root ``d1 = 0`` sits
at ``k+ = x + I(k+)^2 tau / 2``.  The difference of the smile values at
the two strikes, ``I(k+) - I(k-)``, is the smile-based estimate of the
spot/vol covariance that :mod:`roughskew.analytics` compares against the
simulated product moment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import blackscholes as bs
from .errors import NoConvergence, OutOfDomain
from .pricer import Estimate
from .smile import SmileInterpolant

__all__ = [
    "ZeroVannaPoint",
    "ZeroVannaPair",
    "zero_vanna_strike",
    "dual_zero_vanna_strike",
    "zero_vanna_pair",
    "skew_diff",
]

# Below this time to expiry both roots collapse onto the spot faster than
# floating point can resolve; return the ATM point directly.
_TAU_COLLAPSE = 1e-6


@dataclass(frozen=True)
class ZeroVannaPoint:
    """One root: its log strike, smile vol there, and solver diagnostics."""

    k: float
    iv: float
    iterations: int
    residual: float
    stderr: float | None = None


@dataclass(frozen=True)
class ZeroVannaPair:
    """Both roots of one smile: ``minus`` (d2 = 0) and ``plus`` (d1 = 0)."""

    minus: ZeroVannaPoint
    plus: ZeroVannaPoint

    @property
    def width(self) -> float:
        """Strike distance ``k+ - k-``; equals ``I^2 tau`` to leading order."""
        return self.plus.k - self.minus.k


def _d_residual(interp: SmileInterpolant, k: float, sign: float) -> float:
    """d2 (sign=-1) or d1 (sign=+1) evaluated on the smile at k."""
    slc = interp.slice
    p = bs.BsPoint(slc.log_spot, k, slc.tau, interp.iv_at(k))
    return bs.d2(p) if sign < 0 else bs.d1(p)


def _solve(interp: SmileInterpolant, sign: float, tol: float, max_iter: int) -> ZeroVannaPoint:
    """Solve k = x + sign * I(k)^2 tau / 2 by damped fixed point + bisection.

    The fixed-point map is a strong contraction for every smile of
    practical steepness (its derivative is ``sign * tau * I * dI/dk``), so
    plain iteration from ATM converges in a handful of steps; the damped
    retry and the bisection fallback cover pathological inputs.
    """
    slc = interp.slice
    x, tau = slc.log_spot, slc.tau
    if tau <= _TAU_COLLAPSE:
        iv = interp.atm_iv()
        return ZeroVannaPoint(k=x, iv=iv, iterations=0, residual=0.0,
                              stderr=float(interp.stderr_at(x)))

    def target(k: float) -> float:
        return x + sign * interp.iv_at(k) ** 2 * tau / 2.0

    lo, hi = interp.domain
    k = x
    prev_gap = np.inf
    for it in range(1, max_iter + 1):
        try:
            k_new = target(k)
        except OutOfDomain:
            raise OutOfDomain(
                "zero-vanna fixed point left the smile domain; widen the strike grid"
            )
        gap = abs(k_new - k)
        if gap > prev_gap:
            k_new = 0.5 * (k + k_new)  # damp when the iteration stops contracting
            gap = abs(k_new - k)
        if not (lo <= k_new <= hi):
            break
        k = k_new
        if gap <= tol * max(1.0, abs(x)):
            resid = abs(_d_residual(interp, k, sign))
            return ZeroVannaPoint(k=k, iv=float(interp.iv_at(k)), iterations=it,
                                  residual=resid, stderr=float(interp.stderr_at(k)))
        prev_gap = gap

    # Bisection fallback on g(k) = d2 (or d1), which decreases through 0.
    grid = np.linspace(lo, hi, 257)
    vals = np.array([_d_residual(interp, g, sign) for g in grid])
    signs = np.sign(vals)
    flips = np.nonzero(signs[:-1] * signs[1:] < 0)[0]
    if flips.size == 0:
        raise NoConvergence(
            "no sign change of the d-function inside the smile domain",
            best=k, residual=float(np.min(np.abs(vals))),
        )
    a, b_ = grid[flips[0]], grid[flips[0] + 1]
    fa = _d_residual(interp, a, sign)
    for it in range(200):
        mid = 0.5 * (a + b_)
        fm = _d_residual(interp, mid, sign)
        if fa * fm <= 0:
            b_ = mid
        else:
            a, fa = mid, fm
        if b_ - a <= tol * max(1.0, abs(x)):
            break
    k = 0.5 * (a + b_)
    return ZeroVannaPoint(k=k, iv=float(interp.iv_at(k)), iterations=max_iter + it + 1,
                          residual=abs(_d_residual(interp, k, sign)),
                          stderr=float(interp.stderr_at(k)))


def zero_vanna_strike(interp: SmileInterpolant, *, tol: float = 1e-12,
                      max_iter: int = 50) -> ZeroVannaPoint:
    """The vanna-zero strike ``k- = x - I(k-)^2 tau / 2`` (root of d2)."""
    return _solve(interp, -1.0, tol, max_iter)


def dual_zero_vanna_strike(interp: SmileInterpolant, *, tol: float = 1e-12,
                           max_iter: int = 50) -> ZeroVannaPoint:
    """The dual strike ``k+ = x + I(k+)^2 tau / 2`` (root of d1)."""
    return _solve(interp, +1.0, tol, max_iter)


def zero_vanna_pair(interp: SmileInterpolant, *, tol: float = 1e-12,
                    max_iter: int = 50) -> ZeroVannaPair:
    """Both roots in one call."""
    return ZeroVannaPair(
        minus=zero_vanna_strike(interp, tol=tol, max_iter=max_iter),
        plus=dual_zero_vanna_strike(interp, tol=tol, max_iter=max_iter),
    )


def skew_diff(interp: SmileInterpolant, *, tol: float = 1e-12,
              max_iter: int = 50) -> Estimate:
    """Smile difference ``I(k+) - I(k-)`` with a combined standard error.

    The two iv stderrs are combined as if independent, which overstates
    the error when both vols come from the same Monte Carlo paths — a
    deliberately conservative choice.
    """
    pair = zero_vanna_pair(interp, tol=tol, max_iter=max_iter)
    se_m = pair.minus.stderr or 0.0
    se_p = pair.plus.stderr or 0.0
    return Estimate(
        value=pair.plus.iv - pair.minus.iv,
        stderr=float(np.hypot(se_m, se_p)),
        n=None,
    )
