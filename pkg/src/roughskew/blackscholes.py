"""Black-Scholes call pricing, greeks and implied volatility at zero rates.

Everything is quoted in log space: ``x`` is the log spot, ``k`` the log
strike, ``tau`` the time to expiry in years and ``sigma`` the annualized
volatility.  With zero rates and no dividends the call price is

    BS = e^x N(d1) - e^k N(d2),
    d1 = (x - k) / (sigma sqrt(tau)) + sigma sqrt(tau) / 2,
    d2 = d1 - sigma sqrt(tau).

All functions broadcast over numpy arrays; scalars in, scalars out.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import NoConvergence, PriceOutOfBounds

__all__ = [
    "BsPoint",
    "d1",
    "d2",
    "bs_price",
    "vega",
    "vanna",
    "volga",
    "implied_vol",
    "inv_bs_first_derivative",
    "inv_bs_second_derivative",
]

_SQRT_2PI = np.sqrt(2.0 * np.pi)

# Below this total standard deviation the price is indistinguishable from
# intrinsic value in double precision; formulas are not evaluated there.
_DEGENERATE_STDDEV = 1e-12


def _phi(z):
    """Standard normal density."""
    return np.exp(-0.5 * z * z) / _SQRT_2PI


@dataclass(frozen=True)
class BsPoint:
    """A point in Black-Scholes coordinates.

    Parameters
    ----------
    x : float or ndarray
        Log spot.
    k : float or ndarray
        Log strike.
    tau : float or ndarray
        Time to expiry in years, strictly positive.
    sigma : float or ndarray
        Volatility, strictly positive.

    Fields broadcast against each other, so a single ``BsPoint`` can
    describe a whole grid of quotes.
    """

    x: object
    k: object
    tau: object
    sigma: object

    def __post_init__(self):
        x, k, tau, sigma = (np.asarray(v, dtype=float) for v in (self.x, self.k, self.tau, self.sigma))
        np.broadcast_shapes(x.shape, k.shape, tau.shape, sigma.shape)
        for name, v in (("x", x), ("k", k), ("tau", tau), ("sigma", sigma)):
            if not np.all(np.isfinite(v)):
                raise ValueError(f"BsPoint.{name} must be finite")
        if not np.all(tau > 0.0):
            raise ValueError("BsPoint.tau must be > 0")
        if not np.all(sigma > 0.0):
            raise ValueError("BsPoint.sigma must be > 0")

    @property
    def stddev(self):
        """Total standard deviation ``sigma * sqrt(tau)``."""
        return np.asarray(self.sigma) * np.sqrt(np.asarray(self.tau))


def _d1_raw(x, k, tau, sigma):
    srt = sigma * np.sqrt(tau)
    return (x - k) / srt + 0.5 * srt


def _d2_raw(x, k, tau, sigma):
    srt = sigma * np.sqrt(tau)
    return (x - k) / srt - 0.5 * srt


def _price_raw(x, k, tau, sigma):
    """Vectorized call price with the intrinsic-value limit.

    Where ``sigma*sqrt(tau) < 1e-12`` the lognormal has collapsed; the
    price is the intrinsic value ``max(e^x - e^k, 0)`` rather than a
    0/0 evaluation of the formula.
    """
    x, k, tau, sigma = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (x, k, tau, sigma))
    )
    srt = sigma * np.sqrt(tau)
    degenerate = srt < _DEGENERATE_STDDEV
    srt_safe = np.where(degenerate, 1.0, srt)
    m = x - k
    d1v = m / srt_safe + 0.5 * srt_safe
    price = np.exp(x) * ndtr(d1v) - np.exp(k) * ndtr(d1v - srt_safe)
    intrinsic = np.maximum(np.exp(x) - np.exp(k), 0.0)
    out = np.where(degenerate, intrinsic, price)
    return out if out.ndim else float(out)


def d1(p: BsPoint):
    """First Black-Scholes argument at ``p``."""
    return _d1_raw(p.x, p.k, p.tau, p.sigma)


def d2(p: BsPoint):
    """Second Black-Scholes argument, ``d1 - sigma sqrt(tau)``."""
    return _d2_raw(p.x, p.k, p.tau, p.sigma)


def bs_price(p: BsPoint):
    """Call price at ``p``, with the intrinsic-value degenerate limit."""
    return _price_raw(p.x, p.k, p.tau, p.sigma)


def vega(p: BsPoint):
    """Sensitivity of the call price to ``sigma``: ``e^x phi(d1) sqrt(tau)``."""
    return np.exp(p.x) * _phi(d1(p)) * np.sqrt(np.asarray(p.tau, dtype=float))


def vanna(p: BsPoint):
    """Cross sensitivity d^2 BS / (d sigma d x) = -e^x phi(d1) d2 / sigma.

    Proportional to ``d2``, so it vanishes exactly where ``d2 = 0`` —
    that zero is what the strike solvers in :mod:`roughskew.strikes`
    target.
    """
    return -np.exp(p.x) * _phi(d1(p)) * d2(p) / p.sigma


def volga(p: BsPoint):
    """Second sensitivity to volatility: ``vega * d1 * d2 / sigma``.

    Vanishes where either ``d1`` or ``d2`` is zero.
    """
    return vega(p) * d1(p) * d2(p) / p.sigma


def inv_bs_first_derivative(p: BsPoint):
    """d(implied vol)/d(price) along the price axis: ``1 / vega``.

    This is the first derivative of the price-to-vol map evaluated at the
    vol that reprices the point.
    """
    return 1.0 / vega(p)


def inv_bs_second_derivative(p: BsPoint):
    """Second derivative of the price-to-vol map.

    Closed form::

        (sigma^4 tau^2 - 4 (x - k)^2) / (4 (e^x phi(d1) tau)^2 sigma^3)

    equal to ``-volga / vega^3`` by the inverse-function rule; both forms
    agree to machine precision and the closed form is cheaper.
    """
    x = np.asarray(p.x, dtype=float)
    k = np.asarray(p.k, dtype=float)
    tau = np.asarray(p.tau, dtype=float)
    sigma = np.asarray(p.sigma, dtype=float)
    num = sigma**4 * tau**2 - 4.0 * (x - k) ** 2
    den = 4.0 * (np.exp(x) * _phi(_d1_raw(x, k, tau, sigma)) * tau) ** 2 * sigma**3
    return num / den


def implied_vol(x, k, tau, price, *, price_tol=1e-12, vol_tol=1e-10, max_iter=100):
    """Invert the Black-Scholes call price to a volatility.

    Safeguarded Newton: vega steps clipped to a maintained bisection
    bracket, so convergence is guaranteed for any admissible price.

    Parameters
    ----------
    x, k, tau : float or ndarray
        Log spot, log strike, time to expiry (years, > 0).
    price : float or ndarray
        Call price, strictly inside ``(intrinsic, e^x)``.
    price_tol : float
        Residual tolerance relative to spot ``e^x``.
    vol_tol : float
        Absolute tolerance on the volatility iterate.
    max_iter : int
        Iteration budget; exhausted -> :class:`NoConvergence`.

    Returns
    -------
    float or ndarray
        The implied volatility, same shape as the broadcast inputs.

    Raises
    ------
    PriceOutOfBounds
        If any price violates its static bounds (offenders attached).
    NoConvergence
        If the iteration budget is exhausted (best iterate attached).
    """
    x, k, tau, price = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (x, k, tau, price))
    )
    scalar_in = x.ndim == 0
    x, k, tau, price = (np.atleast_1d(v).astype(float) for v in (x, k, tau, price))
    if not np.all(tau > 0.0):
        raise ValueError("tau must be > 0")

    spot = np.exp(x)
    intrinsic = np.maximum(spot - np.exp(k), 0.0)
    bad = (price <= intrinsic) | (price >= spot) | ~np.isfinite(price)
    if np.any(bad):
        raise PriceOutOfBounds(
            f"{int(bad.sum())} price(s) outside (intrinsic, spot); "
            f"first offender: k={k[bad][0]:.6g} price={price[bad][0]:.6g} "
            f"bounds=({intrinsic[bad][0]:.6g}, {spot[bad][0]:.6g})",
            strikes=k[bad].copy(),
            prices=price[bad].copy(),
        )

    # Brenner-Subrahmanyam ATM guess, clipped into a sane band.
    sig = np.clip(price * _SQRT_2PI / (spot * np.sqrt(tau)), 1e-4, 2.0)

    # Bracket: at sigma=0+ the price is intrinsic < target, so lo=0 always
    # sits below the root.  Grow hi until it prices above the target.
    lo = np.zeros_like(sig)
    hi = np.maximum(2.0 * sig, 1.0)
    for _ in range(80):
        under = _price_raw(x, k, tau, hi) < price
        if not np.any(under):
            break
        hi[under] *= 2.0
    else:
        raise NoConvergence("failed to bracket the implied volatility", best=hi)

    sig = np.clip(sig, 1e-8, hi - 1e-12)
    active = np.ones(sig.shape, dtype=bool)
    for _ in range(max_iter):
        resid = _price_raw(x, k, tau, sig) - price
        above = resid > 0.0
        hi = np.where(active & above, sig, hi)
        lo = np.where(active & ~above, sig, lo)

        v = np.exp(x) * _phi(_d1_raw(x, k, tau, np.maximum(sig, 1e-300))) * np.sqrt(tau)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            newton = sig - resid / v
        use_newton = np.isfinite(newton) & (newton > lo) & (newton < hi)
        nxt = np.where(use_newton, newton, 0.5 * (lo + hi))

        step = np.abs(nxt - sig)
        scale = np.maximum(1.0, sig)
        done = (step <= vol_tol * scale) | (
            (np.abs(resid) <= price_tol * spot) & (step <= 1e-9)
        )
        done |= (hi - lo) <= vol_tol * scale
        sig = np.where(active, nxt, sig)
        active &= ~done
        if not np.any(active):
            break
    else:
        resid = _price_raw(x, k, tau, sig) - price
        raise NoConvergence(
            f"implied_vol: {int(active.sum())} point(s) unconverged after {max_iter} iterations",
            best=sig if not scalar_in else float(sig[0]),
            residual=float(np.max(np.abs(resid[active]))),
            iterations=max_iter,
        )
    return float(sig[0]) if scalar_in else sig.reshape(np.broadcast(x, k).shape)
