"""Implied-volatility smiles on a single maturity.

A :class:`SmileSlice` is the raw data — log strikes with implied vols and
optional Monte Carlo standard errors.  :class:`SmileInterpolant` wraps it
in a monotonicity-preserving piecewise cubic (PCHIP), which is C^1, never
overshoots the node values, and has an analytic first derivative — the
properties the zero-vanna strike solver and the ATM skew read-off rely on.
"""

from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator

from . import blackscholes as bs
from .errors import OutOfDomain, PriceOutOfBounds

__all__ = ["SmileSlice", "SmileInterpolant", "build_slice"]


@dataclass(frozen=True)
class SmileSlice:
    """Implied vols on one maturity.

    Parameters
    ----------
    t : float
        Observation time in years.
    maturity : float
        Expiry time; ``maturity - t`` is the time to expiry and must be
        positive.
    log_spot : float
        Log spot at time ``t``; must lie inside the strike range so ATM
        quantities are interpolations, not extrapolations.
    strikes : ndarray
        Log strikes, strictly increasing, at least 4 of them.
    ivs : ndarray
        Implied vols per strike, strictly positive.
    iv_stderrs : ndarray or None
        Monte Carlo standard errors per strike (optional).
    iv_cov : ndarray or None
        Covariance matrix of the iv estimates across strikes (optional;
        diagonal consistent with ``iv_stderrs**2``).  Present when the
        ivs were inverted from prices estimated on a shared path set,
        where cross-strike correlations are near one.  Not serialized by
        :meth:`to_tsv`.
    """

    t: float
    maturity: float
    log_spot: float
    strikes: np.ndarray
    ivs: np.ndarray
    iv_stderrs: np.ndarray | None = None
    iv_cov: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "strikes", np.asarray(self.strikes, dtype=float))
        object.__setattr__(self, "ivs", np.asarray(self.ivs, dtype=float))
        if self.iv_stderrs is not None:
            object.__setattr__(self, "iv_stderrs", np.asarray(self.iv_stderrs, dtype=float))
        if self.iv_cov is not None:
            object.__setattr__(self, "iv_cov", np.asarray(self.iv_cov, dtype=float))
        if self.maturity - self.t <= 0.0:
            raise ValueError("SmileSlice requires maturity > t")
        k, iv = self.strikes, self.ivs
        if k.ndim != 1 or k.size < 4:
            raise ValueError("SmileSlice needs at least 4 strikes")
        if iv.shape != k.shape:
            raise ValueError("strikes and ivs must have matching shapes")
        if self.iv_stderrs is not None and self.iv_stderrs.shape != k.shape:
            raise ValueError("iv_stderrs shape must match strikes")
        if self.iv_cov is not None and self.iv_cov.shape != (k.size, k.size):
            raise ValueError("iv_cov must be square with one row per strike")
        if not np.all(np.diff(k) > 0.0):
            raise ValueError("strikes must be strictly increasing")
        if not (np.all(np.isfinite(iv)) and np.all(iv > 0.0)):
            raise ValueError("ivs must be finite and > 0")
        if not (k[0] <= self.log_spot <= k[-1]):
            raise ValueError("log_spot must lie inside the strike range")

    @property
    def tau(self) -> float:
        """Time to expiry in years."""
        return self.maturity - self.t

    def to_tsv(self) -> str:
        """Serialize as ``k<TAB>iv<TAB>stderr`` lines with a small header."""
        buf = io.StringIO()
        buf.write(
            f"# t={float(self.t)!r}\tmaturity={float(self.maturity)!r}"
            f"\tlog_spot={float(self.log_spot)!r}\n"
        )
        buf.write("# k\tiv\tstderr\n")
        se = self.iv_stderrs if self.iv_stderrs is not None else np.full(self.strikes.shape, np.nan)
        for k, iv, s in zip(self.strikes, self.ivs, se):
            buf.write(f"{float(k)!r}\t{float(iv)!r}\t{float(s)!r}\n")
        return buf.getvalue()

    @classmethod
    def from_tsv(cls, text: str) -> "SmileSlice":
        """Inverse of :meth:`to_tsv`; round trips exactly (floats via repr)."""
        meta = {}
        rows = []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for part in line[1:].split("\t"):
                    if "=" in part:
                        key, val = part.split("=", 1)
                        meta[key.strip()] = float(val)
                continue
            rows.append([float(v) for v in line.split("\t")])
        data = np.asarray(rows, dtype=float)
        se = data[:, 2]
        return cls(
            t=meta["t"],
            maturity=meta["maturity"],
            log_spot=meta["log_spot"],
            strikes=data[:, 0],
            ivs=data[:, 1],
            iv_stderrs=None if np.all(np.isnan(se)) else se,
        )


class SmileInterpolant:
    """Monotone piecewise-cubic interpolation of a smile in (k, iv).

    Exact at the nodes; between neighboring nodes the value stays inside
    the interval spanned by those node values (no overshoot), and the
    curve is C^1 with an analytic derivative.
    """

    def __init__(self, slc: SmileSlice):
        self.slice = slc
        self._pchip = PchipInterpolator(slc.strikes, slc.ivs, extrapolate=False)
        self._deriv = self._pchip.derivative()

    @property
    def domain(self) -> tuple[float, float]:
        k = self.slice.strikes
        return float(k[0]), float(k[-1])

    def _check_domain(self, k):
        lo, hi = self.domain
        k = np.asarray(k, dtype=float)
        if np.any(k < lo) or np.any(k > hi):
            raise OutOfDomain(
                f"strike {float(np.min(k)):.6g}..{float(np.max(k)):.6g} outside "
                f"smile domain [{lo:.6g}, {hi:.6g}]; widen the strike grid"
            )
        return k

    def iv_at(self, k):
        """Implied vol at log strike ``k`` (scalar or array)."""
        k = self._check_domain(k)
        out = self._pchip(k)
        return float(out) if out.ndim == 0 else out

    def stderr_at(self, k):
        """Linearly interpolated stderr band; zeros if the slice has none."""
        k = self._check_domain(k)
        if self.slice.iv_stderrs is None:
            out = np.zeros_like(k)
        else:
            out = np.interp(k, self.slice.strikes, self.slice.iv_stderrs)
        return float(out) if np.ndim(out) == 0 else out

    def skew_at(self, k):
        """dI/dk at log strike ``k`` (analytic derivative of the cubic)."""
        k = self._check_domain(k)
        out = self._deriv(k)
        return float(out) if out.ndim == 0 else out

    def atm_iv(self) -> float:
        """Implied vol at the log spot."""
        return float(self._pchip(self.slice.log_spot))

    def atm_skew(self) -> float:
        """dI/dk at the log spot."""
        return float(self._deriv(self.slice.log_spot))

    def _linear_weights(self, k: float) -> np.ndarray:
        """Weights of the bracketing nodes under linear interpolation."""
        grid = self.slice.strikes
        a = np.zeros(grid.size)
        j = int(np.searchsorted(grid, k, side="right")) - 1
        j = min(max(j, 0), grid.size - 2)
        w = (k - grid[j]) / (grid[j + 1] - grid[j])
        a[j] = 1.0 - w
        a[j + 1] = w
        return a

    def diff_stderr(self, k_a, k_b) -> float:
        """Standard error of ``iv_at(k_a) - iv_at(k_b)``.

        Uses the cross-strike iv covariance when the slice carries one:
        two points on a smile estimated from shared paths move almost in
        lockstep, so the difference is far more precise than the two
        pointwise errors suggest.  Falls back to the independence bound
        ``hypot(stderr(k_a), stderr(k_b))`` when no covariance is stored.
        Node weights come from linear interpolation, matching
        :meth:`stderr_at`.
        """
        k_a = float(self._check_domain(k_a))
        k_b = float(self._check_domain(k_b))
        cov = self.slice.iv_cov
        if cov is None:
            return float(np.hypot(self.stderr_at(k_a), self.stderr_at(k_b)))
        d = self._linear_weights(k_a) - self._linear_weights(k_b)
        return math.sqrt(max(float(d @ cov @ d), 0.0))


def build_slice(
    strikes,
    prices,
    price_stderrs=None,
    *,
    log_spot: float,
    t: float = 0.0,
    maturity: float,
    price_cov=None,
    price_floor_frac: float = 1e-12,
) -> SmileSlice:
    """Invert call prices into a :class:`SmileSlice`.

    Strikes whose price falls below ``price_floor_frac * spot`` or outside
    the static no-arbitrage bounds cannot be inverted; they are dropped
    with a warning rather than silently.  Standard errors propagate by the
    delta method: ``stderr_iv = stderr_price / vega``; a full price
    covariance (from a shared-path estimator) propagates the same way to
    an iv covariance.

    Parameters
    ----------
    strikes, prices : array_like
        Log strikes (increasing) and call prices.
    price_stderrs : array_like or None
        Monte Carlo price standard errors; omitted -> no iv stderrs.
    log_spot, t, maturity : float
        Quote coordinates; ``maturity - t`` is the time to expiry.
    price_cov : array_like or None
        Covariance matrix of the price estimates across strikes.

    Returns
    -------
    SmileSlice
    """
    strikes = np.asarray(strikes, dtype=float)
    prices = np.asarray(prices, dtype=float)
    tau = maturity - t
    if tau <= 0.0:
        raise ValueError("build_slice requires maturity > t")
    spot = np.exp(log_spot)
    intrinsic = np.maximum(spot - np.exp(strikes), 0.0)
    keep = (prices > price_floor_frac * spot) & (prices > intrinsic) & (prices < spot)
    if not np.all(keep):
        dropped = strikes[~keep]
        warnings.warn(
            f"dropping {dropped.size} uninvertible strike(s) "
            f"(price at/below floor or bounds): k={np.array2string(dropped, precision=4)}",
            stacklevel=2,
        )
    if keep.sum() < 4:
        raise PriceOutOfBounds(
            "fewer than 4 invertible strikes remain; widen the grid or add paths",
            strikes=strikes[~keep],
            prices=prices[~keep],
        )
    kk = strikes[keep]
    ivs = bs.implied_vol(log_spot, kk, tau, prices[keep])
    stderrs = None
    iv_cov = None
    if price_stderrs is not None or price_cov is not None:
        vegas = bs.vega(bs.BsPoint(log_spot, kk, tau, ivs))
        if price_stderrs is not None:
            price_stderrs = np.asarray(price_stderrs, dtype=float)
            stderrs = price_stderrs[keep] / vegas
        if price_cov is not None:
            price_cov = np.asarray(price_cov, dtype=float)
            iv_cov = price_cov[np.ix_(keep, keep)] / np.outer(vegas, vegas)
    return SmileSlice(
        t=t,
        maturity=maturity,
        log_spot=log_spot,
        strikes=kk,
        ivs=ivs,
        iv_stderrs=stderrs,
        iv_cov=iv_cov,
    )
