"""Skew/covariance experiments on simulated smiles.

The central object is the :class:`SkewReport` for one ``(params, T)``
cell: the smile difference between the two zero-vanna strikes, the
simulated spot/vol product moment it approximates, both normalized by
``T^{H+1/2}``, and the ATM level/skew read off the interpolated smile.
Reports across maturities feed the Hurst estimator and the scaling
regressions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientData, UndefinedEstimate
from .pricer import (
    ConditionalPriceAccumulator,
    Estimate,
    PlainPriceAccumulator,
    default_strike_grid,
)
from .rbergomi import PathBatch, RBergomiParams, TimeGrid, iter_path_batches
from .smile import SmileInterpolant, build_slice
from .strikes import zero_vanna_pair

__all__ = [
    "SkewReport",
    "HurstEstimate",
    "RateCheck",
    "covariance_estimate",
    "skew_report",
    "hurst_estimate",
    "convergence_rate_check",
]


class _ProductMomentAccumulator:
    """Streaming mean/stderr of ``(S_T/S0 - 1) * v`` over path batches."""

    def __init__(self, s0: float, mean_subtract: bool = False):
        self.s0 = s0
        self.mean_subtract = mean_subtract
        self.n = 0
        self.mean = 0.0
        self.m2 = 0.0
        self._sum_ret = 0.0
        self._sum_v = 0.0

    def update(self, batch: PathBatch):
        ret = batch.s_terminal / self.s0 - 1.0
        prod = ret * batch.realized_vol
        b = prod.size
        bmean = float(prod.mean())
        bm2 = float(((prod - bmean) ** 2).sum())
        if self.n == 0:
            self.n, self.mean, self.m2 = b, bmean, bm2
        else:
            delta = bmean - self.mean
            tot = self.n + b
            self.mean += delta * (b / tot)
            self.m2 += bm2 + delta**2 * (self.n * b / tot)
            self.n = tot
        self._sum_ret += float(ret.sum())
        self._sum_v += float(batch.realized_vol.sum())

    def estimate(self) -> Estimate:
        if self.n < 2:
            raise ValueError("need at least 2 paths")
        value = self.mean
        if self.mean_subtract:
            # covariance form: subtract the product of the sample means
            value -= (self._sum_ret / self.n) * (self._sum_v / self.n)
        return Estimate(value=value, stderr=math.sqrt(self.m2 / (self.n - 1) / self.n), n=self.n)


def covariance_estimate(paths, s0: float | None = None, *, mean_subtract: bool = False) -> Estimate:
    """Sample mean of ``(S_T/S0 - 1) * v`` with its standard error.

    This is the raw product expectation; since ``S_t`` is a martingale
    the mean of the return is zero in expectation, so the product mean
    estimates the covariance.  ``mean_subtract=True`` switches to the
    explicitly centered covariance estimator.
    """
    batches = [paths] if isinstance(paths, PathBatch) else list(paths)
    if s0 is None:
        s0 = batches[0].params.s0
    acc = _ProductMomentAccumulator(s0, mean_subtract)
    for b in batches:
        acc.update(b)
    return acc.estimate()


@dataclass(frozen=True)
class SkewReport:
    """Everything measured on one ``(params, maturity)`` cell.

    ``ratio_skew`` and ``ratio_cov`` are the smile difference and the
    product moment divided by ``T^{H+1/2}``; ``slope_atm`` is
    ``atm_iv^2 * T * atm_skew`` and ``slope_spot`` the same with the spot
    variance ``sigma0^2`` in place of ``atm_iv^2``.
    """

    params: RBergomiParams
    maturity: float
    n_paths: int
    seed: int
    n_steps: int
    pricing: str
    k_minus: float
    k_plus: float
    iv_minus: float
    iv_minus_stderr: float
    iv_plus: float
    iv_plus_stderr: float
    skew_diff: Estimate
    covariance: Estimate
    ratio_skew: float
    ratio_skew_stderr: float
    ratio_cov: float
    ratio_cov_stderr: float
    atm_iv: float
    atm_skew: float
    slope_atm: float
    slope_spot: float

    @property
    def hurst(self) -> float:
        return self.params.hurst


def skew_report(
    params: RBergomiParams,
    maturity: float,
    *,
    n_paths: int,
    seed: int,
    pricing: str = "conditional",
    backend: str = "wdriven",
    grid: TimeGrid | None = None,
    n_strikes: int = 41,
    width_sds: float = 4.0,
    batch_size: int | None = None,
) -> SkewReport:
    """Simulate one cell and measure smile difference vs product moment.

    A single path stream feeds both the per-strike price accumulator and
    the product-moment accumulator, so the two sides of the comparison
    share their Monte Carlo noise.
    """
    if grid is None:
        grid = TimeGrid.default(maturity)
    strikes = default_strike_grid(params, maturity, n_strikes, width_sds)
    if pricing == "conditional":
        price_acc = ConditionalPriceAccumulator(strikes, maturity, params)
    elif pricing == "plain":
        price_acc = PlainPriceAccumulator(strikes, maturity)
    else:
        raise ValueError(f"unknown pricing {pricing!r}")
    cov_acc = _ProductMomentAccumulator(params.s0)
    for batch in iter_path_batches(params, grid, n_paths, seed,
                                   backend=backend, batch_size=batch_size):
        price_acc.update(batch)
        cov_acc.update(batch)
    pg = price_acc.result()
    slc = build_slice(pg.strikes, pg.values, pg.stderrs,
                      log_spot=math.log(params.s0), t=0.0, maturity=maturity,
                      price_cov=pg.covariance)
    interp = SmileInterpolant(slc)
    pair = zero_vanna_pair(interp)
    # the two leg ivs come from the same paths; use the cross-strike
    # covariance rather than the independence bound for their difference
    sd = Estimate(
        value=pair.plus.iv - pair.minus.iv,
        stderr=interp.diff_stderr(pair.plus.k, pair.minus.k),
        n=pg.n,
    )
    cov = cov_acc.estimate()
    norm = maturity ** (params.hurst + 0.5)
    atm_iv = interp.atm_iv()
    atm_skew = interp.atm_skew()
    return SkewReport(
        params=params,
        maturity=maturity,
        n_paths=n_paths,
        seed=seed,
        n_steps=grid.n_steps,
        pricing=pricing,
        k_minus=pair.minus.k,
        k_plus=pair.plus.k,
        iv_minus=pair.minus.iv,
        iv_minus_stderr=pair.minus.stderr or 0.0,
        iv_plus=pair.plus.iv,
        iv_plus_stderr=pair.plus.stderr or 0.0,
        skew_diff=sd,
        covariance=cov,
        ratio_skew=sd.value / norm,
        ratio_skew_stderr=sd.stderr / norm,
        ratio_cov=cov.value / norm,
        ratio_cov_stderr=cov.stderr / norm,
        atm_iv=atm_iv,
        atm_skew=atm_skew,
        slope_atm=atm_iv**2 * maturity * atm_skew,
        slope_spot=params.sigma0**2 * maturity * atm_skew,
    )


@dataclass(frozen=True)
class HurstEstimate:
    """Roughness recovered from two maturities of one smile surface."""

    value: float
    t1: float
    t2: float
    diff1: float
    diff2: float
    atm_iv1: float
    atm_iv2: float


def hurst_estimate(report1: SkewReport, report2: SkewReport) -> HurstEstimate:
    """Recover H from smile differences at two maturities.

    Uses the scaling of the zero-vanna smile difference::

        H = -1/2 + ln( (D1/D2) * (I2*^2 / I1*^2) ) / ln(T1/T2)

    with ``Di = I(k+) - I(k-)`` at maturity ``Ti`` and ``Ii*`` the
    corresponding ATM vols.  The two maturities must differ, and each
    smile difference must be resolved (|D| > 2 stderr) with matching
    signs, otherwise the estimator is undefined.
    """
    t1, t2 = report1.maturity, report2.maturity
    if t1 == t2:
        raise UndefinedEstimate("the two reports share the same maturity")
    d1, d2 = report1.skew_diff, report2.skew_diff
    for label, d in (("first", d1), ("second", d2)):
        if d.value == 0.0 or abs(d.value) < 2.0 * d.stderr:
            raise UndefinedEstimate(
                f"smile difference of the {label} maturity is not resolved: "
                f"{d.value:.3e} +- {d.stderr:.3e}"
            )
    if d1.value * d2.value < 0.0:
        raise UndefinedEstimate("smile differences have opposite signs")
    i1, i2 = report1.atm_iv, report2.atm_iv
    val = -0.5 + math.log((d1.value / d2.value) * (i2**2 / i1**2)) / math.log(t1 / t2)
    return HurstEstimate(value=val, t1=t1, t2=t2, diff1=d1.value, diff2=d2.value,
                         atm_iv1=i1, atm_iv2=i2)


@dataclass(frozen=True)
class RateCheck:
    """Log-log regression slopes across a maturity ladder."""

    atm_skew_slope: float
    error_slope: float
    n_points: int
    decades: float


def convergence_rate_check(reports: list[SkewReport]) -> RateCheck:
    """Fit power laws to the ATM skew and the approximation error.

    Requires at least 4 maturities spanning at least 1.5 decades.  The
    ATM skew of a rough smile decays like ``T^{H-1/2}``; the difference
    between the smile-based and simulated covariances shrinks at a
    model-dependent faster rate.

    Raises
    ------
    InsufficientData
        Fewer than 4 reports, or too narrow a maturity span.
    """
    if len(reports) < 4:
        raise InsufficientData(f"need >= 4 maturities, got {len(reports)}")
    reports = sorted(reports, key=lambda r: r.maturity)
    t = np.array([r.maturity for r in reports])
    decades = math.log10(t[-1] / t[0])
    if decades < 1.5:
        raise InsufficientData(f"maturity span {decades:.2f} decades < 1.5")
    skews = np.array([abs(r.atm_skew) for r in reports])
    if np.any(skews <= 0.0):
        raise InsufficientData("vanishing ATM skew in the ladder")
    atm_slope = float(np.polyfit(np.log(t), np.log(skews), 1)[0])
    errs = np.array([abs(r.skew_diff.value - r.covariance.value) for r in reports])
    if np.any(errs <= 0.0):
        raise InsufficientData("exactly zero approximation error in the ladder")
    err_slope = float(np.polyfit(np.log(t), np.log(errs), 1)[0])
    return RateCheck(atm_skew_slope=atm_slope, error_slope=err_slope,
                     n_points=len(reports), decades=float(decades))
