"""Exception types shared across the package."""


class RoughSkewError(Exception):
    """Base class for all errors raised by this package."""


class PriceOutOfBounds(RoughSkewError):
    """A call price violates its static no-arbitrage bounds.

    For a call quoted in log-spot ``x`` the admissible range is
    ``max(e^x - e^k, 0) < price < e^x``.
    """

    def __init__(self, message, *, strikes=None, prices=None):
        super().__init__(message)
        self.strikes = strikes
        self.prices = prices


class NoConvergence(RoughSkewError):
    """An iterative solver exhausted its iteration budget.

    Carries the best iterate and residual reached so callers can decide
    whether the partial answer is still usable.
    """

    def __init__(self, message, *, best=None, residual=None, iterations=None):
        super().__init__(message)
        self.best = best
        self.residual = residual
        self.iterations = iterations


class OutOfDomain(RoughSkewError):
    """A query point lies outside the range covered by an interpolant."""


class NotPSD(RoughSkewError):
    """A covariance matrix failed Cholesky even after jitter escalation."""

    def __init__(self, message, *, min_eigenvalue=None, jitter_tried=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue
        self.jitter_tried = jitter_tried


class BackendMismatch(RoughSkewError):
    """A path batch lacks data required by the requested estimator."""


class UndefinedEstimate(RoughSkewError):
    """An estimator's preconditions fail (wrong sign or drowned in noise)."""


class InsufficientData(RoughSkewError):
    """Not enough points, or not enough spread, for a regression."""


class DegenerateModel(RoughSkewError):
    """Parameters degenerate to a model for which the request is meaningless."""


class ConfigError(RoughSkewError):
    """Invalid experiment configuration; ``field`` names the offender."""

    def __init__(self, message, *, field=None):
        super().__init__(message)
        self.field = field
