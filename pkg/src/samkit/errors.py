"""Exception types shared across samkit."""


class ConfigurationError(ValueError):
    """Invalid setup: bad shapes, out-of-range hyperparameters, malformed files."""


class NumericError(ArithmeticError):
    """A forward/backward pass or an optimizer step produced NaN or Inf."""


class UsageError(RuntimeError):
    """API misuse, e.g. running backward twice on the same computation record."""


class InsufficientDataError(ValueError):
    """Too few samples for the requested statistic."""


class DegenerateGradient(RuntimeError):
    """Gradient norm is numerically zero; a perturbation direction is undefined.

    Internal control-flow signal: the optimizer catches it and falls back to a
    plain descent step for that iteration.
    """
