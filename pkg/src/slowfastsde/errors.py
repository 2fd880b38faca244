"""Exception types shared across the toolkit."""

import numpy as np


class Error(Exception):
    """Base class for toolkit errors."""

    pass


class GridAlignmentError(Error, ValueError):
    """A requested time is not a grid point of the active step size.

    Raised when a shift, horizon, or section time fails the alignment check
    |t/dt - round(t/dt)| <= 1e-9 * max(1, |t/dt|).
    """

    pass


class NumericalBlowupError(Error, RuntimeError):
    """A simulated state left the sanity region (|y| > threshold or non-finite).

    Carries the first offending time and state so the caller can report where
    the integration died rather than silently producing inf/nan downstream.
    """

    def __init__(self, t, state, threshold):
        self.t = float(t)
        self.state = np.asarray(state)
        self.threshold = float(threshold)
        super().__init__(
            "state magnitude exceeded %.3g at t=%.6g (max component %.3g)"
            % (threshold, t, float(np.max(np.abs(self.state))))
        )


class ConvergenceError(Error, RuntimeError):
    """An iterative procedure failed to reach its tolerance within budget."""

    pass


class ExtrapolationError(Error, ValueError):
    """A tabulated function was evaluated outside its grid."""

    pass


class ConfigError(Error, ValueError):
    """An experiment configuration failed validation.

    The message names the offending field (dotted path into the TOML table).
    """

    pass
