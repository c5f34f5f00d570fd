from pricing.exceptions import HestonError


class CalibrationError(HestonError, RuntimeError):
    """A calibration run failed; ``iteration`` tells where."""

    def __init__(self, message, iteration=None):
        super().__init__(message if iteration is None else f"iteration {iteration}: {message}")
        self.iteration = iteration


class LineSearchError(CalibrationError):
    """No admissible step above the minimum step size."""
