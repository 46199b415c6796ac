"""Exception hierarchy shared across the package."""


class GpMpcError(Exception):
    """Base class for all package errors."""


class DimensionError(GpMpcError, ValueError):
    """Input dimensions do not agree."""


class FitError(GpMpcError):
    """Covariance matrix could not be factorized, even after jitter.

    Attributes
    ----------
    jitter : float
        Last jitter value that was attempted (0.0 if none).
    """

    def __init__(self, message: str, jitter: float = 0.0):
        super().__init__(f"{message} (last jitter {jitter:.3e})")
        self.jitter = jitter


class OptimizationError(GpMpcError):
    """Every restart of an optimizer failed."""


class ConsistencyError(GpMpcError):
    """A numerical quantity violated an internal invariant by more than round-off."""


class SingularError(GpMpcError, ValueError):
    """A matrix that must be invertible is singular."""


class PropagationError(GpMpcError):
    """A belief rollout failed at a given step.

    Attributes
    ----------
    step : int
        Index of the propagation step that failed.
    """

    def __init__(self, message: str, step: int):
        super().__init__(f"step {step}: {message}")
        self.step = step


class FblValidityError(GpMpcError):
    """Feedback-linearizing transform is singular at the current state."""


class InfeasibleError(GpMpcError):
    """Quadratic program has no feasible point."""


class InsufficientDataError(GpMpcError, ValueError):
    """Not enough samples to build a dataset or fit a model."""


class ConfigError(GpMpcError):
    """Scenario configuration is invalid.

    Attributes
    ----------
    errors : list of str
        Every problem found, each prefixed by its field location.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class ScenarioFailure(GpMpcError):
    """Closed-loop run hit a hard failure (constraint violation, divergence)."""

    def __init__(self, message: str, step: int):
        super().__init__(f"step {step}: {message}")
        self.step = step


class SolverFailure(GpMpcError):
    """Numerical solver failed in a way the run cannot recover from."""
