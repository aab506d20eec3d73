"""Exception types shared across the package.

The command line maps these onto exit codes: configuration problems exit
with 2, numerical aborts (integrator failures, diverged trajectories,
failed collapse runs) exit with 3.
"""


class ConfigError(ValueError):
    """A run configuration is malformed or inconsistent."""


class IntegratorError(RuntimeError):
    """The density-matrix integrator left its validity envelope.

    Raised when the pre-normalization trace drifts by more than 0.1 or
    the state develops a negative eigenvalue beyond tolerance.  Carries
    the step index at which the run was abandoned.
    """

    def __init__(self, message: str, step: int | None = None, time: float | None = None):
        super().__init__(message)
        self.step = step
        self.time = time


class DivergenceError(RuntimeError):
    """A moment trajectory crossed the divergence guard (|moment| > 10).

    Signals unstable gains or too coarse a time step.  Carries the step
    index and trajectory index of the first crossing.
    """

    def __init__(self, message: str, step: int | None = None, time: float | None = None,
                 trajectory: int | None = None):
        super().__init__(message)
        self.step = step
        self.time = time
        self.trajectory = trajectory


class CollapseError(RuntimeError):
    """A collapse-statistics run left too many trajectories unresolved."""

    def __init__(self, message: str, uncollapsed_fraction: float | None = None):
        super().__init__(message)
        self.uncollapsed_fraction = uncollapsed_fraction
