"""Exception types shared across the package."""


class FpsensError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(FpsensError, ValueError):
    """Malformed numeric input: bad shape, asymmetry, non-finite data, out-of-range scalar."""


class EllipticityError(FpsensError):
    """A diffusion matrix (or declared floor) is not positive definite."""

    def __init__(self, eigenvalue, message=None):
        self.eigenvalue = float(eigenvalue)
        if message is None:
            message = f"matrix has non-positive eigenvalue {self.eigenvalue:.6g}"
        super().__init__(message)


class ConvexityError(FpsensError, ValueError):
    """A convexity modulus that must be positive is not."""


class OrderRangeError(FpsensError, ValueError):
    """Moment / transport order outside the supported range."""


class ModelEvaluationError(FpsensError):
    """A model callback returned non-finite or mis-shaped output."""


class SimulationDivergedError(FpsensError):
    """A trajectory left the admissible region during time stepping."""

    def __init__(self, trajectory, step, message=None):
        self.trajectory = int(trajectory)
        self.step = int(step)
        if message is None:
            message = f"trajectory {self.trajectory} diverged at step {self.step}"
        super().__init__(message)


class SizeMismatchError(FpsensError, ValueError):
    """Operands (point clouds, parameter vectors) have incompatible sizes."""


class CapacityError(FpsensError):
    """Problem size exceeds a configured solver cap; subsample or raise the cap."""


class UnsupportedCaseError(FpsensError):
    """No closed form or solver exists for the requested case."""


class QuadratureError(FpsensError):
    """Numerical integration did not reach the requested accuracy."""


class CloudParseError(FpsensError, ValueError):
    """A point-cloud file could not be parsed; carries the offending row."""

    def __init__(self, row, message):
        self.row = int(row)
        super().__init__(f"row {self.row}: {message}")


class ConfigError(FpsensError, ValueError):
    """Experiment configuration is invalid."""


class ExperimentStageError(FpsensError):
    """An experiment stage failed; names the stage and chains the cause."""

    def __init__(self, stage, cause):
        self.stage = str(stage)
        self.cause = cause
        super().__init__(f"stage '{self.stage}' failed: {cause}")
