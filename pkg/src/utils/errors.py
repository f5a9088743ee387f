class ConfigError(ValueError):
    """Raised when a task config is missing a required key or holds an invalid value."""


class NumericalError(ArithmeticError):
    """Base class for numerical failures in kernels, solvers and training."""


class ShapeError(NumericalError):
    pass


class RankError(NumericalError):
    pass


class InconsistentSystemError(NumericalError):
    """The system A·V = Z has no solution (a dropped row kept a non-zero rhs)."""


class NotPositiveDefiniteError(NumericalError):
    pass


class SolverError(NumericalError):
    pass


class StepSizeError(NumericalError):
    pass


class DegenerateScatterError(NumericalError):
    pass


class DivergenceError(NumericalError):
    def __init__(self, epoch: int, loss: float) -> None:
        super().__init__(f"Training diverged! <epoch={epoch}, loss={loss}>")
        self.epoch = epoch
        self.loss = loss


class OsContractViolation(AssertionError):
    """Optimum shifting broke norm monotonicity or logit preservation."""


class DataFormatError(ValueError):
    def __init__(self, path: str, offset: int, message: str) -> None:
        super().__init__(f"{path}: {message} <offset={offset}>")
        self.path = path
        self.offset = offset
