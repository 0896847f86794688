"""Exception types raised across the package."""


class WSplineError(Exception):
    """Base class for all package errors."""


class AllZero(WSplineError, ValueError):
    pass


class NegativeMass(WSplineError, ValueError):
    pass


class DegenerateRaster(WSplineError, ValueError):
    pass


class TooLarge(WSplineError, ValueError):
    pass


class NotSPD(WSplineError, ValueError):
    pass


class InfeasibleConstraint(WSplineError, ValueError):
    pass


class BackendMismatch(WSplineError, TypeError):
    pass


class SingularSystem(WSplineError, ArithmeticError):
    pass


class ConstraintViolated(WSplineError, ValueError):
    def __init__(self, index, message=None):
        self.index = index
        super().__init__(message or f"constraint violated at frame {index}")


class NoConvergence(WSplineError, RuntimeError):
    """Iterative solver hit ``max_iter``; ``state`` holds the last iterate."""

    def __init__(self, max_iter, state=None, message=None):
        self.max_iter = max_iter
        self.state = state
        super().__init__(message or f"no convergence after {max_iter} iterations")


class EpsTooSmall(WSplineError, FloatingPointError):
    pass


class NotConverged(WSplineError, ValueError):
    pass


class NoProgress(WSplineError, RuntimeError):
    def __init__(self, message, trace=None):
        self.trace = trace
        super().__init__(message)


class ConfigError(WSplineError, ValueError):
    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")
